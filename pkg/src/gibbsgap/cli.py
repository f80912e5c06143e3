"""Command-line driver.

    gibbsgap gap --model ising1d --beta 1.0 --sampler heatbath --sizes 3..6

Subcommands: gap, cluster, certify, detect, knabe, mix, decompose. Scans write
CSV, reports write JSON-lines; both start with a schema line. Exit codes: 0 ok,
1 invalid input, 2 numerical failure, 3 resource refusal.
"""

from __future__ import annotations

import argparse
import inspect
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence

from . import __version__
from .clustering import (local_indistinguishability, strong_clustering_constant, weak_clustering_scan,
                         separation)
from .condexp import certify as certify_expectation
from .condexp import locality_radius
from .lattice import Lattice, Region, decomposition_sequence, rectangle_class
from .models import GibbsEnsemble, build_model, builtin_models, from_config
from .opalg import random_density
from .reports import dumps_csv, dumps_jsonl, gnuplot_script
from .samplers import (DENSE_LIMIT, ResourceError, build_sampler, kms_residuals, local_expectation, mixing_curve,
                       verify_sampler)
from .spectral import (KernelMismatchError, NumericalError, conditional_gap, detectability, knabe_certificate,
                       knabe_threshold, spectral_gap)

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 1, 2, 3
GAP_COLUMNS = ["model", "sampler", "beta", "size", "region", "gap", "method", "residual", "seconds"]
BYTES_PER_ENTRY = 16
IMPLICIT_ONLY_QUBITS = 9


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    command: str
    model: str | None = None
    params: dict = field(default_factory=dict)
    model_table: dict | None = None
    sampler: str = "heatbath"
    density: str = "glauber"
    betas: list = field(default_factory=lambda: [1.0])
    sizes: list = field(default_factory=list)
    seed: int = 0
    threads: int = 1
    out: str | None = None
    force_dense: bool = False
    memory_budget: float = 2.0
    timing: bool = False
    options: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.betas:
            raise ConfigError("the beta grid is empty")
        if any(b < 0 for b in self.betas):
            raise ConfigError("beta must be non-negative")
        if self.sampler not in ("heatbath", "davies"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.model_table is None and self.model is None:
            raise ConfigError("give --model or --config")
        if self.model is not None and self.model not in builtin_models():
            raise ConfigError(f"unknown model {self.model!r}; available: {', '.join(sorted(builtin_models()))}")
        if self.sizes and self.model_table is not None and "terms" in self.model_table:
            raise ConfigError("--sizes cannot resize a lattice given term by term")
        if self.sizes and self.model is not None and "n" not in inspect.signature(builtin_models()[self.model]).parameters:
            raise ConfigError(f"model {self.model!r} has a fixed size; drop --sizes")
        if any(n < 1 for n in self.sizes):
            raise ConfigError("sizes must be positive")
        if self.threads < 1:
            raise ConfigError("thread count must be positive")

    def size_grid(self) -> list:
        return self.sizes or [None]

    def potential(self, size):
        if self.model_table is not None and "terms" in self.model_table:
            return from_config(self.model_table)
        params = dict(self.params)
        if size is not None:
            params["n"] = size
        return build_model(self.model, **params)


def parse_range(text: str, cast=int) -> list:
    """'3..6' -> [3, 4, 5, 6]; '0:1:0.25' -> [0, 0.25, 0.5, 0.75, 1]; '1,2,5' -> [1, 2, 5]."""
    text = str(text).strip()
    if not text:
        return []
    if ".." in text and cast is int:
        lo, hi = text.split("..")
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ConfigError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"bad grid {text!r}; expected start:stop:step")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [cast(round(start + i * step, 12)) for i in range(count)]
    return [cast(p) for p in text.split(",") if p.strip()]


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    table: dict = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                table = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    run = dict(table.get("run", {}))
    cfg = ExperimentConfig(command=args.command)
    model_table = {k: v for k, v in table.items() if k != "run"}
    if model_table:
        if "terms" in model_table:
            cfg.model_table = model_table
        elif "model" in model_table:
            cfg.model = model_table["model"]
            cfg.params = dict(model_table.get("params", {}))
        else:
            raise ConfigError("config needs `model = ...` or [lattice] plus [[terms]]")
    if getattr(args, "model", None):
        cfg.model, cfg.model_table = args.model, None
    for item in getattr(args, "param", None) or []:
        if "=" not in item:
            raise ConfigError(f"bad --param {item!r}; expected key=value")
        key, value = item.split("=", 1)
        cfg.params[key.strip()] = _parse_value(value.strip())

    def pick(name, default):
        value = getattr(args, name, None)
        return value if value is not None else run.get(name, default)

    cfg.sampler = pick("sampler", cfg.sampler)
    cfg.density = pick("density", cfg.density)
    betas = pick("beta", None)
    if betas is not None:
        cfg.betas = parse_range(betas, float) if isinstance(betas, str) else \
            [float(b) for b in (betas if isinstance(betas, list) else [betas])]
    sizes = pick("sizes", None)
    if sizes is not None:
        cfg.sizes = parse_range(sizes) if isinstance(sizes, str) else [int(s) for s in sizes]
    cfg.seed = int(pick("seed", 0))
    env_threads = os.environ.get("GIBBSGAP_THREADS")
    cfg.threads = int(env_threads) if env_threads else int(pick("threads", 1))
    cfg.out = pick("out", None)
    cfg.force_dense = bool(getattr(args, "force_dense", False) or run.get("force_dense", False))
    cfg.memory_budget = float(pick("memory_budget", 2.0))
    cfg.timing = bool(getattr(args, "timing", False))
    cfg.validate()
    return cfg


# --------------------------------------------------------------- resources

def _qubits(cfg: ExperimentConfig, size) -> tuple[int, int]:
    pot = cfg.potential(size)
    return pot.lattice.n_sites, pot.full_space().dim


DENSE_ONLY = {"detect": "dense products of projectors", "conditional": "dense pencil on the whole lattice"}


def estimate_resources(cfg: ExperimentConfig) -> dict:
    """Predict dense or implicit mode, memory and number of eigensolves per grid point."""
    budget = cfg.memory_budget * 2 ** 30
    points = []
    refusal = None
    kind = cfg.options.get("kind", "spectral")
    for size in cfg.size_grid():
        n, D = _qubits(cfg, size)
        D2 = D * D
        dense_bytes = D2 * D2 * BYTES_PER_ENTRY
        needs_dense = cfg.command == "detect" or (cfg.command == "gap" and kind == "conditional"
                                                   and cfg.options.get("where") == "global")
        mode = "dense" if D2 < DENSE_LIMIT else "implicit"
        if cfg.force_dense or needs_dense:
            mode = "dense"
        eigensolves = 1
        if cfg.command == "gap":
            eigensolves = 2 if kind == "conditional" else 1 + cfg.options.get("rayleigh", 20)
        elif cfg.command in ("knabe",):
            eigensolves = n + 1
        point = {"size": size, "sites": n, "hilbert_dim": D, "doubled_dim": D2, "mode": mode,
                 "dense_entries": D2 * D2, "dense_bytes": dense_bytes if mode == "dense" else None,
                 "implicit_vector_bytes": D2 * BYTES_PER_ENTRY, "eigensolves": eigensolves * len(cfg.betas)}
        points.append(point)
        if mode == "dense" and (dense_bytes > budget or n >= IMPLICIT_ONLY_QUBITS) and refusal is None:
            reason = "needs dense matrices" if needs_dense else "dense mode was forced"
            refusal = (f"{n} sites: {reason} of {dense_bytes / 2 ** 30:.1f} GiB, over the "
                       f"{cfg.memory_budget:g} GiB budget" +
                       ("" if needs_dense else "; drop --force-dense to use the implicit (matrix-free) mode"))
    return {"command": cfg.command, "points": points, "memory_budget_bytes": int(budget), "refusal": refusal}


# --------------------------------------------------------------- execution

def _ordered_map(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sampler(cfg: ExperimentConfig, size, beta):
    ens = GibbsEnsemble(cfg.potential(size), beta)
    opts = {"density": cfg.density} if cfg.sampler == "davies" else {}
    return build_sampler(ens, cfg.sampler, **opts)


def _grid(cfg):
    return [(size, beta) for size in cfg.size_grid() for beta in cfg.betas]


def _seconds(cfg, t0):
    return time.perf_counter() - t0 if cfg.timing else None


def _region_from_text(lattice: Lattice, text: str | None, default) -> Region:
    if text is None:
        return default
    sites = parse_range(text) if ".." in text or "," in text else [int(text)]
    for s in sites:
        if not 0 <= s < lattice.n_sites:
            raise ConfigError(f"site {s} is outside the lattice")
    return Region(lattice, sites)


def run_gap(cfg: ExperimentConfig) -> tuple[str, str]:
    kind = cfg.options.get("kind", "spectral")

    def point(item):
        size, beta = item
        t0 = time.perf_counter()
        s = _sampler(cfg, size, beta)
        lat = s.lattice
        if kind == "spectral":
            method = "dense" if cfg.force_dense else "auto"
            rep = spectral_gap(s, method=method, rayleigh_starts=cfg.options.get("rayleigh", 20), seed=cfg.seed)
            residual = rep.residuals["eigen"]
        else:
            mid = lat.n_sites // 2
            default = Region(lat, [max(mid - 1, 0), mid]) if lat.n_sites > 1 else lat.all()
            A = _region_from_text(lat, cfg.options.get("region"), default)
            rep = conditional_gap(s, A, where=cfg.options.get("where", "patch"))
            residual = rep.residuals["pencil"]
        return {"model": rep.model, "sampler": rep.sampler, "beta": beta, "size": lat.n_sites,
                "region": rep.region, "gap": rep.gap, "method": rep.method, "residual": residual,
                "seconds": _seconds(cfg, t0)}

    rows = _ordered_map(point, _grid(cfg), cfg.threads)
    return dumps_csv(GAP_COLUMNS, rows, "gap"), "csv"


CLUSTER_COLUMNS = ["model", "beta", "size", "notion", "distance", "value", "norm", "ekind", "seconds"]


def run_cluster(cfg: ExperimentConfig) -> tuple[str, str]:
    notion = cfg.options.get("notion", "weak")
    ekind = cfg.options.get("ekind") or "minimal"

    def point(item):
        size, beta = item
        t0 = time.perf_counter()
        ens = GibbsEnsemble(cfg.potential(size), beta)
        lat = ens.lattice
        n = lat.n_sites
        base = {"model": ens.potential.name, "beta": beta, "size": n, "notion": notion}
        rows = []
        if notion == "weak":
            rep = weak_clustering_scan(ens)
            for p in rep.points:
                rows.append(dict(base, distance=p["distance"], value=p["value"], norm="L2(rho) x L2(rho)", ekind=""))
            for p in rep.extra["cov0_points"]:
                rows.append(dict(base, notion="weak-0", distance=p["distance"], value=p["value"],
                                 norm="L2^0(rho) x L2^0(rho)", ekind=""))
        elif notion == "strong":
            if lat.dims != 1:
                raise ConfigError("strong-clustering overlap scans are generated for chains only")
            for overlap in range(1, n - 1):
                a = (n + overlap) // 2
                A, B = Region(lat, range(0, a)), Region(lat, range(a - overlap, n))
                rep = strong_clustering_constant(ens, ekind, A, B)
                rows.append(dict(base, distance=separation(A, B), value=rep["value"], norm="L2(rho)^2", ekind=ekind))
        elif notion == "indist":
            if lat.dims != 1:
                raise ConfigError("local-indistinguishability scans are generated for chains only")
            B = Region(lat, [0])
            for j in range(1, n):
                A = Region(lat, range(0, n - j))
                if not B <= A:
                    continue
                rep = local_indistinguishability(ens, ekind, A, B, cfg.options.get("samples", 10), cfg.seed)
                rows.append(dict(base, distance=rep["distance"], value=rep["value"],
                                 norm="trace distance (lower bound)", ekind=ekind))
        else:
            raise ConfigError(f"unknown clustering notion {notion!r}")
        for r in rows:
            r["seconds"] = _seconds(cfg, t0)
        return rows

    rows = [r for block in _ordered_map(point, _grid(cfg), cfg.threads) for r in block]
    return dumps_csv(CLUSTER_COLUMNS, rows, f"cluster-{notion}"), "csv"


def _strip_arrays(obj):
    if isinstance(obj, dict):
        return {k: _strip_arrays(v) for k, v in obj.items() if not isinstance(v, np.ndarray)}
    if isinstance(obj, list):
        return [_strip_arrays(v) for v in obj]
    return obj


def run_certify(cfg: ExperimentConfig) -> tuple[str, str]:
    def point(item):
        size, beta = item
        s = _sampler(cfg, size, beta)
        ens, lat = s.ensemble, s.lattice
        records = []
        rep = verify_sampler(s, seed=cfg.seed)
        rep.update(record="sampler", size=lat.n_sites)
        records.append(rep)
        regions = [Region(lat, [k]) for k in range(min(lat.n_sites, 2))]
        if lat.n_sites >= 3:
            regions.append(Region(lat, [0, 1]))
        for ekind in ("minimal", cfg.sampler):
            for A in regions:
                try:
                    E = local_expectation(ens, ekind, A)
                    c = certify_expectation(E, seed=cfg.seed)
                except ResourceError as exc:
                    records.append({"record": "conditional_expectation", "kind": ekind, "region": A.to_json(),
                                    "skipped": str(exc), "pass": True})
                    continue
                if ekind == "minimal" and len(A) == 1:
                    c["locality_radius"] = locality_radius(E, seed=cfg.seed)
                c.update(record="conditional_expectation", beta=beta, size=lat.n_sites)
                records.append(c)
        if cfg.sampler == "davies":
            res = {s_: kms_residuals(s, s_) for s_ in (0.0, 0.25, 0.5, 0.75, 1.0)}
            worst = max(max(r.values()) for r in res.values())
            records.append({"record": "kms", "beta": beta, "size": lat.n_sites, "residuals": res,
                            "worst": worst, "pass": worst <= 1e-11})
        return records

    records = [r for block in _ordered_map(point, _grid(cfg), cfg.threads) for r in block]
    ok = all(r.get("pass", True) for r in records)
    return dumps_jsonl([_strip_arrays(r) for r in records], "certify"), "jsonl", ok


def run_detect(cfg: ExperimentConfig) -> tuple[str, str]:
    def point(item):
        size, beta = item
        rep = detectability(_sampler(cfg, size, beta), powers=cfg.options.get("powers", 10))
        rep.update({"size": size, "beta": beta, "pass": rep["slack"] >= -1e-9})
        return rep

    return dumps_jsonl(_ordered_map(point, _grid(cfg), cfg.threads), "detect"), "jsonl"


def run_knabe(cfg: ExperimentConfig) -> tuple[str, str]:
    window = cfg.options.get("window", 3)

    def point(item):
        size, beta = item
        rep = knabe_certificate(_sampler(cfg, size, beta), window)
        rep.update(size=size, beta=beta)
        return rep

    records = _ordered_map(point, _grid(cfg), cfg.threads)
    scan = cfg.options.get("threshold_scan")
    if scan:
        betas = parse_range(scan, float)
        for size in cfg.size_grid():
            rep = knabe_threshold(lambda b: _sampler(cfg, size, b), betas, window)
            rep.update(record="threshold", size=size)
            records.append(rep)
    return dumps_jsonl(records, "knabe"), "jsonl"


MIX_COLUMNS = ["model", "sampler", "beta", "size", "sample", "t", "distance", "bound", "gap"]


def run_mix(cfg: ExperimentConfig) -> tuple[str, str]:
    t_grid = parse_range(cfg.options.get("times", "0:10:1"), float)

    def point(item):
        size, beta = item
        s = _sampler(cfg, size, beta)
        rng = np.random.default_rng(cfg.seed)
        gap = spectral_gap(s, rayleigh_starts=0).gap
        D = s.full_space().dim
        rows = []
        for i in range(cfg.options.get("samples", 3)):
            curve = mixing_curve(s, random_density(D, rng), t_grid, gap)
            for t, d, b in zip(curve["t"], curve["distance"], curve["bound"]):
                rows.append({"model": s.potential.name, "sampler": s.kind, "beta": beta, "size": s.lattice.n_sites,
                             "sample": i, "t": t, "distance": d, "bound": b, "gap": gap})
        return rows

    rows = [r for block in _ordered_map(point, _grid(cfg), cfg.threads) for r in block]
    return dumps_csv(MIX_COLUMNS, rows, "mix"), "csv"


def run_decompose(args: argparse.Namespace) -> tuple[str, str]:
    try:
        shape = [int(x) for x in args.shape.lower().split("x")]
    except ValueError as exc:
        raise ConfigError(f"bad --shape {args.shape!r}; expected e.g. 12x8") from exc
    lat = Lattice(shape)
    C = lat.all()
    pairs = decomposition_sequence(C, k=args.k, n_pairs=args.pairs, overlap=args.overlap)
    record = {"shape": shape, "class": rectangle_class(shape),
              "pairs": [{"A": A.to_json(), "B": B.to_json(), "overlap": (A & B).to_json(),
                         "separation": separation(A, B)} for A, B in pairs]}
    return dumps_jsonl([record], "decompose"), "jsonl"


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbsgap", description="Spectral-gap numerics for commuting Gibbs samplers")
    parser.add_argument("--version", action="version", version=f"gibbsgap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sizes=True):
        p.add_argument("--model", help=f"builtin model: {', '.join(sorted(builtin_models()))}")
        p.add_argument("--config", help="TOML file with the model and optional [run] table")
        p.add_argument("--param", action="append", help="model parameter key=value (repeatable)")
        p.add_argument("--beta", help="inverse temperature, list '0.5,1' or grid '0:2:0.5'")
        p.add_argument("--sampler", choices=["heatbath", "davies"])
        p.add_argument("--density", choices=["glauber", "metropolis"], help="Davies spectral density")
        if sizes:
            p.add_argument("--sizes", help="system sizes, e.g. '3..6' or '4,6'")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--threads", type=int, help="worker threads (GIBBSGAP_THREADS overrides)")
        p.add_argument("--dry-run", action="store_true", help="print the resource estimate and exit")
        p.add_argument("--force-dense", action="store_true", help="densify even above the default threshold")
        p.add_argument("--memory-budget", type=float, help="GiB allowed for dense matrices (default 2)")
        p.add_argument("--timing", action="store_true", help="fill the seconds column (breaks byte-identity)")
        p.add_argument("--gnuplot-script", help="also write a gnuplot script for the CSV output")

    p = sub.add_parser("gap", help="spectral or conditional gaps over sizes and temperatures")
    common(p)
    p.add_argument("--kind", choices=["spectral", "conditional"], default="spectral")
    p.add_argument("--region", help="region for conditional gaps, e.g. '2..3'")
    p.add_argument("--where", choices=["patch", "global"], default="patch")
    p.add_argument("--rayleigh", type=int, default=20, help="random starts of the variational cross-check")

    p = sub.add_parser("cluster", help="weak/strong clustering and local indistinguishability scans")
    common(p)
    p.add_argument("--notion", choices=["weak", "strong", "indist"], default="weak")
    p.add_argument("--ekind", choices=["minimal", "iterated", "heatbath", "davies"])
    p.add_argument("--samples", type=int, default=10)

    p = sub.add_parser("certify", help="sampler and conditional-expectation property reports")
    common(p)

    p = sub.add_parser("detect", help="detectability bound and layer-product decay")
    common(p)
    p.add_argument("--powers", type=int, default=10)

    p = sub.add_parser("knabe", help="1D finite-size gap certificate")
    common(p)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--threshold-scan", help="beta grid start:stop:step for locating where the verdict flips")

    p = sub.add_parser("mix", help="trace-distance mixing curves against the gap bound")
    common(p)
    p.add_argument("--times", default="0:10:1", help="time grid start:stop:step")
    p.add_argument("--samples", type=int, default=3)

    p = sub.add_parser("decompose", help="overlapping-rectangle decomposition geometry")
    p.add_argument("--shape", required=True, help="rectangle side lengths, e.g. 12x8")
    p.add_argument("--k", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--out")
    return parser


RUNNERS = {"gap": run_gap, "cluster": run_cluster, "certify": run_certify, "detect": run_detect,
           "knabe": run_knabe, "mix": run_mix}
PLOT_AXES = {"gap": ("size", "gap", False), "cluster": ("distance", "value", True), "mix": ("t", "distance", True)}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "decompose":
            text, _ = run_decompose(args)
            _emit(text, args.out)
            return EXIT_OK
        cfg = load_config(args)
        cfg.options = {k: v for k, v in vars(args).items()
                       if k in ("kind", "region", "where", "rayleigh", "notion", "ekind", "samples", "powers",
                                "window", "threshold_scan", "times")}
        estimate = estimate_resources(cfg)
        if args.dry_run:
            _emit(dumps_jsonl([estimate], "resources"), cfg.out)
            return EXIT_RESOURCE if estimate["refusal"] else EXIT_OK
        if estimate["refusal"]:
            print(f"gibbsgap: refusing to run: {estimate['refusal']}", file=sys.stderr)
            return EXIT_RESOURCE
        result = RUNNERS[args.command](cfg)
        text, fmt = result[0], result[1]
        ok = result[2] if len(result) > 2 else True
        _emit(text, cfg.out)
        if args.gnuplot_script and fmt == "csv":
            x, y, logy = PLOT_AXES[args.command]
            columns = text.splitlines()[1].split(",")
            Path(args.gnuplot_script).write_text(gnuplot_script(cfg.out or "data.csv", x, y, columns,
                                                                f"gibbsgap {args.command}", logy))
        if not ok:
            print("gibbsgap: some certification checks failed", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    except ResourceError as exc:
        print(f"gibbsgap: refusing to run: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NumericalError, KernelMismatchError, ArpackNoConvergence, np.linalg.LinAlgError) as exc:
        print(f"gibbsgap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError) as exc:
        print(f"gibbsgap: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except MemoryError as exc:
        print(f"gibbsgap: out of memory: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
