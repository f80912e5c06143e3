"""Commuting local potentials, their Gibbs ensembles and a small model catalog."""

from __future__ import annotations

import itertools
import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .lattice import Lattice, Region, boundary, closure
from .opalg import FullRankState, Space, dagger, embed, kron_all

COMMUTATOR_TOL = 1e-11

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]], dtype=float),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.array([[1, 0], [0, -1]], dtype=float),
}

_PAULI_TOKEN = re.compile(r"^([IXYZ])(\d+)$")


def parse_pauli_string(text: str) -> list[tuple[str, int]]:
    """'Z0 Z1' -> [('Z', 0), ('Z', 1)]."""
    factors = []
    for token in text.replace("*", " ").split():
        m = _PAULI_TOKEN.match(token.strip().upper())
        if not m:
            raise ValueError(f"bad Pauli factor {token!r} in {text!r}; expected e.g. 'Z0 X3'")
        factors.append((m.group(1), int(m.group(2))))
    sites = [s for _, s in factors]
    if len(set(sites)) != len(sites):
        raise ValueError(f"Pauli string {text!r} repeats a site")
    if not factors:
        raise ValueError("empty Pauli string")
    return factors


def pauli_operator(factors: list[tuple[str, int]]) -> tuple[np.ndarray, tuple[int, ...]]:
    """Operator and sorted support of a Pauli product."""
    factors = sorted(factors, key=lambda f: f[1])
    op = kron_all([PAULI[p] for p, _ in factors])
    return op, tuple(s for _, s in factors)


class NonCommutingError(ValueError):
    def __init__(self, report):
        self.report = report
        pairs = ", ".join(f"({i},{j}): {v:.3g}" for i, j, v in report.pairs[:10])
        super().__init__(f"potential terms do not commute; offending pairs (term, term): norm = {pairs}")


@dataclass
class CommutationReport:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.pairs

    def to_dict(self):
        return {"valid": self.valid,
                "non_commuting": [{"terms": [i, j], "commutator_norm": v} for i, j, v in self.pairs]}


class LocalPotential:
    """Site-indexed Hermitian terms Phi(j) with supports, required to commute pairwise."""

    def __init__(self, lattice: Lattice, terms: Mapping[int, tuple[np.ndarray, Iterable[int]]],
                 local_dim: int = 2, name: str = "custom", params: dict | None = None, check: bool = True):
        self.lattice = lattice
        self.local_dim = local_dim
        self.name = name
        self.params = dict(params or {})
        self.terms: dict[int, tuple[np.ndarray, tuple[int, ...]]] = {}
        for j, (op, support) in sorted(terms.items()):
            support = tuple(sorted(set(int(s) for s in support)))
            if not 0 <= j < lattice.n_sites:
                raise ValueError(f"term index {j} outside the lattice")
            op = np.asarray(op)
            if op.shape != (local_dim ** len(support),) * 2:
                raise ValueError(f"term {j} has shape {op.shape}, inconsistent with support {support}")
            if np.abs(op - dagger(op)).max() > 1e-12 * max(1.0, np.abs(op).max()):
                raise ValueError(f"term {j} is not Hermitian")
            if np.iscomplexobj(op) and np.abs(op.imag).max() == 0:
                op = op.real
            self.terms[j] = (op, support)
        if check:
            report = validate_commuting(self)
            if not report.valid:
                raise NonCommutingError(report)

    @property
    def supports(self) -> dict[int, tuple[int, ...]]:
        return {j: s for j, (_, s) in self.terms.items()}

    @property
    def range(self) -> int:
        """Largest support diameter (lattice distance)."""
        diam = 0.0
        for _, support in self.terms.values():
            for a, b in itertools.combinations(support, 2):
                diam = max(diam, self.lattice.site_distance(a, b))
        return int(np.ceil(diam - 1e-12))

    @property
    def bound(self) -> float:
        return max((float(np.linalg.norm(op, 2)) for op, _ in self.terms.values()), default=0.0)

    def space(self, sites: Iterable[int]) -> Space:
        return Space(sorted(set(sites)), self.local_dim)

    def full_space(self) -> Space:
        return self.space(range(self.lattice.n_sites))

    def region(self, sites: Iterable[int]) -> Region:
        return Region(self.lattice, sites)

    def term_support(self, term_indices: Iterable[int]) -> tuple[int, ...]:
        out = set()
        for j in term_indices:
            if j in self.terms:
                out.update(self.terms[j][1])
        return tuple(sorted(out))

    def boundary(self, A: Region) -> Region:
        return boundary(A, self.supports)

    def closure(self, A: Region) -> Region:
        return closure(A, self.supports)

    def patch(self, A: Region) -> Region:
        """Sites touched by A or by any term of its closure: where everything local to A lives."""
        return A | self.term_support(self.closure(A))

    def hamiltonian(self, A: Region | Iterable[int], space: Space | None = None) -> np.ndarray:
        """H_A = sum_{j in A} Phi(j), on `space` (default: the support of H_A)."""
        indices = list(A)
        if space is None:
            space = self.space(set(self.term_support(indices)) | set(indices))
        H = np.zeros((space.dim, space.dim))
        for j in indices:
            if j not in self.terms:
                continue
            op, support = self.terms[j]
            H = H + embed(op, self.space(support), space)
        return H


def validate_commuting(p: LocalPotential, tol: float = COMMUTATOR_TOL) -> CommutationReport:
    report = CommutationReport()
    items = list(p.terms.items())
    for (i, (a, sa)), (j, (b, sb)) in itertools.combinations(items, 2):
        if not set(sa) & set(sb):
            continue
        joint = p.space(set(sa) | set(sb))
        A = embed(a, p.space(sa), joint)
        B = embed(b, p.space(sb), joint)
        norm = float(np.linalg.norm(A @ B - B @ A, 2))
        if norm >= tol:
            report.pairs.append((i, j, norm))
    return report


def thermal_state(H: np.ndarray, beta: float, space: Space) -> FullRankState:
    """e^{-beta H}/Z via the eigendecomposition, shifted to avoid overflow."""
    if beta < 0 or not np.isfinite(beta):
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    evals, evecs = np.linalg.eigh(H)
    weights = np.exp(-beta * (evals - evals.min()))
    weights /= weights.sum()
    rho = (evecs * weights) @ dagger(evecs)
    try:
        return FullRankState(rho, space)
    except ValueError as exc:
        raise ValueError(f"Gibbs state at beta={beta} is numerically rank deficient ({exc}); "
                         "use a smaller beta or a smaller system") from None


class GibbsEnsemble:
    """Gibbs states of restricted Hamiltonians, cached per region."""

    def __init__(self, potential: LocalPotential, beta: float):
        if beta < 0 or not np.isfinite(beta):
            raise ValueError(f"beta must be finite and non-negative, got {beta}")
        self.potential = potential
        self.beta = float(beta)
        self._cache: dict = {}
        self._lock = threading.Lock()

    @property
    def lattice(self) -> Lattice:
        return self.potential.lattice

    def _cached(self, key, build):
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    def gibbs_state(self, A: Region) -> FullRankState:
        """e^{-beta H_A}/Z on the closure of A together with the support of H_A."""
        p = self.potential

        def build():
            sites = set(p.closure(A)) | set(p.term_support(A))
            space = p.space(sites)
            return thermal_state(p.hamiltonian(A, space), self.beta, space)
        return self._cached(("gibbs", A.sites), build)

    def patch_state(self, A: Region) -> FullRankState:
        """e^{-beta H_{A_closure}}/Z on patch(A): the reference state for maps local to A."""
        p = self.potential

        def build():
            space = p.space(p.patch(A))
            return thermal_state(p.hamiltonian(p.closure(A), space), self.beta, space)
        return self._cached(("patch", A.sites), build)

    def global_state(self) -> FullRankState:
        return self.patch_state(self.lattice.all())


# ---------------------------------------------------------------- catalog

def _forward_neighbors(lattice: Lattice, site: int) -> list[int]:
    out = []
    c = list(lattice.coords(site))
    for axis, (length, per) in enumerate(zip(lattice.side_lengths, lattice.periodic)):
        nxt = c[axis] + 1
        if nxt >= length:
            if not per or length <= 2:
                continue
            nxt -= length
        d = c.copy()
        d[axis] = nxt
        out.append(lattice.site(d))
    return out


def _from_pauli_terms(lattice, pauli_terms, name, params, check=True) -> LocalPotential:
    """pauli_terms: iterable of (site index, coefficient, [(letter, site), ...])."""
    grouped: dict[int, list] = {}
    for j, coeff, factors in pauli_terms:
        grouped.setdefault(j, []).append((coeff, factors))
    terms = {}
    for j, parts in grouped.items():
        support = sorted({s for _, fs in parts for _, s in fs})
        space = Space(support, 2)
        H = np.zeros((space.dim, space.dim), dtype=complex)
        for coeff, fs in parts:
            op, supp = pauli_operator(fs)
            H = H + coeff * embed(op, Space(supp, 2), space)
        terms[j] = (H, support)
    return LocalPotential(lattice, terms, 2, name=name, params=params, check=check)


def ising(side_lengths=(4,), J: float = 1.0, h: float = 0.0, periodic=False,
          disorder: float = 0.0, seed: int = 0) -> LocalPotential:
    """Classical Ising model -J sum Z_i Z_j - h sum Z_i on a chain or square lattice.

    Phi(j) holds the bonds from j to its forward neighbours and the field on j.
    `disorder` adds Gaussian noise of that width to every coupling and field.
    """
    if isinstance(side_lengths, int):
        side_lengths = (side_lengths,)
    lattice = Lattice(side_lengths, periodic)
    rng = np.random.default_rng(seed)
    terms = []
    for j in range(lattice.n_sites):
        for k in _forward_neighbors(lattice, j):
            terms.append((j, -(J + disorder * rng.normal()), [("Z", j), ("Z", k)]))
        field_j = h + disorder * rng.normal() if (h or disorder) else 0.0
        terms.append((j, -field_j, [("Z", j)]))
    name = "ising1d" if lattice.dims == 1 else f"ising{lattice.dims}d"
    return _from_pauli_terms(lattice, terms, name,
                             {"side_lengths": list(side_lengths), "J": J, "h": h,
                              "periodic": list(lattice.periodic), "disorder": disorder, "seed": seed})


def single_site_field(n: int = 4, h: float = 1.0, pauli: str = "Z") -> LocalPotential:
    lattice = Lattice((n,))
    terms = [(j, -h, [(pauli, j)]) for j in range(n)]
    return _from_pauli_terms(lattice, terms, "field", {"n": n, "h": h, "pauli": pauli})


def z_plaquette(side_lengths=(3, 3), J: float = 1.0, periodic=False) -> LocalPotential:
    """-J Z Z Z Z on every elementary plaquette, indexed by its lower-left corner."""
    lattice = Lattice(side_lengths, periodic)
    terms = []
    for j in range(lattice.n_sites):
        x, y = lattice.coords(j)
        corners = []
        for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
            cx, cy = x + dx, y + dy
            if (cx >= lattice.side_lengths[0] and not lattice.periodic[0]) or \
               (cy >= lattice.side_lengths[1] and not lattice.periodic[1]):
                break
            corners.append(lattice.site((cx, cy)))
        if len(corners) == 4 and len(set(corners)) == 4:
            terms.append((j, -J, [("Z", c) for c in corners]))
        else:
            terms.append((j, 0.0, [("Z", j)]))
    return _from_pauli_terms(lattice, terms, "zplaquette",
                             {"side_lengths": list(side_lengths), "J": J, "periodic": list(lattice.periodic)})


def toric_code(J: float = 1.0) -> LocalPotential:
    """Toric code on a 2x2 torus: 8 edge qubits, 4 stars and 4 plaquettes.

    Qubit (x, 2y) is the horizontal edge leaving vertex (x, y), qubit (x, 2y+1)
    the vertical one. Star (x, y) is indexed by its horizontal edge, plaquette
    (x, y) by the vertical edge on its left side.
    """
    L = 2
    lattice = Lattice((L, 2 * L), periodic=True)

    def h(x, y):
        return lattice.site((x % L, 2 * (y % L)))

    def v(x, y):
        return lattice.site((x % L, 2 * (y % L) + 1))

    terms = []
    for x in range(L):
        for y in range(L):
            star = [h(x, y), h(x - 1, y), v(x, y), v(x, y - 1)]
            plaq = [h(x, y), h(x, y + 1), v(x, y), v(x + 1, y)]
            terms.append((h(x, y), -J, [("X", s) for s in star]))
            terms.append((v(x, y), -J, [("Z", s) for s in plaq]))
    return _from_pauli_terms(lattice, terms, "toric", {"J": J})


def cluster_chain(n: int = 5, J: float = 1.0) -> LocalPotential:
    """Open cluster-state chain -J sum Z_{j-1} X_j Z_{j+1}: commuting but not classical."""
    lattice = Lattice((n,))
    terms = []
    for j in range(n):
        factors = [("X", j)] + [("Z", k) for k in (j - 1, j + 1) if 0 <= k < n]
        terms.append((j, -J, factors))
    return _from_pauli_terms(lattice, terms, "cluster", {"n": n, "J": J})


def transverse_ising(n: int = 4, J: float = 1.0, g: float = 1.0) -> LocalPotential:
    """Transverse-field Ising chain; not commuting, so construction fails validation."""
    lattice = Lattice((n,))
    terms = []
    for j in range(n):
        if j + 1 < n:
            terms.append((j, -J, [("Z", j), ("Z", j + 1)]))
        terms.append((j, -g, [("X", j)]))
    return _from_pauli_terms(lattice, terms, "tfim", {"n": n, "J": J, "g": g})


def from_config(config: Mapping) -> LocalPotential:
    """Build a potential from a parsed config mapping.

    Either `model = "<builtin>"` with parameters under [params], or a
    [lattice] table plus a list of [[terms]] with Pauli strings.
    """
    if "model" in config and "terms" not in config:
        params = dict(config.get("params", {}))
        return build_model(config["model"], **params)
    lat_cfg = config.get("lattice")
    if lat_cfg is None or "terms" not in config:
        raise ValueError("config needs either `model` or both [lattice] and [[terms]]")
    lattice = Lattice(lat_cfg["side_lengths"], lat_cfg.get("periodic", False))
    pauli_terms = []
    for entry in config["terms"]:
        factors = parse_pauli_string(entry["pauli"])
        for _, s in factors:
            if not 0 <= s < lattice.n_sites:
                raise ValueError(f"site {s} in {entry['pauli']!r} outside the lattice")
        site = int(entry.get("site", min(s for _, s in factors)))
        pauli_terms.append((site, float(entry.get("coefficient", 1.0)), factors))
    return _from_pauli_terms(lattice, pauli_terms, str(config.get("name", "custom")),
                             {"terms": len(pauli_terms)})


def builtin_models() -> dict:
    return {
        "ising1d": lambda n=4, J=1.0, h=0.0, periodic=False, disorder=0.0, seed=0:
            ising((n,), J, h, periodic, disorder, seed),
        "ising2d": lambda n=2, m=None, J=1.0, h=0.0, periodic=False, disorder=0.0, seed=0:
            ising((n, m or n), J, h, periodic, disorder, seed),
        "field": lambda n=4, h=1.0, pauli="Z": single_site_field(n, h, pauli),
        "zplaquette": lambda n=3, m=None, J=1.0, periodic=False: z_plaquette((n, m or n), J, periodic),
        "toric": lambda J=1.0: toric_code(J),
        "cluster": lambda n=5, J=1.0: cluster_chain(n, J),
        "tfim": lambda n=4, J=1.0, g=1.0: transverse_ising(n, J, g),
    }


def build_model(name: str, **params) -> LocalPotential:
    catalog = builtin_models()
    if name not in catalog:
        raise ValueError(f"unknown model {name!r}; available: {', '.join(sorted(catalog))}")
    return catalog[name](**params)
