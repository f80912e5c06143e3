"""Covariances and the three correlation notions: weak clustering, strong
clustering with respect to a conditional expectation, and local
indistinguishability of fixed points."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigs, eigsh

from .condexp import CondExpectation, iterated_minimal, liouvillian_projector, minimal_cond_exp
from .lattice import Region, euclidean_distance
from .models import PAULI, GibbsEnsemble
from .opalg import (FullRankState, SuperOp, dagger, devectorize, embed, lp_norm, lp_norm0, partial_trace,
                    random_density, trace_norm, weighted_inner, weighted_inner0)
from .samplers import davies_generator, heatbath_generator, local_expectation
from .spectral import log_linear_fit

KERNEL_RTOL = 1e-9
SMALL = 256  # matrices up to this size are diagonalized densely


@dataclass
class ClusteringReport:
    model: str
    beta: float
    notion: str
    points: list
    fit: dict | None = None
    ekind: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def xi(self) -> float | None:
        if not self.fit or self.fit["kappa"] <= 0:
            return None
        return 1.0 / self.fit["kappa"]


def covariance(rho: FullRankState, f: np.ndarray, g: np.ndarray) -> float:
    """|<f, g>_rho - tr(rho f) tr(rho g)|."""
    return float(abs(weighted_inner(f, g, rho) - rho.expectation(f) * rho.expectation(g)))


def covariance0(rho: FullRankState, f: np.ndarray, g: np.ndarray) -> float:
    """Covariance with the unsymmetrized pairing tr(rho f g)."""
    return float(abs(weighted_inner0(f, g, rho) - rho.expectation(f) * rho.expectation(g)))


def infinity_norm_covariance(rho: FullRankState, f: np.ndarray, g: np.ndarray) -> float:
    """Covariance normalized by ||f||_{1,rho} ||g||_inf."""
    denom = lp_norm(f, 1, rho) * lp_norm(g, math.inf, rho)
    return covariance(rho, f, g) / denom if denom > 0 else 0.0


# -------------------------------------------------- conditional expectations

def global_expectation(ensemble: GibbsEnsemble, ekind: str, A: Region) -> CondExpectation:
    """E_A built directly from the global Gibbs state, with no locality shortcut."""
    rho = ensemble.global_state()
    if ekind == "minimal":
        return minimal_cond_exp(rho, A)
    if ekind == "iterated":
        return iterated_minimal(minimal_cond_exp(rho, A))
    if ekind == "heatbath":
        from .spectral import _global_heatbath_generator
        E = liouvillian_projector(_global_heatbath_generator(ensemble, A), A, rho)
    elif ekind == "davies":
        L = davies_generator(ensemble, A=A).generator(rho.space)
        E = liouvillian_projector(SuperOp.from_matrix(rho.space, L.matrix()), A, rho)
    else:
        raise ValueError(f"unknown conditional expectation kind {ekind!r}")
    E.kind = ekind
    return E


def expectations_on_union(ensemble: GibbsEnsemble, ekind: str, A: Region, B: Region, where: str = "patch"):
    """(state, E_A, E_B, E_{AuB}) on a common space: patch(AuB) or the whole lattice."""
    U = A | B
    if where == "patch":
        state = ensemble.patch_state(U)
        return (state,) + tuple(local_expectation(ensemble, ekind, R, state.space, state) for R in (A, B, U))
    if where == "global":
        return (ensemble.global_state(),) + tuple(global_expectation(ensemble, ekind, R) for R in (A, B, U))
    raise ValueError("where must be 'patch' or 'global'")


def conditional_covariance(ensemble: GibbsEnsemble, ekind: str, A: Region, f: np.ndarray, g: np.ndarray) -> float:
    """|<f - E_A f, g - E_A g>_rho| with rho the global Gibbs state."""
    rho = ensemble.global_state()
    E = local_expectation(ensemble, ekind, A, rho.space, rho)
    return float(abs(weighted_inner(f - E.apply(f), g - E.apply(g), rho)))


def _sym(E: CondExpectation) -> np.ndarray:
    M = E.symmetrized().matrix()
    return 0.5 * (M + dagger(M))


def _real_if_close(M: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(M) and np.abs(M.imag).max() <= 1e-14 * max(np.abs(M).max(), 1.0):
        return M.real
    return M


def _extremal_abs_eig(H: np.ndarray):
    """Eigenpair of largest modulus of a Hermitian matrix; Lanczos above a small size."""
    if H.shape[0] <= SMALL:
        return np.linalg.eigh(H)
    vals, vecs = eigsh(H, k=1, which="LM", tol=1e-14, v0=np.ones(H.shape[0], dtype=H.dtype))
    return vals, vecs


def _w_extremals(W: np.ndarray) -> tuple[float, float]:
    """Largest singular value and largest-modulus eigenvalue of W."""
    if W.shape[0] <= SMALL:
        return float(np.linalg.norm(W, 2)), float(np.abs(np.linalg.eigvals(W)).max())
    v0 = np.ones(W.shape[0], dtype=W.dtype)
    sing = float(np.sqrt(eigsh(LinearOperator(W.shape, matvec=lambda x: dagger(W) @ (W @ x), dtype=W.dtype),
                               k=1, which="LA", tol=1e-12, v0=v0, return_eigenvectors=False)[0]))
    eig = float(np.abs(eigs(W, k=1, which="LM", tol=1e-12, v0=v0, return_eigenvectors=False)).max())
    return sing, eig


def strong_clustering_constant(ensemble: GibbsEnsemble, ekind: str, A: Region, B: Region,
                               where: str = "patch", normalization: str = "norm") -> dict:
    """sup_f Cov_{AuB}(E_A f, E_B f) / N(f) over Hermitian f.

    normalization 'norm' uses N(f) = ||f||^2_{2,rho}; 'variance' uses Var_{AuB}(f),
    which is the constant entering the variance subadditivity bound.
    """
    if not (A & B):
        raise ValueError("A and B must overlap")
    state, EA, EB, EU = expectations_on_union(ensemble, ekind, A, B, where)
    SA, SB, SU = (_real_if_close(_sym(E)) for E in (EA, EB, EU))
    n = SA.shape[0]
    Q = np.eye(n) - SU
    X = SA @ Q @ Q @ SB
    herm_X = float(np.abs(X - dagger(X)).max())
    H = 0.5 * (X + dagger(X))
    if normalization == "norm":
        evals, evecs = _extremal_abs_eig(H)
    elif normalization == "variance":
        q, V = np.linalg.eigh(0.5 * (Q @ Q + dagger(Q @ Q)))
        keep = q > KERNEL_RTOL
        Vk = V[:, keep]
        Hk = dagger(Vk) @ H @ Vk
        Hk = 0.5 * (Hk + dagger(Hk))
        evals, w = scipy.linalg.eigh(Hk, np.diag(q[keep]))
        evecs = Vk @ w
        leak = float(np.abs(H @ V[:, ~keep]).max()) if (~keep).any() else 0.0
    else:
        raise ValueError("normalization must be 'norm' or 'variance'")
    idx = int(np.argmax(np.abs(evals)))
    value = float(abs(evals[idx]))
    v = evecs[:, idx] / np.linalg.norm(evecs[:, idx])
    f = state.power(-0.25) @ devectorize(v) @ state.power(-0.25)
    W = SA @ SB - SU
    w_sing, w_eig = _w_extremals(W)
    report = {"value": value, "normalization": normalization, "where": where, "ekind": ekind,
              "A": A.to_json(), "B": B.to_json(), "space": list(state.space.sites),
              "vector": v, "observable": f, "hermiticity_X": herm_X,
              "W_hermiticity": float(np.abs(W - dagger(W)).max()),
              "W_max_abs_eigenvalue": w_eig, "W_max_singular": w_sing}
    if normalization == "variance":
        report["kernel_leak"] = leak
    if report["W_hermiticity"] > 1e-9:
        report["W_flag"] = "W is not Hermitian; eigenvalue and singular-value extremals reported separately"
    return report


def separation(A: Region, B: Region, metric: str = "euclidean") -> float:
    """d(B minus A, A minus B); infinite when either difference is empty."""
    a, b = A - B, B - A
    if not a or not b:
        return math.inf
    return euclidean_distance(b, a, metric)


def strong_clustering_scan(ensemble: GibbsEnsemble, ekind: str, pairs, where: str = "patch",
                           normalization: str = "norm") -> ClusteringReport:
    points = []
    for A, B in pairs:
        rep = strong_clustering_constant(ensemble, ekind, A, B, where, normalization)
        points.append({"distance": separation(A, B), "value": rep["value"], "A": A.to_json(), "B": B.to_json(),
                       "W_hermiticity": rep["W_hermiticity"]})
    finite = [p for p in points if math.isfinite(p["distance"])]
    fit = log_linear_fit([p["distance"] for p in finite], [p["value"] for p in finite]) if len(finite) >= 3 else None
    return ClusteringReport(ensemble.potential.name, ensemble.beta, "strong", points, fit, ekind,
                            {"normalization": normalization})


# ----------------------------------------------------------- weak clustering

def single_site_family(ensemble: GibbsEnsemble, paulis=("X", "Y", "Z")) -> dict:
    space = ensemble.global_state().space
    fam = {}
    for site in space.sites:
        for p in paulis:
            fam[(site, p)] = embed(PAULI[p], space.sub([site]), space)
    return fam


def weak_clustering_scan(ensemble: GibbsEnsemble, family: dict | None = None, metric: str = "euclidean",
                         distances=None) -> ClusteringReport:
    """Per-distance maximum of Cov(f, g)/(||f|| ||g||) over observable pairs with disjoint supports.

    family maps (site, label) to an operator on the full lattice; the default is all
    single-site Paulis.
    """
    rho = ensemble.global_state()
    lat = ensemble.lattice
    family = family or single_site_family(ensemble)
    norms = {k: lp_norm(f, 2, rho) for k, f in family.items()}
    norms0 = {k: lp_norm0(f, rho) for k, f in family.items()}
    best: dict[float, float] = {}
    best0: dict[float, float] = {}
    for (ka, fa), (kb, fb) in itertools.combinations(family.items(), 2):
        if ka[0] == kb[0]:
            continue
        d = lat.site_distance(ka[0], kb[0], metric)
        if distances is not None and d not in distances:
            continue
        v = covariance(rho, fa, fb) / (norms[ka] * norms[kb])
        v0 = covariance0(rho, fa, fb) / (norms0[ka] * norms0[kb])
        best[d] = max(best.get(d, 0.0), v)
        best0[d] = max(best0.get(d, 0.0), v0)
    ds = sorted(best)
    points = [{"distance": d, "value": best[d]} for d in ds]
    fit = log_linear_fit(ds, [best[d] for d in ds]) if len(ds) >= 3 else None
    fit0 = log_linear_fit(ds, [best0[d] for d in ds]) if len(ds) >= 3 else None
    ratios = [{"distance": d, "cov": best[d], "cov0": best0[d],
               "ratio": best[d] / best0[d] if best0[d] > 0 else None} for d in ds]
    extra = {"cov0_points": [{"distance": d, "value": best0[d]} for d in ds], "cov0_fit": fit0,
             "ratio_table": ratios, "family_size": len(family)}
    if fit is None:
        extra["xi"] = "not applicable"
    return ClusteringReport(ensemble.potential.name, ensemble.beta, "weak", points, fit, None, extra)


def transfer_matrix_correlation(beta: float, J: float, distance: int) -> float:
    """<Z_0 Z_d> of the open classical Ising chain with zero field."""
    return math.tanh(beta * J) ** distance


def ising_correlation_length(beta: float, J: float = 1.0) -> float:
    return -1.0 / math.log(math.tanh(beta * J))


# --------------------------------------------------- local indistinguishability

def fixed_point_projector(ensemble: GibbsEnsemble, ekind: str, A: Region) -> tuple[SuperOp, FullRankState]:
    """Schroedinger-picture projector onto the fixed points of E*_A, dense on patch(A) only."""
    rho = ensemble.global_state()
    E = local_expectation(ensemble, "iterated" if ekind == "minimal" else ekind, A)
    return E.superop.adjoint().embedded(rho.space), rho


def local_indistinguishability(ensemble: GibbsEnsemble, ekind: str, A: Region, B: Region, n_samples: int = 20,
                               seed: int = 0) -> dict:
    """Sampled lower bound on the trace-distance diameter of fixed points of E*_A reduced to B."""
    if not B <= A:
        raise ValueError("B must be contained in A")
    rng = np.random.default_rng(seed)
    P, rho = fixed_point_projector(ensemble, ekind, A)
    space = rho.space
    D = space.dim
    local = P._terms[0][1] if P.kind == "terms" else P
    rank = int(round(np.trace(local.matrix()).real))
    reduced = []
    for _ in range(n_samples):
        sigma = random_density(D, rng)
        fixed = P.apply(sigma)
        fixed = 0.5 * (fixed + dagger(fixed))
        reduced.append(partial_trace(fixed, space, list(B)))
    reduced.append(partial_trace(rho.matrix, space, list(B)))
    diameter = 0.0
    for x, y in itertools.combinations(reduced, 2):
        diameter = max(diameter, trace_norm(x - y))
    rest = Region(ensemble.lattice, set(range(ensemble.lattice.n_sites))) - A
    dist = euclidean_distance(B, rest) if rest else math.inf
    out = {"value": diameter, "label": "LOWER BOUND (heuristic)", "fixed_point_dim": rank,
           "distance": dist, "samples": n_samples, "ekind": ekind, "A": A.to_json(), "B": B.to_json()}
    if rank == 1:
        out["flag"] = "unique fixed point; the diameter is trivially zero"
    return out
