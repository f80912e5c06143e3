"""Conditional expectations: the minimal (Petz-type) construction, projectors onto
the kernel of a local generator, and numerical certification of the defining
properties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lattice import Region
from .opalg import (DENSE_LIMIT, FullRankState, ResourceError, Space, SuperOp, acts_trivially_on, choi_matrix, dagger,
                    gamma_superop, hermitian_residual, mod_partial_trace, random_hermitian,
                    weighted_inner)

KERNEL_RTOL = 1e-9


@dataclass
class CondExpectation:
    superop: SuperOp
    region: Region
    kind: str
    state: FullRankState
    projective: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def space(self) -> Space:
        return self.superop.space

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.superop.apply(f)

    __call__ = apply

    def symmetrized(self) -> SuperOp:
        """rho^1/4 E(rho^-1/4 f rho^-1/4) rho^1/4, Hermitian for reversible E."""
        return gamma_superop(self.state, 0.25) @ self.superop @ gamma_superop(self.state, -0.25)

    def embedded(self, space: Space, state: FullRankState) -> "CondExpectation":
        """The same map tensored with the identity on a larger space."""
        return CondExpectation(self.superop.embedded(space), self.region, self.kind, state,
                               self.projective, dict(self.diagnostics))


def _inverse_sqrt(X: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (X + dagger(X)))
    if evals[0] <= 0:
        raise ValueError("reduced state is singular; cannot form its inverse square root")
    return (evecs * evals ** -0.5) @ dagger(evecs)


def minimal_eta(rho: FullRankState, A: Region) -> np.ndarray:
    """(tr_A rho)^{-1/2} rho^{1/2} with the modified partial trace."""
    reduced = mod_partial_trace(rho.matrix, rho.space, list(A))
    return _inverse_sqrt(reduced) @ rho.power(0.5)


def minimal_cond_exp(rho: FullRankState, A: Region) -> CondExpectation:
    """E(f) = tr_A[eta f eta^dag] with eta = (tr_A rho)^{-1/2} rho^{1/2} (modified partial trace)."""
    space = rho.space
    sites = list(A)
    space.positions(sites)
    eta = minimal_eta(rho, A)
    E = SuperOp.partial_trace_op(space, sites) @ SuperOp.sandwich_op(space, eta, dagger(eta))
    return CondExpectation(E, A, "minimal", rho, projective=False, diagnostics={"eta_norm": float(np.linalg.norm(eta, 2))})


def symmetrize_dense(L: SuperOp, rho: FullRankState) -> np.ndarray:
    """Dense Gamma^{1/2} L Gamma^{-1/2}, made exactly Hermitian only by the caller."""
    return (gamma_superop(rho, 0.25) @ L.embedded(rho.space) @ gamma_superop(rho, -0.25)).matrix()


def kernel_projector(Lhat: np.ndarray, rtol: float = KERNEL_RTOL):
    """Orthogonal projector onto the kernel of a Hermitian matrix, plus spectral info."""
    H = 0.5 * (Lhat + dagger(Lhat))
    evals, evecs = np.linalg.eigh(H)
    scale = max(np.abs(evals).max(), 1e-300)
    zero = np.abs(evals) < rtol * scale
    K = evecs[:, zero]
    nonzero = np.abs(evals[~zero])
    smallest = float(nonzero.min()) if nonzero.size else math.inf
    return K @ dagger(K), {"kernel_dim": int(zero.sum()), "smallest_nonzero": smallest,
                           "threshold": rtol * scale, "separation": smallest / (rtol * scale)}


def liouvillian_projector(L: SuperOp, A: Region, rho: FullRankState, cross_check: bool = False,
                          tol: float = 1e-9) -> CondExpectation:
    """lim_{t->inf} e^{t L_A}, computed as the kernel projector of the symmetrized generator."""
    Lhat = symmetrize_dense(L, rho)
    scale = max(np.abs(Lhat).max(), 1e-300)
    herm = float(np.abs(Lhat - dagger(Lhat)).max() / scale)
    if herm > tol:
        raise ValueError(f"generator is not reversible with respect to the state "
                         f"(hermiticity residual {herm:.2e}); its limit need not be a conditional expectation")
    P, info = kernel_projector(Lhat)
    if info["separation"] < 1e3:
        raise ValueError(f"kernel of the generator is not cleanly separated (ratio {info['separation']:.2e})")
    space = rho.space
    Pop = SuperOp.from_matrix(space, P)
    E = (gamma_superop(rho, -0.25) @ Pop @ gamma_superop(rho, 0.25)).matrix()
    if np.iscomplexobj(E) and np.abs(E.imag).max() < 1e-14 * max(np.abs(E).max(), 1):
        E = E.real
    diagnostics = dict(info, hermiticity=herm)
    if cross_check and math.isfinite(info["smallest_nonzero"]):
        T = 50.0 / info["smallest_nonzero"]
        Lm = L.embedded(space).matrix()
        diagnostics["time_limit_residual"] = float(np.abs(scipy.linalg.expm(T * Lm) - E).max())
    return CondExpectation(SuperOp.from_matrix(space, E), A, "liouvillian-projector", rho,
                           projective=True, diagnostics=diagnostics)


def iterated_minimal(E: CondExpectation) -> CondExpectation:
    """lim_n E^n as the spectral projector onto the eigenvalue-1 space of the symmetrized map."""
    if E.projective:
        return E
    S = E.symmetrized().matrix()
    S = 0.5 * (S + dagger(S))
    evals, evecs = np.linalg.eigh(S)
    one = np.abs(evals - 1) < KERNEL_RTOL
    K = evecs[:, one]
    P = SuperOp.from_matrix(E.space, K @ dagger(K))
    limit = (gamma_superop(E.state, -0.25) @ P @ gamma_superop(E.state, 0.25)).matrix()
    if np.iscomplexobj(limit) and np.abs(limit.imag).max() < 1e-14 * max(np.abs(limit).max(), 1):
        limit = limit.real
    below = evals[~one]
    return CondExpectation(SuperOp.from_matrix(E.space, limit), E.region, "iterated", E.state, projective=True,
                           diagnostics={"fixed_dim": int(one.sum()),
                                        "second_eigenvalue": float(below.max()) if below.size else 0.0})


# ------------------------------------------------------------ certification

def _check(name, residual, tolerance, passed=None):
    if passed is None:
        passed = residual <= tolerance
    return {"property": name, "pass": bool(passed), "residual": float(residual), "tolerance": float(tolerance)}


def _unit(f, rho):
    return f / math.sqrt(max(weighted_inner(f, f, rho).real, 1e-300))


def certify(E: CondExpectation, rho: FullRankState | None = None, n_monotonicity: int = 8,
            n_probes: int = 10, seed: int = 0, tol: float = 1e-10) -> dict:
    """Numerically check complete positivity, unitality, consistency, reversibility and monotonicity."""
    rho = rho or E.state
    space = E.space
    if rho.space != space:
        raise ValueError("state and conditional expectation live on different spaces")
    rng = np.random.default_rng(seed)
    D = space.dim
    if D * D > DENSE_LIMIT:
        raise ResourceError(f"certifying needs the dense {D * D}x{D * D} superoperator; limit is {DENSE_LIMIT}")
    checks = []
    M = E.superop.matrix()
    choi = choi_matrix(M)
    min_eig = float(np.linalg.eigvalsh(0.5 * (choi + dagger(choi)))[0])
    scale = max(1.0, float(np.abs(M).max()))
    checks.append(_check("complete_positivity", max(0.0, -min_eig), tol * scale, passed=min_eig >= -tol * scale))
    checks.append(_check("unitality", float(np.abs(E.apply(np.eye(D)) - np.eye(D)).max()), tol * scale))

    probes = [_unit(random_hermitian(D, rng), rho) for _ in range(n_probes)]
    consistency = max(abs(rho.expectation(E.apply(f)) - rho.expectation(f)) for f in probes)
    checks.append(_check("consistency", consistency, tol * scale))

    rev = 0.0
    for f, g in zip(probes, probes[1:] + probes[:1]):
        rev = max(rev, abs(weighted_inner(E.apply(f), g, rho) - weighted_inner(f, E.apply(g), rho)))
    checks.append(_check("reversibility", rev, tol * scale))

    slack = math.inf
    for f in probes:
        values = []
        g = f
        for _ in range(n_monotonicity + 1):
            values.append(weighted_inner(g, f, rho).real)
            g = E.apply(g)
        slack = min(slack, min(a - b for a, b in zip(values, values[1:])))
    checks.append(_check("monotonicity", max(0.0, -slack), tol * scale, passed=slack >= -tol * scale))

    if E.projective:
        idem = float(np.abs(M @ M - M).max())
        checks.append(_check("idempotence", idem, tol * scale))
    return {"kind": E.kind, "region": E.region.to_json(), "checks": checks,
            "monotonicity_slack": float(slack), "pass": all(c["pass"] for c in checks)}


def locality_radius(E: CondExpectation, metric: str = "euclidean", seed: int = 0, tol: float = 1e-9) -> float:
    """Smallest r such that E fixes operators supported beyond distance r of A
    and maps operators on the r-neighbourhood into that neighbourhood."""
    rng = np.random.default_rng(seed)
    space = E.space
    lattice = E.region.lattice
    A = list(E.region)
    dist = {s: min(lattice.site_distance(s, a, metric) for a in A) for s in space.sites}
    for r in sorted(set(dist.values())):
        inside = [s for s in space.sites if dist[s] <= r]
        outside = [s for s in space.sites if dist[s] > r]
        ok = True
        if outside:
            sub = space.sub(outside)
            for _ in range(2):
                f = _embed_random(space, sub, rng)
                if np.abs(E.apply(f) - f).max() > tol * max(1, np.abs(f).max()):
                    ok = False
                    break
        if ok and outside:
            sub = space.sub(inside)
            f = _embed_random(space, sub, rng)
            if acts_trivially_on(E.apply(f), space, outside) > tol * np.linalg.norm(f):
                ok = False
        if ok:
            return float(r)
    return float(max(dist.values()))


def _embed_random(space: Space, sub: Space, rng) -> np.ndarray:
    from .opalg import embed
    return embed(random_hermitian(sub.dim, rng), sub, space)


def trace_identity_residual(rho: FullRankState, A: Region, f: np.ndarray) -> float:
    """Residual of tr_A[X^{-1/2} r f r X^{-1/2}] = X^{-1/2} tr_A[r f r] X^{-1/2}, X = tr_A rho, r = rho^{1/2}."""
    space = rho.space
    X = _inverse_sqrt(mod_partial_trace(rho.matrix, space, A))
    r = rho.power(0.5)
    lhs = mod_partial_trace(X @ r @ f @ r @ X, space, A)
    rhs = X @ mod_partial_trace(r @ f @ r, space, A) @ X
    return float(np.abs(lhs - rhs).max())


def symmetrized_norm(E: CondExpectation) -> float:
    """Largest singular value of the symmetrized map, i.e. the 2->2 weighted norm."""
    return float(np.linalg.norm(E.symmetrized().matrix(), 2))


def is_hermitian_map(M: np.ndarray, tol: float = 1e-9) -> bool:
    return hermitian_residual(M) < tol
