"""Spectral gaps of Gibbs samplers and the certificates built on them.

All spectra are taken from the symmetrized generator
    Lhat(f) = rho^1/4 L(rho^-1/4 f rho^-1/4) rho^1/4,
which is Hermitian and negative semidefinite for reversible samplers, with
vec(rho^1/2) in its kernel.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .condexp import (CondExpectation, iterated_minimal, liouvillian_projector, minimal_cond_exp,
                      symmetrize_dense)
from .lattice import Region
from .models import GibbsEnsemble
from .opalg import (FullRankState, Space, SuperOp, dagger, embed, embed_superop, max_entangled)
from .samplers import DENSE_LIMIT, GibbsSampler, ResourceError, heatbath_generator, local_expectation

KERNEL_RTOL = 1e-9


class NumericalError(RuntimeError):
    pass


class KernelMismatchError(ValueError):
    pass


@dataclass
class GapReport:
    model: str
    sampler: str
    beta: float
    size: int
    region: list
    gap: float
    method: str
    kernel_dim: int = 1
    residuals: dict = field(default_factory=dict)
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _herm(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + dagger(M))
    if np.iscomplexobj(M) and np.abs(M.imag).max() == 0:
        M = M.real
    return M


# ------------------------------------------------------------ symmetrizing

@dataclass
class SymmetrizedGenerator:
    superop: SuperOp
    state: FullRankState
    terms: dict
    sampler: GibbsSampler
    region: Region

    @property
    def space(self) -> Space:
        return self.superop.space

    @property
    def ground(self) -> np.ndarray:
        v = self.state.power(0.5).reshape(-1)
        return v / np.linalg.norm(v)

    def matrix(self) -> np.ndarray:
        return _herm(self.superop.matrix())

    def norm_bound(self) -> float:
        """Sum of local operator norms: an upper bound on ||Lhat||."""
        total = 0.0
        for t in self.terms.values():
            if t.space.dim ** 2 <= DENSE_LIMIT:
                total += float(np.abs(np.linalg.eigvalsh(_herm(t.matrix()))).max())
            else:
                op = t.as_linear_operator()
                total += float(abs(eigsh(op, k=1, which="LM", return_eigenvectors=False, tol=1e-3)[0]))
        return max(total, 1e-300)

    def is_real(self) -> bool:
        rng = np.random.default_rng(0)
        x = rng.normal(size=self.space.dim ** 2)
        y = self.superop.matvec(x)
        return bool(np.abs(np.imag(y)).max() <= 1e-13 * max(np.abs(y).max(), 1e-300))

    def residuals(self, seed: int = 0) -> dict:
        rng = np.random.default_rng(seed)
        n = self.space.dim ** 2
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        y = rng.normal(size=n) + 1j * rng.normal(size=n)
        lhs = np.vdot(x, self.superop.matvec(y))
        rhs = np.conj(np.vdot(y, self.superop.matvec(x)))
        scale = np.linalg.norm(x) * np.linalg.norm(y)
        out = {"hermiticity": float(abs(lhs - rhs) / scale),
               "ground": float(np.linalg.norm(self.superop.matvec(self.ground)))}
        out["local_ground"] = max((float(np.linalg.norm(
            t.matvec(self.sampler.terms[k].state.power(0.5).reshape(-1)))) for k, t in self.terms.items()),
            default=0.0)
        return out


def symmetrize(s: GibbsSampler, A: Region | None = None, where: str = "auto") -> SymmetrizedGenerator:
    """Sum of locally symmetrized terms, on the full lattice or on patch(A)."""
    A = s.region if A is None else A
    if s.coherent:
        raise ValueError("the coherent part is not reversible; disable it before symmetrizing")
    full = A.sites == tuple(range(s.lattice.n_sites))
    if where == "global" or (where == "auto" and full):
        state = s.ensemble.global_state()
    else:
        state = s.ensemble.patch_state(A)
    sub = s.restricted(A)
    terms = {k: t.symmetrized() for k, t in sub.terms.items()}
    op = SuperOp.sum_of(state.space, [(1.0, t) for t in terms.values()])
    sym = SymmetrizedGenerator(op, state, terms, sub, A)
    res = sym.residuals()
    if res["hermiticity"] > 1e-9:
        raise ValueError(f"sampler is not reversible (hermiticity residual {res['hermiticity']:.2e})")
    return sym


# ------------------------------------------------------------------- gaps

def _dense_gap(M: np.ndarray):
    evals, evecs = np.linalg.eigh(M)
    scale = max(np.abs(evals).max(), 1e-300)
    thr = KERNEL_RTOL * scale
    kernel = evals < thr
    if not (~kernel).any():
        raise NumericalError("generator vanishes; the gap is undefined")
    idx = int(np.argmax(~kernel))
    gap = float(evals[idx])
    v = evecs[:, idx]
    return gap, v, evecs[:, kernel], {"threshold": thr, "separation": gap / thr,
                                      "eigen_residual": float(np.linalg.norm(M @ v - gap * v))}


def _iterative_gap(sym: SymmetrizedGenerator, real: bool, tol: float = 1e-8, seed: int = 0):
    n = sym.space.dim ** 2
    g = sym.ground
    bound = sym.norm_bound()
    dtype = float if real else complex
    if real:
        g = g.real

    def matvec(x):
        x = np.asarray(x).reshape(-1)
        y = -sym.superop.matvec(x) + bound * g * np.vdot(g, x)
        return y.real if real else y

    op = LinearOperator((n, n), matvec=matvec, dtype=dtype)
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=n).astype(dtype)
    v0 -= g * np.vdot(g, v0)
    history = []
    for ncv in (20, 40, 80):
        try:
            vals, vecs = eigsh(op, k=2, which="SA", v0=v0, tol=1e-12, ncv=min(ncv, n - 1), maxiter=20 * n)
        except ArpackNoConvergence as exc:
            history.append({"ncv": ncv, "converged": len(exc.eigenvalues)})
            continue
        order = np.argsort(vals)
        gap = float(vals[order[0]])
        v = vecs[:, order[0]]
        resid = float(np.linalg.norm(-sym.superop.matvec(v) - gap * v))
        history.append({"ncv": ncv, "gap": gap, "residual": resid})
        if gap < KERNEL_RTOL * bound:
            raise NumericalError("kernel is larger than span(sqrt(rho)); use the dense method")
        if resid <= tol * bound:
            return gap, v, g[:, None], {"eigen_residual": resid, "norm_bound": bound, "history": history,
                                        "second": float(vals[order[1]])}
    raise NumericalError(f"iterative eigensolver did not converge: {history}")


def rayleigh_gap(apply, n: int, kernel: np.ndarray, starts: int = 20, seed: int = 0, real: bool = False,
                 maxiter: int = 20000) -> dict:
    """Minimize the Rayleigh quotient on the complement of `kernel` from random starts."""
    rng = np.random.default_rng(seed)
    K = kernel.real if real and np.isrealobj(kernel.real) and np.abs(np.imag(kernel)).max() == 0 else kernel

    def project(y):
        return y - K @ (dagger(K) @ y) if K.size else y

    def objective(x):
        y = project(x if real else x[:n] + 1j * x[n:])
        nrm = np.vdot(y, y).real
        Ay = apply(y)
        rq = np.vdot(y, Ay).real / nrm
        grad = project(2 * (Ay - rq * y) / nrm)
        if real:
            return rq, np.real(grad)
        return rq, np.concatenate([grad.real, grad.imag])

    values = []
    for _ in range(starts):
        x0 = rng.normal(size=n if real else 2 * n)
        x0 /= np.linalg.norm(x0)
        res = scipy.optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                                      options={"gtol": 1e-13, "ftol": 1e-16, "maxiter": maxiter, "maxcor": 40})
        values.append(float(res.fun))
    return {"gap": min(values), "values": values, "spread": max(values) - min(values)}


def _model_fields(s: GibbsSampler, A: Region) -> dict:
    return {"model": s.potential.name, "sampler": s.kind, "beta": s.ensemble.beta,
            "size": s.lattice.n_sites, "region": A.to_json()}


def spectral_gap(s: GibbsSampler, A: Region | None = None, method: str = "auto", rayleigh_starts: int = 20,
                 seed: int = 0) -> GapReport:
    """Smallest nonzero eigenvalue of -Lhat_A."""
    t0 = time.perf_counter()
    A = s.region if A is None else A
    sym = symmetrize(s, A)
    n = sym.space.dim ** 2
    if method == "auto":
        method = "dense" if n < DENSE_LIMIT else "iterative"
    real = sym.is_real()
    if method == "dense":
        M = -sym.matrix()
        gap, v, kernel, info = _dense_gap(M)
        apply = (lambda y: M @ y)
    elif method == "iterative":
        gap, v, kernel, info = _iterative_gap(sym, real, seed=seed)
        apply = (lambda y: -sym.superop.matvec(y))
    else:
        raise ValueError(f"unknown method {method!r}")
    residuals = {k: val for k, val in sym.residuals(seed).items()}
    residuals["eigen"] = info["eigen_residual"]
    extra = {k: val for k, val in info.items() if k != "eigen_residual"}
    if rayleigh_starts:
        rq = rayleigh_gap(apply, n, kernel, rayleigh_starts, seed, real)
        residuals["rayleigh_relative"] = abs(rq["gap"] - gap) / gap
        extra["rayleigh"] = {"gap": rq["gap"], "spread": rq["spread"], "starts": rayleigh_starts}
    return GapReport(**_model_fields(s, A), gap=gap, method=method, kernel_dim=kernel.shape[1],
                     residuals=residuals, seconds=time.perf_counter() - t0, extra=extra)


# ------------------------------------------------------- conditional gaps

def _global_heatbath_generator(ensemble: GibbsEnsemble, A: Region) -> SuperOp:
    """sum_{k in A} (E^rho_k - id) built from the global Gibbs state, without locality."""
    rho = ensemble.global_state()
    space = rho.space
    ident = SuperOp.identity(space)
    parts = []
    for k in A:
        E = minimal_cond_exp(rho, Region(ensemble.lattice, [k]))
        parts.append((1.0, SuperOp.from_matrix(space, E.superop.matrix())))
        parts.append((-1.0, ident))
    return SuperOp.sum_of(space, parts)


def default_expectation_kind(s: GibbsSampler) -> str:
    return "minimal" if s.kind == "heatbath" else s.kind


def _kernel_basis(M: np.ndarray, rtol: float):
    """Full divide-and-conquer eigendecomposition split into kernel and the rest."""
    evals, evecs = scipy.linalg.eigh(M, driver="evd")
    scale = max(np.abs(evals).max(), 1e-300)
    zero = np.abs(evals) < rtol * scale
    return evals, evecs, zero


def pencil_gap(neg_L: np.ndarray, Q: np.ndarray, angle_tol: float = 1e-7) -> dict:
    """Smallest lam with neg_L v = lam Q^2 v, v orthogonal to the common kernel of neg_L and Q.

    Solved in the eigenbasis of neg_L: with Y = Q V Lam^{-1/2} over the nonzero
    eigenpairs (Lam, V), the answer is 1 / sigma_max(Y)^2.
    """
    neg_L, Q = _herm(neg_L), _herm(Q)
    lam, V, zl = _kernel_basis(neg_L, KERNEL_RTOL)
    q = scipy.linalg.eigh(Q, eigvals_only=True, driver="evd")
    zq = np.abs(q) < KERNEL_RTOL * max(np.abs(q).max(), 1e-300)
    KL = V[:, zl]
    # ker L inside ker Q plus equal dimensions gives equal kernels; the sine of the
    # largest principal angle is at most ||Q K_L|| / (smallest nonzero |q|)
    q_gap = float(np.abs(q[~zq]).min()) if (~zq).any() else math.inf
    angle = float(np.linalg.norm(Q @ KL, 2)) / q_gap if KL.shape[1] else 0.0
    if KL.shape[1] != int(zq.sum()) or angle > angle_tol:
        raise KernelMismatchError(f"generator kernel (dim {KL.shape[1]}) and conditional-expectation kernel "
                                  f"(dim {int(zq.sum())}) differ; principal-angle sine {angle:.2e}")
    if np.any(lam[~zl] < 0):
        raise NumericalError("generator is not negative semidefinite")
    Vn = V[:, ~zl] * lam[~zl] ** -0.5
    Y = Q @ Vn
    n = Y.shape[1]
    if n > 200:
        op = LinearOperator((n, n), matvec=lambda x: dagger(Y) @ (Y @ x), dtype=Y.dtype)
        vals, vecs = eigsh(op, k=1, which="LA", tol=1e-14, v0=np.ones(n, dtype=Y.dtype))
        nu, w = float(vals[0]), vecs[:, 0]
    else:
        vals, vecs = np.linalg.eigh(dagger(Y) @ Y)
        nu, w = float(vals[-1]), vecs[:, -1]
    gap = 1.0 / nu
    v = Vn @ w
    v /= np.linalg.norm(v)
    resid = float(np.linalg.norm(neg_L @ v - gap * (Q @ (Q @ v))))
    return {"gap": gap, "vector": v, "kernel_dim": int(zl.sum()), "angle": angle, "residual": resid,
            "norm": float(np.abs(lam).max())}


def conditional_gap(s: GibbsSampler, A: Region, where: str = "patch", ekind: str | None = None) -> GapReport:
    """inf <f, -L_A f>_rho / Var_A(f), computed on patch(A) or on the whole lattice."""
    t0 = time.perf_counter()
    ekind = ekind or default_expectation_kind(s)
    ens = s.ensemble
    if where == "patch":
        state = ens.patch_state(A)
        sym = symmetrize(s, A, where="patch")
        neg_L = -sym.matrix()
        E = local_expectation(ens, ekind, A)
    elif where == "global":
        state = ens.global_state()
        if s.kind == "heatbath":
            L = _global_heatbath_generator(ens, A)
        else:
            L = SuperOp.from_matrix(state.space, s.restricted(A).generator(state.space).matrix())
        neg_L = -symmetrize_dense(L, state)
        if ekind == "minimal":
            E = minimal_cond_exp(state, A)
        elif ekind == "iterated":
            E = iterated_minimal(minimal_cond_exp(state, A))
        elif ekind == s.kind:
            E = liouvillian_projector(L, A, state)
        else:
            other = heatbath_generator(ens, A) if ekind == "heatbath" else None
            if other is None:
                raise ValueError(f"expectation kind {ekind!r} is not available on the global route")
            E = liouvillian_projector(_global_heatbath_generator(ens, A), A, state)
    else:
        raise ValueError("where must be 'patch' or 'global'")
    Ehat = _herm(E.symmetrized().matrix())
    Q = np.eye(Ehat.shape[0]) - Ehat
    res = pencil_gap(neg_L, Q)
    return GapReport(**_model_fields(s, A), gap=res["gap"], method=f"pencil-{where}",
                     kernel_dim=res["kernel_dim"],
                     residuals={"kernel_angle": res["angle"], "pencil": res["residual"]},
                     seconds=time.perf_counter() - t0, extra={"expectation": ekind, "space": list(state.space.sites)})


# ----------------------------------------------------------- detectability

def greedy_layers(supports: dict) -> list[list]:
    """Greedy colouring of terms so that terms in one layer have disjoint supports."""
    colour = {}
    keys = sorted(supports)
    for k in keys:
        taken = {colour[j] for j in colour if set(supports[j]) & set(supports[k])}
        c = 0
        while c in taken:
            c += 1
        colour[k] = c
    g = max(colour.values()) + 1 if colour else 0
    layers = [[k for k in keys if colour[k] == c] for c in range(g)]
    for layer in layers:
        for i, a in enumerate(layer):
            for b in layer[i + 1:]:
                if set(supports[a]) & set(supports[b]):
                    raise NumericalError("layering failed: overlapping terms share a layer")
    return layers


def local_projective_expectations(s: GibbsSampler) -> dict[int, CondExpectation]:
    kind = "iterated" if s.kind == "heatbath" else "davies"
    return {k: local_expectation(s.ensemble, kind, Region(s.lattice, [k])) for k in s.terms}


def detectability(s: GibbsSampler, powers: int = 10) -> dict:
    """Layered product of local projectors versus the global fixed-point projector."""
    rho = s.ensemble.global_state()
    space = rho.space
    n2 = space.dim ** 2
    if n2 > DENSE_LIMIT:
        raise ResourceError(f"detectability numerics are dense; doubled dimension {n2} exceeds {DENSE_LIMIT}")
    local = local_projective_expectations(s)
    Ehat = {}
    for k, E in local.items():
        M = _herm(E.symmetrized().matrix())
        Ehat[k] = embed_superop(M, E.space, space)
    supports = {k: E.space.sites for k, E in local.items()}
    layers = greedy_layers(supports)
    g = len(layers)
    locality = max(len(v) for v in supports.values())
    Pi = np.eye(n2)
    for layer in layers:
        layer_op = np.eye(n2)
        for k in layer:
            layer_op = Ehat[k] @ layer_op
        Pi = layer_op @ Pi
    Hsum = sum(np.eye(n2) - Ehat[k] for k in Ehat)
    evals, evecs = np.linalg.eigh(_herm(Hsum))
    thr = KERNEL_RTOL * max(evals.max(), 1e-300)
    K = evecs[:, evals < thr]
    E_glob = K @ dagger(K)
    eps = float(evals[evals >= thr].min())
    lhs = float(np.linalg.norm(Pi - E_glob, 2))
    f = (g - 1) * locality ** g
    rhs = 0.0 if f == 0 else (eps / f + 1) ** (-1 / 3)
    decay = []
    P = np.eye(n2)
    for _ in range(powers):
        P = Pi @ P
        decay.append(float(np.linalg.norm(P - E_glob, 2)))
    fit = log_linear_fit(np.arange(1, powers + 1), decay)
    return {"sampler": s.describe(), "layers": layers, "g": g, "k": locality, "f": f, "epsilon": eps,
            "lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "kernel_dim": int(K.shape[1]),
            "power_norms": decay, "fit": fit}


def log_linear_fit(x, y, floor: float = 1e-12) -> dict | None:
    """Least-squares fit log y = log C - kappa x over points with y > floor."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > floor
    if keep.sum() < 3:
        return None
    slope, intercept = np.polyfit(x[keep], np.log(y[keep]), 1)
    pred = intercept + slope * x[keep]
    ly = np.log(y[keep])
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"C": float(math.exp(intercept)), "kappa": float(-slope), "r2": r2, "points": int(keep.sum())}


# ------------------------------------------------------------------- Knabe

def _nonzero_projector(M: np.ndarray):
    evals, evecs = np.linalg.eigh(_herm(M))
    thr = KERNEL_RTOL * max(np.abs(evals).max(), 1e-300)
    keep = evals > thr
    V = evecs[:, keep]
    return V @ dagger(V), float(evals[keep].min()), float(evals[keep].max())


def _window_gap(projectors: list[tuple[Space, np.ndarray]]) -> float:
    space = projectors[0][0]
    for sp, _ in projectors[1:]:
        space = space.union(sp)
    if space.dim ** 2 > 4 * DENSE_LIMIT:
        raise ValueError(f"Knabe window on {space.n} sites is too large for dense diagonalization")
    H = sum(embed_superop(P, sp, space) for sp, P in projectors)
    evals = np.linalg.eigvalsh(_herm(H))
    thr = KERNEL_RTOL * max(evals.max(), 1e-300)
    return float(evals[evals > thr].min())


def knabe_certificate(s: GibbsSampler, N: int = 3, exact: bool = True) -> dict:
    """1D finite-size criterion: gap(sum P_k) >= N/(N-1) (min_S gap(H_S) - 1/N)."""
    lat = s.lattice
    if lat.dims != 1:
        return {"supported": False, "reason": "the Knabe certificate is implemented for chains only"}
    periodic = lat.periodic[0]
    syms = {k: t.symmetrized() for k, t in s.terms.items()}
    local = {}
    for k, op in syms.items():
        P, m, M = _nonzero_projector(-op.matrix())
        local[k] = (op.space, P, m, M)
    keys = sorted(local)
    L = len(keys)

    def commute_range():
        r = 0
        for i in range(L):
            for j in range(i + 1, L):
                a, b = local[keys[i]], local[keys[j]]
                if not set(a[0].sites) & set(b[0].sites):
                    continue
                sp = a[0].union(b[0])
                X = embed_superop(a[1], a[0], sp)
                Y = embed_superop(b[1], b[0], sp)
                if np.abs(X @ Y - Y @ X).max() > 1e-10:
                    dist = j - i if not periodic else min(j - i, L - (j - i))
                    r = max(r, dist)
        return r

    R = commute_range()
    block = max(R, 1)
    blocks = [keys[i:i + block] for i in range(0, L, block)]
    if periodic and L % block:
        return {"supported": False, "reason": "block size does not divide the ring length"}
    block_proj = []
    block_low = 1.0
    for b in blocks:
        if block == 1:
            sp, P = local[b[0]][0], local[b[0]][1]
        else:
            sp = local[b[0]][0]
            for k in b[1:]:
                sp = sp.union(local[k][0])
            Hb = sum(embed_superop(local[k][1], local[k][0], sp) for k in b)
            P, m, _ = _nonzero_projector(Hb)
            block_low = min(block_low, m)
        block_proj.append((sp, P))
    nb = len(block_proj)
    N = min(N, nb)
    if N < 2:
        return {"supported": False, "reason": "need at least two terms per window"}
    windows = []
    if periodic:
        starts = [list(range(i, i + N)) for i in range(nb)]
        windows = [[j % nb for j in w] for w in starts]
    else:
        for i in range(-(N - 1), nb):
            w = [j for j in range(i, i + N) if 0 <= j < nb]
            if w not in windows:
                windows.append(w)
    window_gaps = [_window_gap([block_proj[j] for j in w]) for w in windows]
    min_gap = min(window_gaps)
    bound = N / (N - 1) * (min_gap - 1 / N)
    m_min = min(v[2] for v in local.values())
    report = {"sampler": s.describe(), "N": N, "commuting_range": R, "block_size": block,
              "window_gap_min": min_gap, "bound_projector": bound, "certified": bound > 0,
              "bridge": {"min_local_gap": m_min, "max_local_norm": max(v[3] for v in local.values()),
                         "block_factor": block_low},
              "gap_lower_bound": m_min * block_low * bound if bound > 0 else None,
              "verdict": "certified" if bound > 0 else "not certified"}
    if exact and s.full_space().dim ** 2 <= DENSE_LIMIT:
        full = s.full_space()
        Hp = sum(embed_superop(sp_P[1], sp_P[0], full) for sp_P in block_proj)
        ev = np.linalg.eigvalsh(_herm(Hp))
        report["exact_projector_gap"] = float(ev[ev > KERNEL_RTOL * ev.max()].min())
        report["exact_gap"] = spectral_gap(s, rayleigh_starts=0).gap
    return report


def knabe_threshold(make_sampler, betas, N: int = 3) -> dict:
    """Scan beta upward and report where the Knabe verdict first flips to 'not certified'."""
    rows = []
    flip = None
    for beta in betas:
        rep = knabe_certificate(make_sampler(beta), N, exact=False)
        rows.append({"beta": float(beta), "bound": rep["bound_projector"], "certified": rep["certified"]})
        if flip is None and not rep["certified"]:
            flip = float(beta)
    return {"rows": rows, "threshold": flip}


# ------------------------------------------------------ infinite temperature

def infinite_temperature_forms(s: GibbsSampler) -> dict:
    """Compare the assembled symmetrized generator at beta = 0 with its closed form."""
    if s.ensemble.beta != 0:
        raise ValueError("closed forms hold only at beta = 0")
    if not s.terms:
        raise ValueError("sampler has no terms")
    if s.kind == "davies" and (s.n_couplings == 0 or all(not t.jumps for t in s.terms.values())):
        raise ValueError("zero couplings give a zero generator; the gap is undefined")
    full = s.full_space()
    D = full.dim
    assembled = symmetrize(s, s.lattice.all(), where="global").matrix()
    closed = np.zeros((D * D, D * D), dtype=complex)
    if s.kind == "heatbath":
        for k in s.terms:
            d = full.dims[full.positions([k])[0]]
            w = max_entangled(d)
            local = np.eye(d * d) - np.outer(w, w) / d
            closed -= embed_superop(local, full.sub([k]), full)
    else:
        chi0 = float(s.density(0.0))
        I = np.eye(D)
        for t in s.terms.values():
            by_coupling = {}
            for alpha, omega, S_w in t.components:
                by_coupling.setdefault(alpha, []).append(embed(S_w, t.space, full))
            for parts in by_coupling.values():
                sq = sum(S @ dagger(S) for S in parts)
                cross = sum(np.kron(S, np.conj(S)) for S in parts)
                closed -= 0.5 * chi0 * (np.kron(sq, I) + np.kron(I, np.conj(sq)) - 2 * cross)
    diff = float(np.abs(assembled - closed).max())
    evals = np.linalg.eigvalsh(_herm(-closed))
    thr = KERNEL_RTOL * max(evals.max(), 1e-300)
    return {"sampler": s.describe(), "max_entry_difference": diff, "closed_form_gap": float(evals[evals > thr].min())}


# ------------------------------------------------------------------ Var(A u B)

def variance_subadditivity(ensemble: GibbsEnsemble, ekind: str, A: Region, B: Region, samples: int = 50,
                           seed: int = 0) -> dict:
    """Check Var_{AuB}(f) <= (1 - 2 eps)^{-1} (Var_A(f) + Var_B(f)) with eps the strong-clustering constant."""
    from .clustering import expectations_on_union, strong_clustering_constant

    if not (A & B):
        raise ValueError("A and B must overlap")
    rng = np.random.default_rng(seed)
    eps_rep = strong_clustering_constant(ensemble, ekind, A, B, normalization="variance")
    eps = eps_rep["value"]
    state, EA, EB, EAB = expectations_on_union(ensemble, ekind, A, B)
    n = state.space.dim ** 2
    I = np.eye(n)
    QA, QB, QAB = (I - _herm(E.symmetrized().matrix()) for E in (EA, EB, EAB))
    report = {"epsilon": eps, "epsilon_norm_normalized": strong_clustering_constant(ensemble, ekind, A, B)["value"],
              "expectation": ekind, "A": A.to_json(), "B": B.to_json()}
    if eps >= 0.5:
        report.update(vacuous=True, worst_slack=None)
        return report
    factor = 1.0 / (1.0 - 2.0 * eps)

    def variances(v):
        return [float(np.linalg.norm(Q @ v) ** 2) for Q in (QA, QB, QAB)]

    slacks = []
    probes = [rng.normal(size=n) + 1j * rng.normal(size=n) for _ in range(samples)]
    probes.append(np.asarray(eps_rep["vector"]))
    probes.append(state.power(0.5).reshape(-1))  # f = 1
    for v in probes:
        v = v / np.linalg.norm(v)
        va, vb, vab = variances(v)
        slacks.append(factor * (va + vb) - vab)
    # worst case over all f: smallest generalized eigenvalue of (QA^2 + QB^2, QAB^2) off ker QAB
    QAB2 = _herm(QAB @ QAB)
    evals, evecs = np.linalg.eigh(QAB2)
    keep = evals > KERNEL_RTOL
    V = evecs[:, keep]
    Ssum = _herm(dagger(V) @ (QA @ QA + QB @ QB) @ V)
    mu = float(scipy.linalg.eigh(Ssum, np.diag(evals[keep]), eigvals_only=True, subset_by_index=[0, 0])[0])
    kernel_leak = float(np.abs((QA @ QA + QB @ QB) @ evecs[:, ~keep]).max()) if (~keep).any() else 0.0
    report.update(vacuous=False, random_slack=min(slacks[:samples]), adversarial_slack=slacks[samples],
                  worst_ratio=mu, worst_slack=factor * mu - 1.0, kernel_leak=kernel_leak,
                  min_slack=min(min(slacks), factor * mu - 1.0))
    return report
