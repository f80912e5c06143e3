"""Davies and heat-bath Gibbs samplers for commuting potentials.

Every generator is a sum of site-indexed local terms L_k, each acting on the
patch of sites that the terms touching k reach. Terms are kept as implicit
superoperators on their patches and are only densified on request.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special
from scipy.sparse.linalg import LinearOperator, expm_multiply

from .condexp import (CondExpectation, iterated_minimal, kernel_projector, liouvillian_projector,
                      minimal_cond_exp, minimal_eta)
from .lattice import Region
from .models import PAULI, GibbsEnsemble, validate_commuting
from .opalg import (DENSE_LIMIT, FullRankState, ResourceError, Space, SuperOp, acts_trivially_on, choi_matrix, dagger, embed,
                    gamma_superop, max_entangled, random_hermitian, trace_norm, weighted_inner)

PROJECTOR_LIMIT = 4096  # largest doubled dimension on which kernel projectors are diagonalized


class SpectralDensity:
    """Bath spectral function chi(omega) obeying chi(-w) = e^{-beta w} chi(w)."""

    def __init__(self, family: str = "glauber", beta: float = 1.0):
        if family not in ("glauber", "metropolis"):
            raise ValueError(f"unknown spectral density {family!r}")
        self.family = family
        self.beta = float(beta)

    def __call__(self, omega):
        x = self.beta * np.asarray(omega, dtype=float)
        if self.family == "glauber":
            return scipy.special.expit(x)
        return np.exp(np.minimum(0.0, x))

    def to_dict(self):
        return {"family": self.family, "beta": self.beta}


def pauli_couplings() -> list[np.ndarray]:
    return [PAULI["X"], PAULI["Y"], PAULI["Z"]]


def gell_mann(d: int) -> list[np.ndarray]:
    """Traceless Hermitian basis of d x d matrices, each scaled to operator norm 1."""
    mats = []
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1
            mats.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k], m[k, j] = -1j, 1j
            mats.append(m)
    for l in range(1, d):
        m = np.diag([1.0] * l + [-l] + [0.0] * (d - l - 1)).astype(complex)
        mats.append(m)
    return [m / np.linalg.norm(m, 2) for m in mats]


def default_couplings(d: int) -> list[np.ndarray]:
    return pauli_couplings() if d == 2 else gell_mann(d)


def _cluster(values: np.ndarray, tol: float) -> np.ndarray:
    """Label sorted-adjacent values closer than tol with a common representative."""
    order = np.argsort(values)
    labels = np.empty(len(values))
    start = 0
    for i in range(1, len(order) + 1):
        if i == len(order) or values[order[i]] - values[order[i - 1]] > tol:
            group = order[start:i]
            labels[group] = values[group].mean()
            start = i
    return labels


def bohr_components(H: np.ndarray, S: np.ndarray, rel_tol: float = 1e-9) -> list[tuple[float, np.ndarray]]:
    """Decompose S into S(omega) with e^{-itH} S e^{itH} = sum_w e^{itw} S(w)."""
    evals, evecs = np.linalg.eigh(H)
    tol = rel_tol * max(np.abs(evals).max(), 1.0)
    levels = _cluster(evals, tol)
    distinct = np.unique(levels)
    projectors = []
    for e in distinct:
        V = evecs[:, levels == e]
        projectors.append(V @ dagger(V))
    blocks: dict[float, np.ndarray] = {}
    freqs = []
    parts = []
    for a, Ea in enumerate(distinct):
        for b, Eb in enumerate(distinct):
            block = projectors[a] @ S @ projectors[b]
            if np.abs(block).max() < 1e-14:
                continue
            freqs.append(Eb - Ea)
            parts.append(block)
    if not parts:
        return []
    freqs = np.array(freqs)
    labels = _cluster(freqs, tol)
    for w, block in zip(labels, parts):
        blocks[w] = blocks.get(w, 0) + block
    return sorted(blocks.items(), key=lambda kv: kv[0])


@dataclass
class LocalTerm:
    """Generator term L_k on the patch of site k, with its reference state."""
    site: int
    superop: SuperOp
    state: FullRankState
    jumps: list = field(default_factory=list)   # (rate, J): L(f) = sum rate (J^dag f J - {J^dag J, f}/2)
    components: list = field(default_factory=list)  # Davies only: (coupling index, omega, S(omega))

    @property
    def space(self) -> Space:
        return self.superop.space

    def symmetrized(self) -> SuperOp:
        sym = gamma_superop(self.state, 0.25) @ self.superop @ gamma_superop(self.state, -0.25)
        if self.space.dim ** 2 <= DENSE_LIMIT:
            M = sym.matrix()
            return SuperOp.from_matrix(self.space, 0.5 * (M + dagger(M)))
        return sym


def _dissipator(space: Space, jumps) -> SuperOp:
    K = sum((rate * dagger(J) @ J for rate, J in jumps), np.zeros((space.dim, space.dim)))
    Jd = [(rate, J, dagger(J)) for rate, J in jumps]

    def heisenberg(f):
        out = -0.5 * (K @ f + f @ K)
        for rate, J, Jh in Jd:
            out = out + rate * (Jh @ f @ J)
        return out

    def schroedinger(r):
        out = -0.5 * (K @ r + r @ K)
        for rate, J, Jh in Jd:
            out = out + rate * (J @ r @ Jh)
        return out

    return SuperOp.from_function(space, heisenberg, schroedinger)


class GibbsSampler:
    def __init__(self, kind: str, ensemble: GibbsEnsemble, terms: dict[int, LocalTerm],
                 density: SpectralDensity | None = None, coherent: bool = False, n_couplings: int = 0):
        self.kind = kind
        self.ensemble = ensemble
        self.terms = dict(sorted(terms.items()))
        self.density = density
        self.coherent = coherent
        self.n_couplings = n_couplings

    @property
    def potential(self):
        return self.ensemble.potential

    @property
    def lattice(self):
        return self.ensemble.lattice

    @property
    def region(self) -> Region:
        return Region(self.lattice, self.terms)

    def describe(self) -> dict:
        out = {"kind": self.kind, "model": self.potential.name, "beta": self.ensemble.beta,
               "coherent": self.coherent}
        if self.density is not None:
            out["spectral_density"] = self.density.family
            out["coupling_normalization"] = "operator norm 1"
        return out

    def restricted(self, A: Region) -> "GibbsSampler":
        return GibbsSampler(self.kind, self.ensemble, {k: t for k, t in self.terms.items() if k in A},
                            self.density, self.coherent, self.n_couplings)

    def full_space(self) -> Space:
        return self.potential.full_space()

    def generator(self, space: Space | None = None) -> SuperOp:
        """Heisenberg-picture generator as an implicit sum over local terms."""
        space = space or self.full_space()
        parts = [(1.0, t.superop) for t in self.terms.values()]
        if self.coherent and self.terms:
            idx = list(self.terms)
            H = self.potential.hamiltonian(idx, space)
            parts.append((1.0, SuperOp.from_function(space, lambda f: 1j * (H @ f - f @ H),
                                                     lambda r: -1j * (H @ r - r @ H))))
        return SuperOp.sum_of(space, parts)

    def adjoint_generator(self, space: Space | None = None) -> SuperOp:
        return self.generator(space).adjoint()

    def patch(self) -> Region:
        """Union of the patches of all active terms."""
        sites = set()
        for t in self.terms.values():
            sites.update(t.space.sites)
        return Region(self.lattice, sites)

    def local_generator(self, A: Region | None = None) -> tuple[SuperOp, FullRankState]:
        """L_A on patch(A) together with the matching reference state."""
        A = self.region if A is None else A
        state = self.ensemble.patch_state(A)
        return self.restricted(A).generator(state.space), state

    def symmetrized_terms(self) -> dict[int, SuperOp]:
        return {k: t.symmetrized() for k, t in self.terms.items()}


def _check_potential(ensemble: GibbsEnsemble) -> None:
    report = validate_commuting(ensemble.potential)
    if not report.valid:
        raise ValueError(f"Gibbs samplers need a commuting potential; non-commuting pairs: {report.pairs}")


def davies_generator(ensemble: GibbsEnsemble, couplings: list[np.ndarray] | None = None,
                     density: SpectralDensity | str = "glauber", A: Region | None = None,
                     coherent: bool = False) -> GibbsSampler:
    """Davies generator with local Bohr-frequency decompositions on each site's patch."""
    _check_potential(ensemble)
    pot = ensemble.potential
    d = pot.local_dim
    if couplings is None:
        couplings = default_couplings(d)
    couplings = [np.asarray(S) / np.linalg.norm(S, 2) for S in couplings if np.linalg.norm(S, 2) > 0]
    if isinstance(density, str):
        density = SpectralDensity(density, ensemble.beta)
    basis = np.array([np.eye(d).reshape(-1)] + [S.reshape(-1) for S in couplings])
    if np.linalg.matrix_rank(basis) < d * d:
        warnings.warn("couplings do not span the site algebra; the sampler may not be primitive", stacklevel=2)
    A = ensemble.lattice.all() if A is None else A
    terms = {}
    for k in A:
        site = Region(ensemble.lattice, [k])
        space = pot.space(pot.patch(site))
        H = pot.hamiltonian(pot.closure(site), space)
        jumps, comps = [], []
        for alpha, S in enumerate(couplings):
            S_big = embed(S, pot.space([k]), space)
            for omega, S_w in bohr_components(H, S_big):
                rate = float(density(omega))
                jumps.append((rate, S_w))
                comps.append((alpha, omega, S_w))
        terms[k] = LocalTerm(k, _dissipator(space, jumps), ensemble.patch_state(site), jumps, comps)
    return GibbsSampler("davies", ensemble, terms, density, coherent, len(couplings))


def heatbath_generator(ensemble: GibbsEnsemble, A: Region | None = None) -> GibbsSampler:
    """L(f) = sum_k (E_k(f) - f) with single-site minimal conditional expectations."""
    _check_potential(ensemble)
    pot = ensemble.potential
    A = ensemble.lattice.all() if A is None else A
    terms = {}
    for k in A:
        site = Region(ensemble.lattice, [k])
        state = ensemble.patch_state(site)
        E = minimal_cond_exp(state, site)
        term = E.superop - SuperOp.identity(state.space)
        terms[k] = LocalTerm(k, term, state, _heatbath_jumps(minimal_eta(state, site), state.space, k))
    return GibbsSampler("heatbath", ensemble, terms)


def _heatbath_jumps(eta: np.ndarray, space: Space, k: int) -> list:
    """Kraus operators of E_k written as Lindblad jumps with unit rate."""
    d = space.dims[space.positions([k])[0]]
    jumps = []
    for a in range(d):
        for b in range(d):
            unit = np.zeros((d, d))
            unit[a, b] = 1
            M = embed(unit, space.sub([k]), space)
            jumps.append((1.0, dagger(eta) @ M))
    return jumps


def build_sampler(ensemble: GibbsEnsemble, kind: str, **options) -> GibbsSampler:
    if kind == "davies":
        return davies_generator(ensemble, **options)
    if kind == "heatbath":
        return heatbath_generator(ensemble, **options)
    raise ValueError(f"unknown sampler {kind!r}; use 'davies' or 'heatbath'")


def restricted(s: GibbsSampler, A: Region) -> GibbsSampler:
    return s.restricted(A)


# ----------------------------------------------- conditional expectations

def local_expectation(ensemble: GibbsEnsemble, kind: str, A: Region, space: Space | None = None,
                      state: FullRankState | None = None) -> CondExpectation:
    """Conditional expectation on A built on patch(A), optionally embedded into a larger space.

    kind: 'minimal' (E^rho_A), 'iterated' (its projective limit), 'davies' or
    'heatbath' (kernel projectors of the restricted generators).
    """
    if kind in ("iterated", "davies", "heatbath"):
        dim = ensemble.potential.space(ensemble.potential.patch(A)).dim
        if dim ** 2 > PROJECTOR_LIMIT:
            raise ResourceError(f"the {kind} conditional expectation on {A} needs a dense projector of "
                                f"doubled dimension {dim ** 2} (limit {PROJECTOR_LIMIT})")
    if kind in ("minimal", "iterated"):
        E = minimal_cond_exp(ensemble.patch_state(A), A)
        if kind == "iterated":
            E = iterated_minimal(E)
    elif kind in ("davies", "heatbath"):
        sampler = davies_generator(ensemble, A=A) if kind == "davies" else heatbath_generator(ensemble, A=A)
        L, st = sampler.local_generator(A)
        E = liouvillian_projector(L, A, st)
        E.kind = kind
    else:
        raise ValueError(f"unknown conditional expectation kind {kind!r}")
    if space is not None and space != E.space:
        if state is None:
            raise ValueError("embedding into a larger space needs the matching reference state")
        E = E.embedded(space, state)
    return E


# ---------------------------------------------------------- verification

def _ccp_min_eig(M: np.ndarray) -> float:
    """Smallest eigenvalue of the Choi matrix compressed off the maximally entangled vector."""
    D = math.isqrt(M.shape[0])
    C = choi_matrix(M)
    w = max_entangled(D) / math.sqrt(D)
    P = np.eye(D * D) - np.outer(w, w)
    C = P @ C @ P
    return float(np.linalg.eigvalsh(0.5 * (C + dagger(C)))[0])


def verify_sampler(s: GibbsSampler, regions: list[Region] | None = None, state: FullRankState | None = None,
                   seed: int = 0, n_probes: int = 4, tol: float = 1e-10) -> dict:
    """Report Lindblad form, locality, local primitivity, reversibility and frustration freeness."""
    rng = np.random.default_rng(seed)
    space = s.full_space()
    rho = state or s.ensemble.global_state()
    D = space.dim
    lattice = s.lattice
    if regions is None:
        regions = [lattice.all()] + [Region(lattice, [k]) for k in list(s.terms)[:2]]
        if lattice.n_sites >= 2:
            regions.append(Region(lattice, list(s.terms)[:2]))
    report = {"sampler": s.describe(), "checks": []}

    def add(name, residual, tolerance, passed=None, **extra):
        entry = {"property": name, "pass": bool(residual <= tolerance if passed is None else passed),
                 "residual": float(residual), "tolerance": float(tolerance)}
        entry.update(extra)
        report["checks"].append(entry)

    # (a) Lindblad form: jump reconstruction on probes, conditional CP where affordable
    recon, ccp = 0.0, math.inf
    for k, t in s.terms.items():
        f = random_hermitian(t.space.dim, rng)
        K = sum((rate * dagger(J) @ J for rate, J in t.jumps), np.zeros((t.space.dim, t.space.dim)))
        ref = sum(rate * (dagger(J) @ f @ J) for rate, J in t.jumps) - 0.5 * (K @ f + f @ K)
        recon = max(recon, float(np.abs(t.superop.apply(f) - ref).max()))
        if t.space.dim ** 2 <= 1024:
            ccp = min(ccp, _ccp_min_eig(t.superop.matrix()))
    add("lindblad_form", recon, 1e-9)
    if math.isfinite(ccp):
        add("conditional_cp", max(0.0, -ccp), 1e-9, passed=ccp >= -1e-9)

    # (b) locality radius per term
    radius = 0.0
    for k, t in s.terms.items():
        radius = max(radius, max(lattice.site_distance(k, q) for q in t.space.sites))
    add("locality_radius", 0.0, 0.0, passed=True, value=radius, potential_range=s.potential.range)

    L = s.generator(space)
    Lstar = L.adjoint()
    add("unitality", float(np.abs(L.apply(np.eye(D))).max()), tol)
    add("stationarity", trace_norm(Lstar.apply(rho.matrix)), tol)

    for A in regions:
        sub = s.restricted(A)
        LA = sub.generator(space)
        label = A.to_json()
        # (c) local primitivity on the patch
        Lloc, st = s.local_generator(A)
        if Lloc.space.dim ** 2 <= DENSE_LIMIT:
            M = (gamma_superop(st, 0.25) @ Lloc @ gamma_superop(st, -0.25)).matrix()
            P, info = kernel_projector(M)
            evals, evecs = np.linalg.eigh(P)
            K = evecs[:, evals > 0.5]
            worst = 0.0
            for v in K.T:
                op = st.power(-0.25) @ v.reshape(st.dim, st.dim) @ st.power(-0.25)
                worst = max(worst, acts_trivially_on(op, st.space, list(A)) / max(np.linalg.norm(op), 1e-300))
            add("local_primitivity", worst, 1e-8, region=label, kernel_dim=info["kernel_dim"])
        # (d) reversibility on random Hermitian pairs
        rev = 0.0
        for _ in range(n_probes):
            f = random_hermitian(D, rng)
            g = random_hermitian(D, rng)
            f /= np.linalg.norm(f)
            g /= np.linalg.norm(g)
            rev = max(rev, abs(weighted_inner(f, LA.apply(g), rho) - weighted_inner(LA.apply(f), g, rho)))
        add("reversibility", rev, 1e-9, region=label)
        # (e) frustration freeness
        add("frustration_freeness", trace_norm(LA.adjoint().apply(rho.matrix)), tol, region=label)
    report["pass"] = all(c["pass"] for c in report["checks"])
    return report


# --------------------------------------------------------------- dynamics

def evolve(s: GibbsSampler, sigma: np.ndarray, t: float) -> np.ndarray:
    """e^{t L*} sigma (Schroedinger picture)."""
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if t == 0:
        return np.array(sigma)
    space = s.full_space()
    Lstar = s.adjoint_generator(space)
    D = space.dim
    v = np.asarray(sigma, dtype=complex).reshape(-1)
    if D * D < DENSE_LIMIT:
        out = scipy.linalg.expm(t * Lstar.matrix()) @ v
    else:
        op = LinearOperator((D * D, D * D), matvec=lambda x: t * Lstar.matvec(x), dtype=complex)
        out = expm_multiply(op, v, traceA=0.0)
    return out.reshape(D, D)


def mixing_curve(s: GibbsSampler, sigma: np.ndarray, t_grid, gap: float | None = None) -> dict:
    """Trace distance to the Gibbs state along t_grid, with the bound lambda_min^{-1/2} e^{-gap t}."""
    from .spectral import spectral_gap

    rho = s.ensemble.global_state()
    if gap is None:
        gap = spectral_gap(s, rayleigh_starts=0).gap
    ts = [float(t) for t in t_grid]
    distances = [trace_norm(evolve(s, sigma, t) - rho.matrix) for t in ts]
    bound = [rho.lambda_min ** -0.5 * math.exp(-gap * t) for t in ts]
    return {"t": ts, "distance": distances, "bound": bound, "gap": gap,
            "worst_slack": min(b - d for b, d in zip(bound, distances))}


def kms_residuals(s: GibbsSampler, s_power: float = 0.5) -> dict:
    """Residuals of chi(-w) = e^{-beta w} chi(w) and rho^s S(w) = e^{s beta w} S(w) rho^s."""
    if s.kind != "davies":
        raise ValueError("KMS relations concern the Davies generator")
    beta = s.ensemble.beta
    chi = s.density
    rho = s.ensemble.global_state()
    full = s.full_space()
    rho_s = rho.power(s_power)
    chi_res, op_res = 0.0, 0.0
    for t in s.terms.values():
        for _, omega, S_w in t.components:
            chi_res = max(chi_res, abs(chi(-omega) - math.exp(-beta * omega) * chi(omega)))
            big = embed(S_w, t.space, full)
            lhs = rho_s @ big
            rhs = math.exp(s_power * beta * omega) * big @ rho_s
            op_res = max(op_res, float(np.abs(lhs - rhs).max()))
    return {"chi": chi_res, "operator": op_res}


def block_equivalence_constants(ensemble: GibbsEnsemble, A: Region) -> dict:
    """Extreme generalized Rayleigh quotients between <f, f - E_A f> and sum_k <f, f - E_k f>."""
    pot = ensemble.potential
    state = ensemble.patch_state(A)
    space = state.space
    EA = minimal_cond_exp(state, A)
    QA = np.eye(space.dim ** 2) - EA.symmetrized().matrix()
    QS = np.zeros_like(QA)
    for k in A:
        Ek = minimal_cond_exp(ensemble.patch_state(Region(ensemble.lattice, [k])), Region(ensemble.lattice, [k]))
        Ek = Ek.embedded(space, state)
        QS = QS + np.eye(space.dim ** 2) - Ek.symmetrized().matrix()
    QA = 0.5 * (QA + dagger(QA))
    QS = 0.5 * (QS + dagger(QS))
    evals, evecs = np.linalg.eigh(QS)
    keep = evals > KERNEL_CUT * max(evals.max(), 1e-300)
    V = evecs[:, keep]
    ratios = scipy.linalg.eigh(dagger(V) @ QA @ V, np.diag(evals[keep]), eigvals_only=True)
    kernel_mismatch = float(np.abs(QA @ evecs[:, ~keep]).max()) if (~keep).any() else 0.0
    return {"c_A": float(ratios.min()), "C_A": float(ratios.max()), "kernel_mismatch": kernel_mismatch}


KERNEL_CUT = 1e-9
