"""Operator algebra on tensor-product spaces.

Operators are plain numpy arrays on a `Space` (an ordered tuple of site labels
with their local dimensions, Kronecker-ordered by site label). Superoperators
use row-major vectorization: entry (i, j) of f sits at index i*D + j, so the
map f -> A f B has matrix kron(A, B.T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

STATE_EIGEN_FLOOR = 1e-13
DENSE_LIMIT = 4096  # doubled-space dimension below which maps are densified


class ResourceError(RuntimeError):
    """The requested computation would need a dense matrix beyond the allowed size."""


@dataclass(frozen=True)
class Space:
    sites: tuple[int, ...]
    dims: tuple[int, ...]

    def __init__(self, sites: Iterable[int], dims: Iterable[int] | int = 2):
        sites = tuple(int(s) for s in sites)
        if list(sites) != sorted(set(sites)):
            raise ValueError("space sites must be sorted and unique")
        if isinstance(dims, (int, np.integer)):
            dims = (int(dims),) * len(sites)
        dims = tuple(int(d) for d in dims)
        if len(dims) != len(sites):
            raise ValueError("one local dimension per site is required")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    @property
    def n(self) -> int:
        return len(self.sites)

    def positions(self, sites: Iterable[int]) -> list[int]:
        lookup = {s: i for i, s in enumerate(self.sites)}
        try:
            return [lookup[s] for s in sites]
        except KeyError as exc:
            raise ValueError(f"site {exc.args[0]} not in space {self.sites}") from None

    def sub(self, sites: Iterable[int]) -> "Space":
        sites = sorted(set(sites))
        pos = self.positions(sites)
        return Space(sites, [self.dims[p] for p in pos])

    def union(self, other: "Space") -> "Space":
        dims = dict(zip(self.sites, self.dims))
        dims.update(zip(other.sites, other.dims))
        sites = sorted(dims)
        return Space(sites, [dims[s] for s in sites])

    def __contains__(self, site) -> bool:
        return site in self.sites

    def issubspace(self, other: "Space") -> bool:
        return set(self.sites) <= set(other.sites)


# ---------------------------------------------------------------- operators

def kron_all(ops: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for op in ops:
        out = np.kron(out, op)
    return out


def _check_square(f: np.ndarray, space: Space) -> None:
    if f.shape[-2:] != (space.dim, space.dim):
        raise ValueError(f"operator of shape {f.shape} does not act on a space of dimension {space.dim}")


def embed(op: np.ndarray, inner: Space, outer: Space) -> np.ndarray:
    """op on `inner`, tensored with the identity on the rest of `outer`."""
    _check_square(op, inner)
    if not inner.issubspace(outer):
        raise ValueError(f"support {inner.sites} is not contained in {outer.sites}")
    if inner.sites == outer.sites:
        return np.array(op)
    rest = [s for s in outer.sites if s not in inner]
    rest_space = outer.sub(rest)
    big = np.kron(op, np.eye(rest_space.dim))
    order = list(inner.sites) + rest
    return _reorder(big, [outer.dims[p] for p in outer.positions(order)], outer.positions(order))


def _reorder(op: np.ndarray, dims_in_order: list[int], positions: list[int]) -> np.ndarray:
    """Operator whose tensor factors are given in `positions` order -> sorted order."""
    n = len(dims_in_order)
    inverse = np.argsort(positions)
    t = op.reshape(dims_in_order + dims_in_order)
    t = t.transpose(list(inverse) + [n + i for i in inverse])
    D = op.shape[0]
    return t.reshape(D, D)


def partial_trace(f: np.ndarray, space: Space, keep: Iterable[int]) -> np.ndarray:
    """Ordinary partial trace; the result acts on the kept sites."""
    _check_square(f, space)
    keep = sorted(set(keep))
    kp = space.positions(keep)
    tp = [i for i in range(space.n) if i not in kp]
    n = space.n
    t = f.reshape(space.dims + space.dims)
    t = t.transpose(tp + kp + [n + i for i in tp] + [n + i for i in kp])
    dt = math.prod(space.dims[i] for i in tp)
    dk = math.prod(space.dims[i] for i in kp)
    t = t.reshape(dt, dk, dt, dk)
    return np.einsum("akal->kl", t)


def mod_partial_trace(f: np.ndarray, space: Space, traced: Iterable[int]) -> np.ndarray:
    """tr_A(f) tensored with the identity on A, same dimension as f."""
    traced = sorted(set(traced))
    space.positions(traced)
    keep = [s for s in space.sites if s not in traced]
    reduced = partial_trace(f, space, keep)
    return embed(reduced, space.sub(keep), space)


def acts_trivially_on(f: np.ndarray, space: Space, sites: Iterable[int]) -> float:
    """Distance of f from the operators acting as identity on `sites`."""
    sites = list(sites)
    if not sites:
        return 0.0
    d = math.prod(space.dims[p] for p in space.positions(sites))
    return float(np.linalg.norm(f - mod_partial_trace(f, space, sites) / d))


def dagger(f: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(f, -1, -2))


def hermitian_residual(f: np.ndarray) -> float:
    scale = max(np.abs(f).max(), 1e-300)
    return float(np.abs(f - dagger(f)).max() / scale)


def trace_norm(f: np.ndarray) -> float:
    return float(np.linalg.svd(f, compute_uv=False).sum())


def vectorize(f: np.ndarray) -> np.ndarray:
    return np.asarray(f).reshape(-1)


def devectorize(v: np.ndarray) -> np.ndarray:
    D = math.isqrt(v.size)
    if D * D != v.size:
        raise ValueError("vector length is not a perfect square")
    return v.reshape(D, D)


def choi_matrix(M: np.ndarray) -> np.ndarray:
    """Choi matrix sum_ij |i><j| (x) S(|i><j|) of a superoperator matrix."""
    D = math.isqrt(M.shape[0])
    return M.reshape(D, D, D, D).transpose(2, 0, 3, 1).reshape(D * D, D * D)


def max_entangled(D: int) -> np.ndarray:
    """vec(1): the unnormalized maximally entangled vector."""
    return np.eye(D).reshape(-1)


# ------------------------------------------------------------------ states

class FullRankState:
    """Density matrix with a cached eigendecomposition and fractional powers."""

    def __init__(self, matrix: np.ndarray, space: Space | None = None, check: bool = True):
        matrix = np.asarray(matrix)
        if space is None:
            n = int(round(math.log2(matrix.shape[0])))
            space = Space(range(n), 2)
        _check_square(matrix, space)
        self.space = space
        matrix = 0.5 * (matrix + dagger(matrix))
        evals, evecs = np.linalg.eigh(matrix)
        if check:
            if abs(evals.sum() - 1) > 1e-12:
                raise ValueError(f"state has trace {evals.sum():.15g}, expected 1")
            if evals[0] < STATE_EIGEN_FLOOR:
                raise ValueError(f"state is not safely full rank: smallest eigenvalue {evals[0]:.3e} "
                                 f"is below {STATE_EIGEN_FLOOR:g}")
        if np.isrealobj(matrix) or np.abs(matrix.imag).max() == 0:
            matrix = matrix.real
            evecs = evecs.real if np.abs(evecs.imag).max() == 0 else evecs
        self.matrix = matrix
        self.eigenvalues = evals
        self.eigenvectors = evecs
        self._powers = {s: self._compute_power(s) for s in (0.25, -0.25, 0.5, -0.5)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    def _compute_power(self, s: float) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues ** s) @ dagger(v)

    def power(self, s: float) -> np.ndarray:
        if s in self._powers:
            return self._powers[s]
        if s == 1:
            return self.matrix
        if s == 0:
            return np.eye(self.dim)
        return self._compute_power(s)

    def expectation(self, f: np.ndarray) -> complex:
        return np.trace(self.matrix @ f)


def maximally_mixed(space: Space) -> FullRankState:
    return FullRankState(np.eye(space.dim) / space.dim, space)


def gamma_map(rho: FullRankState, s: float, f: np.ndarray) -> np.ndarray:
    """rho^s f rho^s."""
    if s == 0:
        return np.array(f)
    r = rho.power(s)
    return r @ f @ r


def weighted_inner(f: np.ndarray, g: np.ndarray, rho: FullRankState) -> complex:
    """tr(rho^1/2 f^dag rho^1/2 g); equals tr(sqrt(rho) f sqrt(rho) g) for Hermitian f."""
    if f.shape != g.shape or f.shape != rho.matrix.shape:
        raise ValueError("dimension mismatch between operators and state")
    r = rho.power(0.5)
    return np.vdot(r @ f @ r, g)


def lp_norm(f: np.ndarray, p: float, rho: FullRankState) -> float:
    """||rho^(1/2p) f rho^(1/2p)||_p in Schatten p-norm; p = inf gives the operator norm."""
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    if math.isinf(p):
        return float(np.linalg.norm(f, 2))
    x = gamma_map(rho, 1 / (2 * p), f)
    sv = np.linalg.svd(x, compute_uv=False)
    return float(np.sum(sv ** p) ** (1 / p))


def weighted_inner0(f: np.ndarray, g: np.ndarray, rho: FullRankState) -> complex:
    """tr(rho f^dag g)."""
    if f.shape != g.shape or f.shape != rho.matrix.shape:
        raise ValueError("dimension mismatch between operators and state")
    return np.trace(rho.matrix @ dagger(f) @ g)


def lp_norm0(f: np.ndarray, rho: FullRankState, p: float = 2) -> float:
    if p != 2:
        raise ValueError("the unsymmetrized weighted norm is only defined for p = 2")
    return float(math.sqrt(max(weighted_inner0(f, f, rho).real, 0.0)))


# ---------------------------------------------------------- superoperators

class SuperOp:
    """Linear map on the operators of a Space.

    Backed by a dense matrix, a function on batches of operators, a sum of
    maps living on subspaces (applied through tensor reshapes, never densified)
    or a composition. `matrix()` densifies; `apply` never does unless the map
    was built dense.
    """

    def __init__(self, space: Space, *, matrix=None, func=None, adjoint_func=None,
                 terms=None, factors=None, sandwich=None):
        self.space = space
        self._matrix = None if matrix is None else np.asarray(matrix)
        self._func = func
        self._adjoint_func = adjoint_func
        self._terms = terms          # list of (coef, SuperOp on subspace)
        self._factors = factors      # list of SuperOps, leftmost applied last
        self._sandwich = sandwich    # (A, B) for f -> A f B
        if self._matrix is not None and self._matrix.shape != (space.dim ** 2,) * 2:
            raise ValueError("superoperator matrix has the wrong size for its space")

    # constructors
    @classmethod
    def from_matrix(cls, space: Space, matrix) -> "SuperOp":
        return cls(space, matrix=matrix)

    @classmethod
    def from_function(cls, space: Space, func: Callable, adjoint_func: Callable | None = None) -> "SuperOp":
        return cls(space, func=func, adjoint_func=adjoint_func)

    @classmethod
    def sandwich_op(cls, space: Space, A: np.ndarray, B: np.ndarray) -> "SuperOp":
        """f -> A f B."""
        return cls(space, sandwich=(np.asarray(A), np.asarray(B)))

    @classmethod
    def identity(cls, space: Space) -> "SuperOp":
        return cls.sandwich_op(space, np.eye(space.dim), np.eye(space.dim))

    @classmethod
    def zero(cls, space: Space) -> "SuperOp":
        return cls(space, terms=[])

    @classmethod
    def partial_trace_op(cls, space: Space, traced: Iterable[int]) -> "SuperOp":
        """The modified partial trace f -> tr_A(f) (x) 1_A as a local map on A."""
        traced = sorted(set(traced))
        sub = space.sub(traced)
        w = max_entangled(sub.dim)
        local = cls(sub, matrix=np.outer(w, w))
        return cls.sum_of(space, [(1.0, local)])

    @classmethod
    def sum_of(cls, space: Space, terms) -> "SuperOp":
        terms = [(c, t) for c, t in terms]
        for _, t in terms:
            if not t.space.issubspace(space):
                raise ValueError(f"term on {t.space.sites} does not fit in {space.sites}")
        return cls(space, terms=terms)

    # algebra
    @property
    def kind(self) -> str:
        for name in ("_matrix", "_sandwich", "_func", "_terms", "_factors"):
            if getattr(self, name) is not None:
                return name.strip("_")
        raise AssertionError("empty superoperator")

    def __add__(self, other: "SuperOp") -> "SuperOp":
        space = self.space.union(other.space)
        return SuperOp.sum_of(space, [(1.0, self), (1.0, other)])

    def __sub__(self, other: "SuperOp") -> "SuperOp":
        space = self.space.union(other.space)
        return SuperOp.sum_of(space, [(1.0, self), (-1.0, other)])

    def __rmul__(self, c) -> "SuperOp":
        return SuperOp.sum_of(self.space, [(c, self)])

    def __matmul__(self, other: "SuperOp") -> "SuperOp":
        space = self.space.union(other.space)
        left = self if self.space == space else self.embedded(space)
        right = other if other.space == space else other.embedded(space)
        return SuperOp(space, factors=[left, right])

    def embedded(self, outer: Space) -> "SuperOp":
        if self.space == outer:
            return self
        return SuperOp.sum_of(outer, [(1.0, self)])

    def adjoint(self) -> "SuperOp":
        """Adjoint with respect to the Hilbert-Schmidt inner product tr(f^dag g)."""
        k = self.kind
        if k == "matrix":
            return SuperOp(self.space, matrix=dagger(self._matrix))
        if k == "sandwich":
            A, B = self._sandwich
            return SuperOp(self.space, sandwich=(dagger(A), dagger(B)))
        if k == "func":
            if self._adjoint_func is None:
                return SuperOp(self.space, matrix=dagger(self.matrix()))
            return SuperOp(self.space, func=self._adjoint_func, adjoint_func=self._func)
        if k == "terms":
            return SuperOp(self.space, terms=[(np.conj(c), t.adjoint()) for c, t in self._terms])
        return SuperOp(self.space, factors=[f.adjoint() for f in reversed(self._factors)])

    # application
    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        D = self.space.dim
        _check_square(f, self.space)
        batch = f.reshape(-1, D, D)
        out = self._apply(batch)
        return out.reshape(f.shape[:-2] + (D, D))

    __call__ = apply

    def matvec(self, v: np.ndarray) -> np.ndarray:
        D = self.space.dim
        return self._apply(np.asarray(v).reshape(1, D, D)).reshape(-1)

    def _apply(self, batch: np.ndarray) -> np.ndarray:
        k = self.kind
        D = self.space.dim
        if k == "matrix":
            flat = batch.reshape(batch.shape[0], D * D)
            return (flat @ self._matrix.T).reshape(batch.shape)
        if k == "sandwich":
            A, B = self._sandwich
            return A @ batch @ B
        if k == "func":
            return np.asarray(self._func(batch))
        if k == "terms":
            out = None
            for c, t in self._terms:
                part = c * _apply_embedded(t, batch, self.space)
                out = part if out is None else out + part
            if out is None:
                return np.zeros_like(batch)
            return out
        for op in reversed(self._factors):
            batch = op._apply(batch)
        return batch

    def matrix(self) -> np.ndarray:
        """Dense D^2 x D^2 matrix (cached)."""
        if self._matrix is not None:
            return self._matrix
        k = self.kind
        D = self.space.dim
        if k == "sandwich":
            A, B = self._sandwich
            M = np.kron(A, B.T)
        elif k == "terms":
            M = None
            for c, t in self._terms:
                part = c * embed_superop(t.matrix(), t.space, self.space)
                M = part if M is None else M + part
            if M is None:
                M = np.zeros((D * D, D * D))
        elif k == "factors":
            M = _compose_dense(self._factors, D)
        else:
            basis = np.eye(D * D).reshape(D * D, D, D)
            M = np.ascontiguousarray(self._apply(basis).reshape(D * D, D * D).T)
        if np.iscomplexobj(M) and np.abs(M.imag).max() == 0:
            M = M.real
        self._matrix = M
        return M

    def as_linear_operator(self, sign: float = 1.0):
        from scipy.sparse.linalg import LinearOperator

        D2 = self.space.dim ** 2
        adj = self.adjoint()
        return LinearOperator((D2, D2), matvec=lambda v: sign * self.matvec(v),
                              rmatvec=lambda v: sign * adj.matvec(v), dtype=complex)


def _compose_dense(factors, D: int) -> np.ndarray:
    """Dense product of factors; sandwiches are folded in by reshapes rather than D^6 products."""
    pending = []
    M = None
    for op in reversed(factors):
        if op.kind == "sandwich":
            if M is None:
                pending.append(op)
            else:
                A, B = op._sandwich
                M = (A @ np.ascontiguousarray(M.T).reshape(D * D, D, D) @ B).reshape(D * D, D * D).T
            continue
        if M is None:
            M = np.array(op.matrix())
            for right in reversed(pending):
                A, B = right._sandwich
                M = (A.T @ M.reshape(D * D, D, D) @ B.T).reshape(D * D, D * D)
            pending = []
        elif op._matrix is not None:
            M = op.matrix() @ M
        else:
            M = op._apply(np.ascontiguousarray(M.T).reshape(D * D, D, D)).reshape(D * D, D * D).T
    if M is None:
        A, B = np.eye(D), np.eye(D)
        for op in pending:
            A, B = op._sandwich[0] @ A, B @ op._sandwich[1]
        M = np.kron(A, B.T)
    return np.ascontiguousarray(M)


def _apply_embedded(op: SuperOp, batch: np.ndarray, outer: Space) -> np.ndarray:
    if op.space == outer:
        return op._apply(batch)
    n = outer.n
    p = outer.positions(op.space.sites)
    r = [i for i in range(n) if i not in p]
    B = batch.shape[0]
    dP = op.space.dim
    R = math.prod(outer.dims[i] for i in r)
    t = batch.reshape((B,) + outer.dims + outer.dims)
    axes = [0] + [1 + i for i in r] + [1 + n + i for i in r] + [1 + i for i in p] + [1 + n + i for i in p]
    t = t.transpose(axes)
    shape_after = t.shape
    local = op._apply(np.ascontiguousarray(t).reshape(B * R * R, dP, dP))
    t = local.reshape(shape_after).transpose(np.argsort(axes))
    return t.reshape(batch.shape[0], outer.dim, outer.dim)


def embed_superop(M: np.ndarray, inner: Space, outer: Space) -> np.ndarray:
    """Dense matrix of a local superoperator tensored with the identity map elsewhere."""
    if inner == outer:
        return M
    n = outer.n
    p = outer.positions(inner.sites)
    r = [i for i in range(n) if i not in p]
    R = math.prod(outer.dims[i] for i in r)
    big = np.kron(M, np.eye(R * R))
    dp = [outer.dims[i] for i in p]
    dr = [outer.dims[i] for i in r]
    block = dp + dp + dr + dr
    t = big.reshape(block + block)
    np_, nr = len(p), len(r)
    out_axes = [0] * (2 * n)
    for a, q in enumerate(p):
        out_axes[q] = a
        out_axes[n + q] = np_ + a
    for b, q in enumerate(r):
        out_axes[q] = 2 * np_ + b
        out_axes[n + q] = 2 * np_ + nr + b
    half = 2 * n
    t = t.transpose(out_axes + [half + a for a in out_axes])
    D2 = outer.dim ** 2
    return t.reshape(D2, D2)


def gamma_superop(rho: FullRankState, s: float) -> SuperOp:
    """f -> rho^s f rho^s."""
    r = rho.power(s)
    return SuperOp.sandwich_op(rho.space, r, r)


def superop_as_matrix(S: SuperOp) -> np.ndarray:
    return S.matrix()


# --------------------------------------------------------- random samples

def random_operator(D: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))


def random_hermitian(D: int, rng: np.random.Generator) -> np.ndarray:
    a = random_operator(D, rng)
    return (a + dagger(a)) / 2


def random_density(D: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    g = rng.normal(size=(D, rank or D)) + 1j * rng.normal(size=(D, rank or D))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_full_rank_state(D: int, rng: np.random.Generator, space: Space | None = None) -> FullRankState:
    rho = random_density(D, rng)
    rho = 0.9 * rho + 0.1 * np.eye(D) / D
    return FullRankState(rho / np.trace(rho).real, space)
