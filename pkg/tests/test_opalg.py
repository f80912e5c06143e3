import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gibbsgap.clustering import covariance
from gibbsgap.opalg import (FullRankState, Space, SuperOp, choi_matrix, devectorize, embed, embed_superop,
                            gamma_map, lp_norm, lp_norm0, maximally_mixed, mod_partial_trace, partial_trace,
                            random_full_rank_state, random_hermitian, random_operator, vectorize,
                            weighted_inner, weighted_inner0)

Z = oracles.Z.real
X = oracles.X.real


def test_embed_examples():
    two = Space([0, 1])
    assert np.allclose(embed(np.eye(2), Space([1]), two), np.eye(4))
    assert np.allclose(embed(Z, Space([0]), two), np.diag([1, 1, -1, -1]))
    with pytest.raises(ValueError):
        embed(Z, Space([5]), two)


def test_embed_twice_equals_once(rng):
    op = random_operator(4, rng)
    inner, mid, outer = Space([1, 3]), Space([1, 2, 3]), Space([0, 1, 2, 3])
    assert np.allclose(embed(embed(op, inner, mid), mid, outer), embed(op, inner, outer))
    assert np.allclose(embed(op, inner, outer), oracles.embed_loop(op, [1, 3], 4))


def test_mod_partial_trace_examples(rng):
    sp = Space(range(3))
    assert np.allclose(mod_partial_trace(np.eye(8), sp, [1]), 2 * np.eye(8))
    f = embed(np.kron(Z, random_operator(2, rng)), Space([0, 2]), sp)
    assert np.allclose(mod_partial_trace(f, sp, [0]), 0)
    rho = random_full_rank_state(8, rng, sp).matrix
    assert np.allclose(mod_partial_trace(rho, sp, [0, 2]), oracles.mod_partial_trace_loop(rho, 3, [0, 2]))
    with pytest.raises(ValueError):
        mod_partial_trace(rho, sp, [4])


def test_partial_trace_against_loop(rng):
    sp = Space(range(4))
    f = random_operator(16, rng)
    for keep in ([0], [1, 3], [0, 2, 3], []):
        assert np.allclose(partial_trace(f, sp, keep), oracles.partial_trace_loop(f, 4, keep))


def test_weighted_inner_examples():
    half = maximally_mixed(Space([0]))
    assert weighted_inner(np.eye(2), np.eye(2), half) == pytest.approx(1)
    assert weighted_inner(X, Z, half) == pytest.approx(0)
    assert weighted_inner(Z, Z, half) == pytest.approx(1)


def test_weighted_inner_real_for_hermitian(rng):
    rho = random_full_rank_state(8, rng)
    f, g = random_hermitian(8, rng), random_hermitian(8, rng)
    assert abs(weighted_inner(f, g, rho).imag) < 1e-12
    r = oracles.scipy.linalg.sqrtm(rho.matrix)
    assert weighted_inner(f, g, rho) == pytest.approx(np.trace(r @ f @ r @ g))
    with pytest.raises(ValueError):
        weighted_inner(f, np.eye(4), rho)


def test_lp_norm_examples(rng):
    rho = random_full_rank_state(4, rng)
    for p in (1, 1.5, 2, 4, math.inf):
        assert lp_norm(np.eye(4), p, rho) == pytest.approx(1)
    assert lp_norm(Z, 2, maximally_mixed(Space([0]))) == pytest.approx(1)
    assert lp_norm(np.zeros((4, 4)), 2, rho) == 0
    with pytest.raises(ValueError):
        lp_norm(np.eye(4), 0.5, rho)


def test_lp_norm0_examples(rng):
    eps = 1e-3
    rho = FullRankState(np.diag([1 - eps, eps]))
    assert lp_norm0(np.eye(2), rho) == pytest.approx(1)
    assert lp_norm0(Z, rho) == pytest.approx(1)
    sigma = random_full_rank_state(4, rng)
    for _ in range(20):
        f, g = random_operator(4, rng), random_operator(4, rng)
        assert abs(weighted_inner0(f, g, sigma)) <= lp_norm0(f, sigma) * lp_norm0(g, sigma) + 1e-12


def test_gamma_examples(rng):
    rho = random_full_rank_state(4, rng)
    f = random_operator(4, rng)
    assert np.allclose(gamma_map(rho, 0, f), f)
    assert np.allclose(gamma_map(rho, 0.25, np.eye(4)), oracles.scipy.linalg.sqrtm(rho.matrix))
    assert np.allclose(gamma_map(rho, -0.25, gamma_map(rho, 0.25, f)), f, atol=1e-10)
    assert np.allclose(gamma_map(rho, 0.5, np.eye(4)), rho.matrix)


def test_full_rank_state_guards():
    with pytest.raises(ValueError, match="trace"):
        FullRankState(np.eye(2))
    with pytest.raises(ValueError, match="full rank"):
        FullRankState(np.diag([1.0, 0.0]))


def test_vectorize_convention(rng):
    unit = np.array([[0, 1], [0, 0]])
    assert np.array_equal(vectorize(unit), [0, 1, 0, 0])
    f = random_operator(3, rng)
    assert np.array_equal(devectorize(vectorize(f)), f)
    A, B = random_operator(3, rng), random_operator(3, rng)
    S = SuperOp.sandwich_op(Space([0], 3), A, B)
    assert np.allclose(S.matrix(), np.kron(A, B.T))
    assert np.allclose(S.matrix(), oracles.superop_from_function(lambda g: A @ g @ B, 3))


def test_superop_forms_agree(rng):
    sp = Space(range(3))
    A, B = random_operator(4, rng), random_operator(4, rng)
    local = SuperOp.sandwich_op(Space([0, 2]), A, B)
    func = SuperOp.from_function(sp, lambda b: b @ np.diag(np.arange(8.0)))
    total = 2.0 * local.embedded(sp) + func @ local.embedded(sp) - SuperOp.identity(sp)
    dense = SuperOp.from_matrix(sp, total.matrix())
    for _ in range(3):
        f = random_operator(8, rng)
        assert np.allclose(total.apply(f), dense.apply(f), rtol=1e-10, atol=1e-10)
    big = oracles.embed_loop(A, [0, 2], 3)
    bigB = oracles.embed_loop(B, [0, 2], 3)
    ref = oracles.superop_from_function(
        lambda f: 2 * big @ f @ bigB + big @ f @ bigB @ np.diag(np.arange(8.0)) - f, 8)
    assert np.allclose(total.matrix(), ref)
    assert np.allclose(embed_superop(local.matrix(), local.space, sp), oracles.superop_from_function(
        lambda f: big @ f @ bigB, 8))


def test_adjoint_is_hilbert_schmidt_adjoint(rng):
    sp = Space(range(2))
    A, B = random_operator(4, rng), random_operator(4, rng)
    S = SuperOp.sandwich_op(sp, A, B) + SuperOp.partial_trace_op(sp, [1])
    f, g = random_operator(4, rng), random_operator(4, rng)
    assert np.vdot(f, S.apply(g)) == pytest.approx(np.vdot(S.adjoint().apply(f), g))


def test_choi_of_identity_is_max_entangled_projector():
    D = 3
    w = np.eye(D).reshape(-1)
    assert np.allclose(choi_matrix(np.eye(D * D)), np.outer(w, w))


# ----- weighted norm inequalities on random instances

hermitian_instances = st.tuples(st.integers(0, 10 ** 6), st.sampled_from([2, 4]),
                                st.floats(1, 6), st.floats(1, 6))


@settings(max_examples=150, deadline=None)
@given(hermitian_instances)
def test_norm_ordering(inst):
    seed, D, p, q = inst
    p, q = min(p, q), max(p, q)
    r = np.random.default_rng(seed)
    rho = random_full_rank_state(D, r)
    f = random_hermitian(D, r)
    assert lp_norm(f, p, rho) <= lp_norm(f, q, rho) + 1e-10
    assert lp_norm(f, q, rho) <= lp_norm(f, math.inf, rho) + 1e-10


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1.01, 8))
def test_holder(seed, p):
    r = np.random.default_rng(seed)
    q = p / (p - 1)
    rho = random_full_rank_state(4, r)
    f, g = random_hermitian(4, r), random_hermitian(4, r)
    assert abs(weighted_inner(f, g, rho)) <= lp_norm(f, p, rho) * lp_norm(g, q, rho) + 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_duality_attained(seed):
    r = np.random.default_rng(seed)
    rho = random_full_rank_state(4, r)
    f = random_hermitian(4, r)
    nf = lp_norm(f, 2, rho)
    g = f / nf
    assert lp_norm(g, 2, rho) == pytest.approx(1)
    assert weighted_inner(g, f, rho).real == pytest.approx(nf)
    for _ in range(5):
        h = random_hermitian(4, r)
        h /= lp_norm(h, 2, rho)
        assert weighted_inner(h, f, rho).real <= nf + 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-5, 5))
def test_covariance_shift_invariance_and_positivity(seed, c):
    r = np.random.default_rng(seed)
    rho = random_full_rank_state(4, r)
    f, g = random_hermitian(4, r), random_hermitian(4, r)
    assert covariance(rho, f, g + c * np.eye(4)) == pytest.approx(covariance(rho, f, g), abs=1e-10)
    var = weighted_inner(f, f, rho).real - rho.expectation(f).real ** 2
    assert var >= -1e-12
