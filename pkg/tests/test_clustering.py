import math

import numpy as np
import pytest

import oracles
from gibbsgap.clustering import (conditional_covariance, covariance, covariance0, infinity_norm_covariance,
                                 ising_correlation_length, local_indistinguishability, separation,
                                 strong_clustering_constant, strong_clustering_scan, transfer_matrix_correlation,
                                 weak_clustering_scan)
from gibbsgap.lattice import Lattice
from gibbsgap.models import GibbsEnsemble, ising
from gibbsgap.opalg import (FullRankState, Space, embed, lp_norm, maximally_mixed, random_full_rank_state,
                            random_hermitian)
from gibbsgap.samplers import local_expectation


def test_covariance_examples(rng):
    a, b = random_full_rank_state(2, rng).matrix, random_full_rank_state(2, rng).matrix
    rho = FullRankState(np.kron(a, b), Space([0, 1]))
    f = np.kron(random_hermitian(2, rng), np.eye(2))
    g = np.kron(np.eye(2), random_hermitian(2, rng))
    for cov in (covariance, covariance0, infinity_norm_covariance):
        assert cov(rho, f, g) == pytest.approx(0, abs=1e-12)
    half = maximally_mixed(Space([0]))
    assert covariance(half, oracles.Z.real, oracles.Z.real) == pytest.approx(1)


def test_covariance_matches_classical_correlations():
    n, beta = 6, 0.3
    rho = GibbsEnsemble(ising((n,)), beta).global_state()
    Z0 = oracles.site_op(oracles.Z, 0, n).real
    for j in range(1, n):
        Zj = oracles.site_op(oracles.Z, j, n).real
        ref = oracles.ising_correlation_bruteforce(n, beta, 0, j)
        assert covariance(rho, Z0, Zj) == pytest.approx(ref, rel=1e-10)
        assert ref == pytest.approx(transfer_matrix_correlation(beta, 1.0, j), rel=1e-10)


def test_shift_invariance_all_variants(rng):
    rho = random_full_rank_state(4, rng)
    f, g = random_hermitian(4, rng), random_hermitian(4, rng)
    for cov in (covariance, covariance0):
        assert cov(rho, f, g + 2.5 * np.eye(4)) == pytest.approx(cov(rho, f, g), abs=1e-10)


def test_norm_chain_for_infinity_covariance(rng):
    rho = random_full_rank_state(4, rng)
    f = random_hermitian(4, rng)
    assert lp_norm(f, 1, rho) <= lp_norm(f, 2, rho) + 1e-12 <= lp_norm(f, math.inf, rho) + 2e-12


def test_conditional_covariance(rng):
    e = GibbsEnsemble(ising((4,)), 0.6)
    rho = e.global_state()
    lat = e.lattice
    A = lat.region([1, 2])
    E = local_expectation(e, "minimal", A, rho.space, rho)
    f = random_hermitian(16, rng)
    # a fixed point of the minimal expectation: its projective limit applied to anything
    fixed = local_expectation(e, "iterated", A, rho.space, rho).apply(f)
    assert np.allclose(E.apply(fixed), fixed, atol=1e-10)
    assert conditional_covariance(e, "minimal", A, fixed, fixed) < 1e-12
    whole = conditional_covariance(e, "minimal", lat.all(), f, f)
    assert whole == pytest.approx(lp_norm(f, 2, rho) ** 2 - rho.expectation(f).real ** 2, rel=1e-9)
    for _ in range(5):
        g = random_hermitian(16, rng)
        cab = conditional_covariance(e, "minimal", A, f, g)
        assert cab <= math.sqrt(conditional_covariance(e, "minimal", A, f, f)
                                * conditional_covariance(e, "minimal", A, g, g)) + 1e-10


def test_strong_clustering_vanishes_at_infinite_temperature():
    e = GibbsEnsemble(ising((4,)), 0.0)
    lat = e.lattice
    for kind in ("minimal", "heatbath"):
        rep = strong_clustering_constant(e, kind, lat.region([0, 1, 2]), lat.region([1, 2, 3]))
        assert rep["value"] < 1e-12


@pytest.mark.parametrize("kind", ["minimal", "iterated", "heatbath", "davies"])
def test_strong_clustering_patch_equals_global(kind):
    e = GibbsEnsemble(ising((4,)), 0.6)
    lat = e.lattice
    A, B = lat.region([0, 1]), lat.region([1, 2])
    patch = strong_clustering_constant(e, kind, A, B, "patch")["value"]
    glob = strong_clustering_constant(e, kind, A, B, "global")["value"]
    assert patch == pytest.approx(glob, rel=1e-8, abs=1e-14)


def test_strong_clustering_reports_maximizer():
    e = GibbsEnsemble(ising((4,)), 0.7)
    lat = e.lattice
    rep = strong_clustering_constant(e, "minimal", lat.region([0, 1, 2]), lat.region([1, 2, 3]))
    assert rep["observable"].shape == (16, 16)
    assert rep["value"] > 0
    assert rep["W_max_singular"] >= rep["W_max_abs_eigenvalue"] - 1e-12
    with pytest.raises(ValueError):
        strong_clustering_constant(e, "minimal", lat.region([0]), lat.region([3]))


def test_strong_clustering_decays_with_separation():
    e = GibbsEnsemble(ising((5,)), 0.5)
    lat = e.lattice
    pairs = [(lat.region([0, 1, 2, 3]), lat.region([1, 2, 3, 4])), (lat.region([0, 1, 2]), lat.region([1, 2, 3, 4])),
             (lat.region([0, 1, 2]), lat.region([2, 3, 4]))]
    assert [separation(A, B) for A, B in pairs] == [4, 3, 2]
    rep = strong_clustering_scan(e, "minimal", pairs)
    values = [p["value"] for p in rep.points]
    assert values[0] < values[1] < values[2]
    assert rep.fit is not None and rep.fit["kappa"] > 0


def test_weak_clustering_infinite_temperature():
    rep = weak_clustering_scan(GibbsEnsemble(ising((4,)), 0.0))
    assert all(p["value"] < 1e-12 for p in rep.points)
    assert rep.fit is None and rep.extra["xi"] == "not applicable"


def test_weak_clustering_correlation_length():
    beta = 0.6
    rep = weak_clustering_scan(GibbsEnsemble(ising((8,)), beta))
    assert rep.xi == pytest.approx(oracles.transfer_matrix_xi(beta), rel=0.1)
    assert oracles.transfer_matrix_xi(beta) == pytest.approx(ising_correlation_length(beta))
    assert rep.extra["cov0_fit"] is not None
    assert all(row["ratio"] is None or row["ratio"] > 0 for row in rep.extra["ratio_table"])


def test_local_indistinguishability_trivial_cases():
    e = GibbsEnsemble(ising((3,)), 0.5)
    lat = e.lattice
    glob = local_indistinguishability(e, "minimal", lat.all(), lat.region([0]), n_samples=5)
    assert glob["value"] < 1e-10 and "flag" in glob
    assert glob["label"] == "LOWER BOUND (heuristic)"
    e0 = GibbsEnsemble(ising((3,)), 0.0)
    site = local_indistinguishability(e0, "minimal", lat.region([1]), lat.region([1]), n_samples=5)
    assert site["value"] < 1e-10
    assert site["fixed_point_dim"] == 16
    with pytest.raises(ValueError):
        local_indistinguishability(e, "minimal", lat.region([1]), lat.region([0, 1]))


def test_local_indistinguishability_nontrivial():
    e = GibbsEnsemble(ising((4,)), 0.8)
    lat = e.lattice
    near = local_indistinguishability(e, "minimal", lat.region([1, 2]), lat.region([1]), n_samples=10)
    assert near["value"] > 1e-3
    assert near["fixed_point_dim"] > 1
