import math
from collections import Counter

import numpy as np
import pytest
import scipy.linalg

import oracles
from gibbsgap.condexp import iterated_minimal, minimal_cond_exp
from gibbsgap.models import GibbsEnsemble, ising, single_site_field, toric_code
from gibbsgap.opalg import random_density, trace_norm, weighted_inner, random_hermitian
from gibbsgap.samplers import (ResourceError, SpectralDensity, block_equivalence_constants, bohr_components,
                               build_sampler, davies_generator, evolve, heatbath_generator, kms_residuals,
                               local_expectation, mixing_curve, verify_sampler)

PAULIS = [oracles.X, oracles.Y, oracles.Z]


@pytest.mark.parametrize("family", ["glauber", "metropolis"])
def test_spectral_density_kms(family):
    for beta in (0.0, 0.5, 2.0):
        chi = SpectralDensity(family, beta)
        for w in np.linspace(-4, 4, 17):
            assert chi(-w) == pytest.approx(math.exp(-beta * w) * chi(w), rel=1e-13)
    assert SpectralDensity("glauber", 1.0)(2.0) == pytest.approx(1 / (1 + math.exp(-2)))
    with pytest.raises(ValueError):
        SpectralDensity("ohmic")


def test_bohr_components_single_qubit():
    H = oracles.Z.real
    comps = dict(bohr_components(H, oracles.X.real))
    assert set(comps) == {-2.0, 2.0}
    assert np.allclose(comps[2.0], (oracles.X - 1j * oracles.Y) / 2)
    assert np.allclose(comps[-2.0], (oracles.X + 1j * oracles.Y) / 2)
    t = 0.37
    lhs = scipy.linalg.expm(-1j * t * H) @ oracles.X @ scipy.linalg.expm(1j * t * H)
    assert np.allclose(lhs, sum(np.exp(1j * t * w) * S for w, S in comps.items()))


def test_single_qubit_davies_x_coupling():
    beta = 0.9
    e = GibbsEnsemble(single_site_field(1, h=-1.0), beta)  # H = Z
    with pytest.warns(UserWarning):
        s = davies_generator(e, couplings=[oracles.X.real])
    jumps = s.terms[0].jumps
    chi = SpectralDensity("glauber", beta)
    ref = oracles.lindblad_matrix([(chi(2.0), (oracles.X - 1j * oracles.Y) / 2),
                                   (chi(-2.0), (oracles.X + 1j * oracles.Y) / 2)])
    assert len(jumps) == 2
    assert np.allclose(s.generator().matrix(), ref)
    # stationary state of the Schroedinger picture
    evals, evecs = np.linalg.eig(ref.conj().T)
    v = evecs[:, np.argmin(np.abs(evals))].reshape(2, 2)
    v = v / np.trace(v)
    assert np.allclose(v, np.diag([math.exp(-beta), math.exp(beta)]) / (2 * math.cosh(beta)))


def test_davies_matches_global_bohr_construction():
    n, beta = 3, 0.8
    e = GibbsEnsemble(ising((n,), h=0.3), beta)
    s = davies_generator(e)
    H = oracles.ising_hamiltonian(n, h=0.3)
    couplings = [oracles.site_op(P, k, n) for k in range(n) for P in PAULIS]
    ref = oracles.global_davies_matrix(H, couplings, SpectralDensity("glauber", beta))
    assert np.allclose(s.generator().matrix(), ref, atol=1e-12)


def test_heatbath_matches_global_minimal_expectations():
    n, beta = 3, 0.7
    e = GibbsEnsemble(ising((n,)), beta)
    s = heatbath_generator(e)
    rho = oracles.gibbs(oracles.ising_hamiltonian(n), beta)
    ref = sum(oracles.minimal_cond_exp_matrix(rho, n, [k]) - np.eye(4 ** n) for k in range(n))
    assert np.allclose(s.generator().matrix(), ref, atol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_heatbath_infinite_temperature_tensor_spectrum(n):
    s = heatbath_generator(GibbsEnsemble(ising((n,)), 0.0))
    evals = np.round(np.linalg.eigvals(s.generator().matrix()).real, 9)
    counts = Counter(-evals)
    # eigenvalue -m for every Pauli string with m non-identity factors
    expected = {float(m): math.comb(n, m) * 3 ** m for m in range(n + 1)}
    assert {float(k): v for k, v in counts.items()} == expected


def test_single_site_heatbath_spectrum():
    s = heatbath_generator(GibbsEnsemble(single_site_field(1), 0.8))
    evals = np.sort(np.linalg.eigvals(s.generator().matrix()).real)
    assert np.allclose(evals, [-1, -1, -1, 0])


@pytest.mark.parametrize("kind", ["heatbath", "davies"])
def test_unital_stationary_trace_preserving(kind):
    e = GibbsEnsemble(ising((4,)), 1.0)
    s = build_sampler(e, kind)
    rho = e.global_state().matrix
    L = s.generator()
    assert np.abs(L.apply(np.eye(16))).max() < 1e-12
    assert trace_norm(L.adjoint().apply(rho)) < 1e-10
    sigma = random_density(16, np.random.default_rng(0))
    assert abs(np.trace(L.adjoint().apply(sigma))) < 1e-12


@pytest.mark.parametrize("kind", ["heatbath", "davies"])
def test_detailed_balance_on_restrictions(kind, rng):
    e = GibbsEnsemble(ising((4,)), 0.6)
    s = build_sampler(e, kind)
    rho = e.global_state()
    lat = e.lattice
    for A in ([0], [1, 2], [0, 1, 2, 3]):
        L = s.restricted(lat.region(A)).generator()
        for _ in range(3):
            f, g = random_hermitian(16, rng), random_hermitian(16, rng)
            assert abs(weighted_inner(f, L.apply(g), rho) - weighted_inner(L.apply(f), g, rho)) < 1e-9


def test_restriction_linearity(rng):
    e = GibbsEnsemble(ising((4,)), 0.5)
    s = heatbath_generator(e)
    lat = e.lattice
    full = s.full_space()
    f = random_hermitian(16, rng)
    assert np.allclose(s.restricted(lat.all()).generator().apply(f), s.generator().apply(f))
    assert np.allclose(s.restricted(lat.empty()).generator().apply(f), 0)
    A, B = lat.region([1]), lat.region([1, 2, 3])
    diff = s.restricted(B).generator(full).apply(f) - s.restricted(A).generator(full).apply(f)
    assert np.allclose(diff, s.restricted(B - A).generator(full).apply(f))


@pytest.mark.parametrize("kind", ["heatbath", "davies"])
def test_verify_sampler_passes_on_chain(kind):
    rep = verify_sampler(build_sampler(GibbsEnsemble(ising((4,)), 0.8), kind))
    assert rep["pass"], [c for c in rep["checks"] if not c["pass"]]
    names = {c["property"] for c in rep["checks"]}
    assert {"lindblad_form", "conditional_cp", "unitality", "stationarity", "local_primitivity",
            "reversibility", "frustration_freeness"} <= names


def test_davies_z_only_couplings_not_primitive():
    e = GibbsEnsemble(single_site_field(1), 0.5)
    with pytest.warns(UserWarning, match="span"):
        s = davies_generator(e, couplings=[oracles.Z.real])
    rep = verify_sampler(s)
    prim = [c for c in rep["checks"] if c["property"] == "local_primitivity"]
    assert prim and not all(c["pass"] for c in prim)


def test_frustration_freeness_negative_control():
    e = GibbsEnsemble(ising((3,)), 0.8)
    wrong = GibbsEnsemble(ising((3,)), 0.3).global_state()
    rep = verify_sampler(heatbath_generator(e), state=wrong)
    ff = [c for c in rep["checks"] if c["property"] == "frustration_freeness"]
    assert not any(c["pass"] for c in ff)


def test_locality_radius_of_terms():
    rep = verify_sampler(heatbath_generator(GibbsEnsemble(ising((4,)), 0.5)))
    loc = next(c for c in rep["checks"] if c["property"] == "locality_radius")
    assert loc["value"] <= 2 * loc["potential_range"]


def test_evolve_basic_properties():
    e = GibbsEnsemble(ising((3,)), 0.7)
    s = davies_generator(e)
    sigma = random_density(8, np.random.default_rng(3))
    assert np.array_equal(evolve(s, sigma, 0.0), sigma)
    a = evolve(s, evolve(s, sigma, 0.4), 0.9)
    assert np.allclose(a, evolve(s, sigma, 1.3), atol=1e-8)
    assert trace_norm(evolve(s, sigma, 60.0) - e.global_state().matrix) < 1e-8
    with pytest.raises(ValueError):
        evolve(s, sigma, -1.0)


def test_single_qubit_dephasing_rate():
    beta = 0.6
    e = GibbsEnsemble(single_site_field(1, h=-1.0), beta)
    s = davies_generator(e)
    plus = np.full((2, 2), 0.5)
    M = s.adjoint_generator().matrix()
    evals = np.linalg.eigvals(M)
    # the off-diagonal entry |0><1| is an eigenvector of the Schroedinger generator
    unit = np.zeros(4)
    unit[1] = 1
    rate = -(M @ unit)[1].real
    assert np.allclose(M @ unit, -rate * unit)
    assert np.min(np.abs(evals + rate)) < 1e-12
    for t in (0.5, 1.0, 2.0):
        out = evolve(s, plus, t)
        assert out[0, 1] == pytest.approx(0.5 * math.exp(-rate * t), rel=1e-9)


@pytest.mark.parametrize("kind", ["heatbath", "davies"])
def test_mixing_curve_below_bound(kind):
    e = GibbsEnsemble(ising((3,)), 0.8)
    s = build_sampler(e, kind)
    sigma = random_density(8, np.random.default_rng(9))
    curve = mixing_curve(s, sigma, [0, 0.5, 1, 2, 4, 8])
    assert curve["worst_slack"] >= 0


def test_kms_operator_identities():
    for e in (GibbsEnsemble(single_site_field(1), 1.2), GibbsEnsemble(ising((3,)), 0.9)):
        s = davies_generator(e)
        for p in (0.25, 0.5, 1.0):
            res = kms_residuals(s, p)
            assert res["chi"] < 1e-12 and res["operator"] < 1e-11
    with pytest.raises(ValueError):
        kms_residuals(heatbath_generator(GibbsEnsemble(ising((2,)), 0.5)))


def test_block_equivalence_constants_positive():
    e = GibbsEnsemble(ising((4,)), 0.8)
    for A in ([1, 2], [0, 1, 2]):
        c = block_equivalence_constants(e, e.lattice.region(A))
        assert 0 < c["c_A"] <= c["C_A"] < math.inf
        assert c["kernel_mismatch"] < 1e-8


def test_local_expectation_kinds_and_limits():
    e = GibbsEnsemble(ising((4,)), 0.5)
    A = e.lattice.region([1])
    E = local_expectation(e, "minimal", A)
    assert np.allclose(E.superop.matrix(), minimal_cond_exp(e.patch_state(A), A).superop.matrix())
    It = local_expectation(e, "iterated", A)
    assert np.allclose(It.superop.matrix(), iterated_minimal(E).superop.matrix())
    with pytest.raises(ValueError):
        local_expectation(e, "bogus", A)
    toric = GibbsEnsemble(toric_code(), 0.5)
    with pytest.raises(ResourceError):
        local_expectation(toric, "heatbath", toric.lattice.region([0]))


def test_toric_code_heatbath_verifies():
    e = GibbsEnsemble(toric_code(), 0.4)
    s = heatbath_generator(e)
    lat = e.lattice
    rep = verify_sampler(s, regions=[lat.region([0])], n_probes=2)
    failed = [c for c in rep["checks"] if not c["pass"]]
    assert rep["pass"], failed
