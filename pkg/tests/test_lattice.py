import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsgap.lattice import (Lattice, Region, boundary, check_decomposition, closure, decomposition_sequence,
                              euclidean_distance, neighborhood, rectangle_class)


def chain_supports(n):
    return {j: (j, j + 1) if j + 1 < n else (j,) for j in range(n)}


def test_site_count_and_coordinate_bijection():
    lat = Lattice((3, 4, 2))
    assert lat.n_sites == 24
    assert [lat.site(lat.coords(s)) for s in range(24)] == list(range(24))
    assert len({lat.coords(s) for s in range(24)}) == 24


def test_bad_lattices_rejected():
    with pytest.raises(ValueError):
        Lattice((0,))
    with pytest.raises(ValueError):
        Lattice((2, 2), periodic=(True,))
    with pytest.raises(ValueError):
        Region(Lattice((3,)), [3])


def test_distance_examples():
    open8 = Lattice.chain(8)
    ring8 = Lattice.chain(8, periodic=True)
    assert euclidean_distance(open8.region([0]), open8.region([0])) == 0
    assert euclidean_distance(open8.region([0]), open8.region([3])) == 3
    assert euclidean_distance(ring8.region([0]), ring8.region([7])) == 1
    assert euclidean_distance(open8.region([0]), open8.region([7])) == 7


def test_distance_2d_and_chebyshev():
    lat = Lattice((4, 4))
    a, b = lat.region([lat.site((0, 0))]), lat.region([lat.site((3, 4 - 1))])
    assert euclidean_distance(a, b) == pytest.approx(math.sqrt(18))
    assert euclidean_distance(a, b, "chebyshev") == 3
    torus = Lattice((4, 4), periodic=True)
    assert euclidean_distance(torus.region([0]), torus.region([torus.site((3, 3))])) == pytest.approx(math.sqrt(2))


def test_distance_empty_region_errors():
    lat = Lattice.chain(4)
    with pytest.raises(ValueError):
        euclidean_distance(lat.empty(), lat.region([1]))


def test_boundary_examples():
    lat = Lattice.chain(8)
    sup = chain_supports(8)
    assert boundary(lat.all(), sup).sites == ()
    assert boundary(lat.region([3]), sup).sites == (2,)
    assert closure(lat.region([3]), sup).sites == (2, 3)
    single = {j: (j,) for j in range(8)}
    for A in ([0], [2, 5], [7]):
        assert boundary(lat.region(A), single).sites == ()


def test_region_algebra():
    lat = Lattice.chain(6)
    A, B = lat.region([0, 1, 2]), lat.region([2, 3])
    assert (A | B).sites == (0, 1, 2, 3)
    assert (A & B).sites == (2,)
    assert (A - B).sites == (0, 1)
    assert A.complement().sites == (3, 4, 5)
    assert lat.region([2]) <= A
    assert neighborhood(lat.region([2]), 1).sites == (1, 2, 3)


regions = st.lists(st.integers(0, 11), max_size=12)


@settings(max_examples=60, deadline=None)
@given(regions, regions)
def test_boundary_disjoint_and_closure_monotone(a, b):
    lat = Lattice.chain(12, periodic=True)
    sup = {j: (j, (j + 1) % 12) for j in range(12)}
    A = lat.region(a)
    B = lat.region(a + b)
    assert not (boundary(A, sup) & A)
    assert closure(A, sup) <= closure(B, sup)


def test_rectangle_class_values():
    # class k in 1D means side <= l_{k+1} = 1.5^(k+1)
    assert rectangle_class([1]) == 0
    assert rectangle_class([64]) == math.ceil(math.log(64) / math.log(1.5)) - 1
    # 2D: sides (2, 2) need 2 <= 1.5^((k+1)/2), first met at k = 3
    assert rectangle_class([2, 2]) == 3


def test_decomposition_length_64_four_pairs():
    lat = Lattice.chain(64)
    C = lat.all()
    pairs = decomposition_sequence(C, n_pairs=4, overlap=1)
    assert len(pairs) == 4
    overlaps = [A & B for A, B in pairs]
    for i in range(4):
        assert (pairs[i][0] | pairs[i][1]) == C
        assert len(overlaps[i]) >= 1
        for j in range(i + 1, 4):
            assert not (overlaps[i] & overlaps[j])


def test_decomposition_single_pair_near_midpoint():
    lat = Lattice.chain(20)
    (A, B), = decomposition_sequence(lat.all(), n_pairs=1, overlap=2)
    overlap = A & B
    assert overlap.sites == (12, 13)
    assert abs(sum(overlap.sites) / 2 - 10) <= 3


def test_decomposition_default_recipe_checks_conditions():
    lat = Lattice((40, 6))
    C = lat.all()
    k = rectangle_class([40, 6])
    pairs = decomposition_sequence(C)
    check_decomposition(C, pairs, math.sqrt(1.5 ** (k / 2)) / 8)


def test_decomposition_too_small():
    lat = Lattice.chain(4)
    with pytest.raises(ValueError, match="minimal admissible side"):
        decomposition_sequence(lat.all(), n_pairs=2, overlap=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10))
def test_decomposition_property(s, w, extra):
    n = 4 * s * w + 1 + extra
    lat = Lattice.chain(n)
    pairs = decomposition_sequence(lat.all(), n_pairs=s, overlap=w)
    check_decomposition(lat.all(), pairs, w)
