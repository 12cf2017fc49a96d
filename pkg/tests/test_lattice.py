import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from floqising.exceptions import InputDomainError
from floqising.lattice import Lattice


def test_site_index_row_major_and_wraps():
    lat = Lattice(4, 4)
    assert lat.site_index(1, 2) == 9
    assert lat.coords(9) == (1, 2)
    with pytest.raises(InputDomainError):
        lat.site_index(-1, 0)


def test_neighbors_examples():
    lat = Lattice(4, 4)
    assert sorted(lat.neighbors(0)) == [1, 3, 4, 12]
    assert sorted(lat.neighbors(5)) == [1, 4, 6, 9]


@pytest.mark.parametrize("nx,ny,layers,per_layer", [(4, 4, 4, 8), (7, 8, 4, 28), (8, 7, 4, 28), (14, 4, 4, 28)])
def test_edge_layers_are_four_perfect_matchings(nx, ny, layers, per_layer):
    lat = Lattice(nx, ny)
    got = lat.edge_layers
    assert len(got) == layers
    assert all(len(layer) == per_layer for layer in got)
    flat = [e for layer in got for e in layer]
    assert sorted(flat) == sorted(lat.edges)
    for layer in got:
        touched = [q for e in layer for q in e]
        assert len(touched) == len(set(touched))


def test_odd_odd_torus_needs_five_layers():
    assert len(Lattice(3, 3).edge_layers) == 5


@pytest.mark.parametrize("nx,ny,size", [(4, 4, 64), (3, 3, 36), (7, 8, 224)])
def test_symmetry_group_size_and_automorphism(nx, ny, size):
    lat = Lattice(nx, ny)
    group = lat.symmetry_group
    assert len(group) == size
    edges = set(lat.edges)
    for g in group[:: max(1, size // 10)]:
        assert {tuple(sorted((g(a), g(b)))) for a, b in edges} == edges


@given(st.integers(2, 9), st.integers(2, 9))
def test_edge_count_and_coordination(nx, ny):
    lat = Lattice(nx, ny)
    expected = (nx if nx > 2 else 1) * ny + (ny if ny > 2 else 1) * nx
    assert len(lat.edges) == expected
    degree = (2 if nx > 2 else 1) + (2 if ny > 2 else 1)
    for i in range(lat.n_sites):
        assert len(lat.neighbors(i)) == degree


def test_rejects_tiny_lattice():
    with pytest.raises(InputDomainError):
        Lattice(1, 4)
    with pytest.raises(InputDomainError):
        Lattice(4, 4).coords(16)


def test_columns():
    lat = Lattice(3, 2)
    assert lat.column_of().tolist() == [0, 1, 2, 0, 1, 2]
    assert math.isclose(lat.n_sites, 6)
