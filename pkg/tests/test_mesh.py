import numpy as np
import pytest
from pydantic import ValidationError

from src.config import DecompositionSpec
from src.mesh import EDGE_ORDER, Edge, build_decomposition, edge_cells, face_centers, subdomain_index


@pytest.fixture
def two_by_two():
    return build_decomposition(DecompositionSpec.square(2, 20))


def test_interface_counts():
    assert len(build_decomposition(DecompositionSpec.square(1, 4)).interfaces) == 0
    assert len(build_decomposition(DecompositionSpec.square(2, 4)).interfaces) == 4
    assert len(build_decomposition(DecompositionSpec.square(4, 4)).interfaces) == 24


def test_two_by_two_layout(two_by_two):
    assert two_by_two.h == pytest.approx(0.1)
    assert [t.sid for t in two_by_two.subdomains] == [(0, 0), (1, 0), (0, 1), (1, 1)]

    first = two_by_two.interfaces[0]
    assert (first.low, first.low_edge, first.high, first.high_edge) == ((0, 0), Edge.EAST, (1, 0), Edge.WEST)
    assert first.faces == 20
    assert first.length == pytest.approx(2.0)

    # vertical interfaces first, then horizontal
    assert all(i.low_edge is Edge.EAST for i in two_by_two.interfaces[:2])
    assert all(i.low_edge is Edge.NORTH for i in two_by_two.interfaces[2:])


def test_neighbor_relation_is_an_involution():
    decomposition = build_decomposition(DecompositionSpec.square(4, 3))
    for topology in decomposition.subdomains:
        for edge in topology.interface_edges():
            link = topology.links[edge]
            neighbor = decomposition.subdomain(link.neighbor)
            back = neighbor.links[edge.opposite]
            assert back.neighbor == topology.sid
            assert back.interface_id == link.interface_id
            assert back.orientation == -link.orientation


def test_corner_subdomain_edges(two_by_two):
    corner = two_by_two.subdomain((0, 0))
    assert corner.interface_edges() == [Edge.EAST, Edge.NORTH]
    assert corner.exterior_edges() == [Edge.WEST, Edge.SOUTH]
    assert two_by_two.neighbors((0, 0)) == [(1, 0), (0, 1)]


def test_interface_face_count_matches_subdomain_faces():
    decomposition = build_decomposition(DecompositionSpec.square(3, 5))
    per_subdomain = sum(
        topology.face_count(edge) for topology in decomposition.subdomains for edge in topology.interface_edges()
    )
    assert per_subdomain == 2 * decomposition.interface_face_count
    assert decomposition.interface_face_count == 12 * 5


def test_face_centers_are_shared_across_an_interface(two_by_two):
    left = face_centers(two_by_two.subdomain((0, 0)), Edge.EAST)
    right = face_centers(two_by_two.subdomain((1, 0)), Edge.WEST)
    np.testing.assert_allclose(left, right)
    assert left[0, 2] == pytest.approx(0.05)
    assert left[-1, 2] == pytest.approx(1.95)
    np.testing.assert_allclose(left[:, 0], 2.0)


def test_edge_cells_are_views():
    field = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(edge_cells(field, Edge.WEST), [0, 1, 2, 3])
    np.testing.assert_array_equal(edge_cells(field, Edge.EAST), [8, 9, 10, 11])
    np.testing.assert_array_equal(edge_cells(field, Edge.SOUTH), [0, 4, 8])
    np.testing.assert_array_equal(edge_cells(field, Edge.NORTH), [3, 7, 11])
    edge_cells(field, Edge.NORTH)[...] = -1
    assert field[1, 3] == -1


def test_opposite_edges():
    for edge in EDGE_ORDER:
        assert edge.opposite.opposite is edge
        assert edge.opposite.is_vertical == edge.is_vertical


def test_subdomain_index_bounds(two_by_two):
    assert subdomain_index(two_by_two.spec, (1, 1)) == 3
    with pytest.raises(ValueError):
        subdomain_index(two_by_two.spec, (2, 0))


def test_non_square_cells_rejected():
    with pytest.raises(ValidationError, match="square"):
        DecompositionSpec(domain_side=4.0, subdomains_x=2, subdomains_y=2, cells_x=20, cells_y=10)


def test_zero_cells_rejected():
    with pytest.raises(ValidationError, match="cells_x must be >= 1"):
        DecompositionSpec(subdomains_x=2, subdomains_y=2, cells_x=0, cells_y=0)
