import numpy as np
import pytest

from helpers import random_convex_polygon
from safefield.errors import DegenerateInput, GoalNotVertex, NonConvexInput
from safefield.geometry import (
    ConvexCell,
    Environment,
    HalfspaceSet,
    cell_vertices,
    polygon_to_halfspaces,
)

TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def sorted_rows(a):
    a = np.asarray(a, dtype=float)
    return a[np.lexsort((a[:, 1], a[:, 0]))]


def test_triangle_halfspace_oracle():
    hs = polygon_to_halfspaces(TRIANGLE)
    assert hs.n_rows == 3 and hs.dim == 2
    # edge (0,0)-(1,0): outward normal (0,-1), offset 0
    # edge (1,0)-(0,1): outward normal (1,1)/sqrt(2), offset -1/sqrt(2)
    # edge (0,1)-(0,0): outward normal (-1,0), offset 0
    expect = {(0.0, -1.0, 0.0), (-1.0, 0.0, 0.0)}
    got = {tuple(np.round(np.r_[hs.A[j], hs.b[j]], 12)) for j in range(3)}
    assert expect <= got
    s = 1.0 / np.sqrt(2.0)
    assert any(np.allclose(np.r_[hs.A[j], hs.b[j]], [s, s, -s]) for j in range(3))


def test_rows_are_normalized():
    hs = polygon_to_halfspaces(TRIANGLE * 7.0)
    assert np.allclose(np.linalg.norm(hs.A, axis=1), 1.0)


def test_containment_and_facet_distance():
    hs = polygon_to_halfspaces(TRIANGLE)
    assert hs.contains([0.25, 0.25])
    assert not hs.contains([1.0, 1.0])
    d = hs.facet_distance([0.25, 0.25])
    assert np.all(d > 0)
    assert np.any(hs.facet_distance([2.0, 2.0]) < 0)


def test_vertex_halfspace_roundtrip_square():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
    back = cell_vertices(polygon_to_halfspaces(verts))
    assert np.allclose(sorted_rows(back), sorted_rows(verts), atol=1e-9)


def test_vertex_halfspace_roundtrip_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        verts = random_convex_polygon(rng)
        back = cell_vertices(polygon_to_halfspaces(verts))
        assert back.shape == verts.shape
        assert np.allclose(sorted_rows(back), sorted_rows(verts), atol=1e-7)


def test_vertices_inside_own_halfspaces():
    rng = np.random.default_rng(11)
    for _ in range(20):
        hs = polygon_to_halfspaces(random_convex_polygon(rng))
        for v in cell_vertices(hs):
            assert hs.contains(v, tol=1e-7)


def test_empty_intersection_raises():
    hs = HalfspaceSet(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                      np.array([-1.0, -1.0, 1.0, 1.0]))
    # x1 >= 1 and x1 <= -1 cannot hold together
    with pytest.raises(DegenerateInput):
        cell_vertices(hs)


def test_nonconvex_polygon_rejected():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.0, 2.0]])
    with pytest.raises(NonConvexInput):
        polygon_to_halfspaces(verts)


def test_obstacle_rows_exclude_exit_face():
    cell = ConvexCell(0, polygon_to_halfspaces(TRIANGLE), [0])
    cell.exit_face = 1
    assert cell.obstacle_rows() == [0, 2]


def test_environment_ingest(annulus_env):
    env = annulus_env
    assert len(env.cells) == 8
    assert env.dimension == 2
    assert np.allclose(env.goal, [40.0, 10.0])
    both = env.cells_containing([20.0, 5.0])
    assert {c.id for c in both} == {0, 1}


def test_goal_must_be_vertex():
    cells = [ConvexCell(0, polygon_to_halfspaces(TRIANGLE), [0])]
    with pytest.raises(GoalNotVertex):
        Environment(cells, [[0.2, 0.2]], [0.2, 0.2], [0.5, 0.25])
