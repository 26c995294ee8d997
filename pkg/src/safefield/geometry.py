"""Convex cells as halfspace intersections, and the environment they tile.

A halfspace set stores rows (A, b) meaning A x + b <= 0 with unit row norms,
so -(A[j] x + b[j]) is the signed distance of x to facet j (positive inside).
"""

import numpy as np

from .errors import (
    DegenerateInput,
    GoalNotVertex,
    LandmarkOutOfView,
    NonConvexInput,
    UnboundedPolytope,
)

ABS_TOL = 1e-9
DEDUP_TOL = 1e-8


class HalfspaceSet:
    """Intersection of halfspaces A x + b <= 0 with unit-norm rows."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DegenerateInput("row count mismatch between A and b")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < ABS_TOL):
            raise DegenerateInput("zero-norm halfspace row")
        self.A = A / norms[:, None]
        self.b = b / norms

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def values(self, x):
        """Row values A x + b (nonpositive inside)."""
        return self.A @ np.asarray(x, dtype=float) + self.b

    def contains(self, x, tol=ABS_TOL):
        return bool(np.all(self.values(x) <= tol))

    def facet_distance(self, x):
        """Signed distance to each facet, positive inside."""
        return -self.values(x)


def polygon_to_halfspaces(vertices):
    """Halfspace form of a convex polygon given counterclockwise vertices."""
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2:
        raise DegenerateInput("vertices must be (m, 2)")
    m = V.shape[0]
    if m < 3:
        raise DegenerateInput("need at least 3 vertices")
    edges = np.roll(V, -1, axis=0) - V
    if np.any(np.linalg.norm(edges, axis=1) < DEDUP_TOL):
        raise DegenerateInput("repeated adjacent vertices")
    # cross product of consecutive edges: positive for a ccw convex chain
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if np.any(np.abs(cross) < ABS_TOL):
        raise DegenerateInput("collinear adjacent edges")
    if np.any(cross < 0):
        raise NonConvexInput("vertices must trace a convex counterclockwise chain")
    # outward normal of edge e is (e_y, -e_x) for a ccw polygon
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    offsets = -np.sum(normals * V, axis=1)
    return HalfspaceSet(normals, offsets)


def _bounded_2d(A):
    # bounded iff no angular gap of pi or more between outward normals
    ang = np.sort(np.arctan2(A[:, 1], A[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return np.max(gaps) < np.pi - ABS_TOL


def cell_vertices(hs):
    """Vertices of a bounded 2-D halfspace intersection, counterclockwise."""
    if hs.dim != 2:
        raise DegenerateInput("vertex enumeration implemented for 2-D only")
    if not _bounded_2d(hs.A):
        raise UnboundedPolytope("halfspace normals leave an open direction")
    pts = []
    m = hs.n_rows
    for i in range(m):
        for j in range(i + 1, m):
            M = np.stack([hs.A[i], hs.A[j]])
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < ABS_TOL:
                continue
            p = np.linalg.solve(M, -np.array([hs.b[i], hs.b[j]]))
            if hs.contains(p, tol=ABS_TOL * (1.0 + np.linalg.norm(p))):
                pts.append(p)
    if not pts:
        raise DegenerateInput("halfspace intersection has no vertices")
    pts = np.array(pts)
    keep = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < DEDUP_TOL for q in keep):
            keep.append(p)
    V = np.array(keep)
    if V.shape[0] < 3:
        raise DegenerateInput("halfspace intersection is lower-dimensional")
    center = V.mean(axis=0)
    order = np.argsort(np.arctan2(V[:, 1] - center[1], V[:, 0] - center[0]))
    return V[order]


class ConvexCell:
    """One convex cell of the decomposition.

    exit_face is the body row index the high-level plan leaves through; it is
    None until a plan assigns it (and stays None for a goal-vertex cell).
    """

    def __init__(self, cell_id, body, landmark_ids):
        self.id = int(cell_id)
        self.body = body
        self.landmark_ids = list(landmark_ids)
        self.exit_face = None
        self._vertices = None

    @property
    def vertices(self):
        if self._vertices is None:
            self._vertices = cell_vertices(self.body)
        return self._vertices

    def contains(self, x, tol=ABS_TOL):
        return self.body.contains(x, tol=tol)

    def obstacle_rows(self):
        """Row indices that act as barriers (everything except the exit face)."""
        return [j for j in range(self.body.n_rows) if j != self.exit_face]


class Environment:
    """Cells, landmarks and the task endpoints."""

    def __init__(self, cells, landmarks, start, goal, patrol_cycle=None):
        self.cells = list(cells)
        self.landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
        self.start = np.asarray(start, dtype=float)
        self.goal = np.asarray(goal, dtype=float)
        self.patrol_cycle = list(patrol_cycle) if patrol_cycle is not None else None
        self.dimension = self.landmarks.shape[1]
        n_l = self.landmarks.shape[0]
        for cell in self.cells:
            for lid in cell.landmark_ids:
                if not 0 <= lid < n_l:
                    raise LandmarkOutOfView(
                        "cell %d references landmark %d of %d" % (cell.id, lid, n_l)
                    )
        if not any(
            np.linalg.norm(v - self.goal) <= 1e-9 for c in self.cells for v in c.vertices
        ):
            raise GoalNotVertex("goal does not coincide with any cell vertex")

    def cells_containing(self, x, tol=ABS_TOL):
        return [c for c in self.cells if c.contains(x, tol=tol)]

    def cell_by_id(self, cell_id):
        for c in self.cells:
            if c.id == cell_id:
                return c
        raise KeyError(cell_id)


def environment_from_dict(obj):
    """Build an Environment from its JSON-style dict form."""
    cells = []
    for i, spec in enumerate(obj["cells"]):
        body = polygon_to_halfspaces(spec["vertices"])
        cells.append(ConvexCell(spec.get("id", i), body, spec["landmark_ids"]))
    return Environment(
        cells,
        obj["landmarks"],
        obj["start"],
        obj["goal"],
        patrol_cycle=obj.get("patrol_cycle"),
    )
