"""
Shape-regular triangular meshes, uniform and graded, and the incenter
mesh metric used by all admissibility logic.

Meshes are produced by newest-vertex bisection starting from a structured
coarse triangulation made of right isosceles triangles.  Every element of
the refined mesh is therefore similar to the coarse ones, which keeps the
shape-regularity constant fixed under refinement.

Example
-------

>>> from hmatfem.mesh import GradingSpec, generate_mesh
>>> m = generate_mesh("lshape", grading=GradingSpec([(0.5, 0.5)], 5.0, 0.05))
>>> m.n_elements > 0
True
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import ConvexHull, QhullError, cKDTree

DOMAINS = ("unit_square", "lshape")

#: admissible spread c2/c1 of the element-wise grading ratio
GRADING_SPREAD = 16.0


class MeshError(ValueError):
    """Invalid mesh input (bad domain, grading set off the skeleton, ...)."""


class GradingError(MeshError):
    """Raised when the generated mesh does not follow the grading law."""

    def __init__(self, message, ratios):
        super().__init__(message)
        self.ratios = ratios


@dataclass(frozen=True)
class GradingSpec:
    """Grading towards a finite point set ``gamma_set``.

    Elements are refined until ``h(T) <= dist(x_T, gamma)**(1 - 1/alpha) * H``.
    """

    gamma_set: Sequence[tuple[float, float]]
    alpha: float
    coarse_width: float

    def __post_init__(self):
        pts = np.asarray(self.gamma_set, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise MeshError("grading set must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise MeshError("grading set has non-finite coordinates")
        if self.alpha < 1:
            raise MeshError(f"grading exponent must be >= 1, got {self.alpha}")
        if self.coarse_width <= 0:
            raise MeshError(f"coarse width must be > 0, got {self.coarse_width}")
        object.__setattr__(self, "gamma_set", tuple(map(tuple, pts.tolist())))

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.gamma_set, dtype=float)

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance of each row of ``x`` to the grading set."""
        d = np.linalg.norm(x[:, None, :] - self.points[None, :, :], axis=2)
        return d.min(axis=1)

    def target_width(self, x: np.ndarray) -> np.ndarray:
        return self.distance(x) ** (1.0 - 1.0 / self.alpha) * self.coarse_width


@dataclass(frozen=True)
class Cluster:
    """Sorted, duplicate-free set of element indices."""

    element_ids: np.ndarray

    def __post_init__(self):
        ids = np.unique(np.asarray(self.element_ids, dtype=np.int64).ravel())
        ids.setflags(write=False)
        object.__setattr__(self, "element_ids", ids)

    def __len__(self):
        return len(self.element_ids)

    def __iter__(self):
        return iter(self.element_ids.tolist())

    def __contains__(self, item):
        i = np.searchsorted(self.element_ids, item)
        return i < len(self.element_ids) and self.element_ids[i] == item

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return np.array_equal(self.element_ids, other.element_ids)

    def __hash__(self):
        return hash(self.element_ids.tobytes())

    def issubset(self, other: "Cluster") -> bool:
        return bool(np.isin(self.element_ids, other.element_ids).all())

    def union(self, other: "Cluster") -> "Cluster":
        return Cluster(np.union1d(self.element_ids, other.element_ids))


def _as_cluster(c) -> Cluster:
    return c if isinstance(c, Cluster) else Cluster(c)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation.

    Attributes
    ----------
    nodes : (n, 2) array
    elements : (m, 3) int array
        Vertex indices, counter-clockwise. Column 0 is the newest vertex, so
        the edge opposite to it is the refinement edge.
    boundary : (n,) bool array
    grading : GradingSpec or None
    domain : str or None
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    grading: GradingSpec | None = None
    domain: str | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elems = np.ascontiguousarray(self.elements, dtype=np.int64)
        bnd = np.ascontiguousarray(self.boundary, dtype=bool)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if elems.ndim != 2 or elems.shape[1] != 3 or len(elems) == 0:
            raise MeshError("elements must have shape (m, 3), m >= 1")
        if elems.min() < 0 or elems.max() >= len(nodes):
            raise MeshError("element refers to a missing node")
        if bnd.shape != (len(nodes),):
            raise MeshError("boundary flags must have one entry per node")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("non-finite node coordinates")
        for a in (nodes, elems, bnd):
            a.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "boundary", bnd)
        if np.any(self.areas <= 0):
            raise MeshError("degenerate or clockwise element")

    # -- sizes --------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def vertex_coords(self) -> np.ndarray:
        """(m, 3, 2) coordinates of the element vertices."""
        return self.nodes[self.elements]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def _edge_lengths(self) -> np.ndarray:
        # column i is the length of the edge opposite vertex i
        p = self.vertex_coords
        return np.stack(
            [
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            ],
            axis=1,
        )

    @cached_property
    def widths(self) -> np.ndarray:
        """Element diameters h(T), the longest edge."""
        return self._edge_lengths.max(axis=1)

    @cached_property
    def inradii(self) -> np.ndarray:
        return 2.0 * self.areas / self._edge_lengths.sum(axis=1)

    @cached_property
    def incenters(self) -> np.ndarray:
        lens = self._edge_lengths
        w = lens / lens.sum(axis=1, keepdims=True)
        return np.einsum("mi,mij->mj", w, self.vertex_coords)

    @property
    def h_max(self) -> float:
        return float(self.widths.max())

    @property
    def h_min(self) -> float:
        return float(self.widths.min())

    # -- topology -----------------------------------------------------------

    @cached_property
    def node_element_incidence(self) -> sp.csr_matrix:
        """(n_nodes, n_elements) incidence matrix."""
        m = self.n_elements
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(m), 3)
        a = sp.csr_matrix(
            (np.ones(3 * m, dtype=np.int8), (rows, cols)), shape=(self.n_nodes, m)
        )
        a.sort_indices()
        return a

    @cached_property
    def element_patch_matrix(self) -> sp.csr_matrix:
        """Boolean (m, m) matrix, True where the element closures intersect."""
        inc = self.node_element_incidence.astype(np.int32)
        adj = (inc.T @ inc).tocsr()
        adj.data[:] = 1
        adj.sort_indices()
        return adj.astype(bool)

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique edges, element-to-edge map and edge multiplicity."""
        return _edge_structure(self.elements, self.n_nodes)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.incenters)

    @cached_property
    def shape_constant(self) -> float:
        """Smallest gamma with B(x_T, h/gamma) in T and patch(T) in B(x_T, gamma h)."""
        inner = self.widths / self.inradii
        reach = self.element_patch_matrix.astype(np.int32) @ self.node_element_incidence.T.astype(np.int32)
        reach = reach.tocoo()
        d = np.linalg.norm(self.nodes[reach.col] - self.incenters[reach.row], axis=1)
        outer = np.zeros(self.n_elements)
        np.maximum.at(outer, reach.row, d)
        return float(max(inner.max(), (outer / self.widths).max()))

    @cached_property
    def domain_diameter(self) -> float:
        b = self.nodes
        lo, hi = b.min(axis=0), b.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def check(self) -> None:
        """Assert the structural invariants, raising MeshError on failure."""
        _, _, mult = self.edges
        if mult.max() > 2:
            raise MeshError("edge shared by more than two elements")
        edges, _, mult = self.edges
        bnd_edges = edges[mult == 1]
        if not self.boundary[bnd_edges].all():
            raise MeshError("boundary edge with interior node (hanging node?)")
        if self.domain in DOMAINS:
            ref = domain_area(self.domain)
            if abs(self.areas.sum() - ref) > 1e-10 * ref:
                raise MeshError("element areas do not add up to the domain area")
        if np.any(self.widths / self.inradii > self.shape_constant * (1 + 1e-12)):
            raise MeshError("element violates the shape constant")

    # -- text format --------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"nodes {self.n_nodes} elements {self.n_elements}"]
        lines += [
            f"{x:.17g} {y:.17g} {int(b)}"
            for (x, y), b in zip(self.nodes.tolist(), self.boundary.tolist())
        ]
        lines += [f"{i} {j} {k}" for i, j, k in self.elements.tolist()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if len(head) != 4 or head[0] != "nodes" or head[2] != "elements":
            raise MeshError(f"bad mesh header: {lines[0]!r}")
        n, m = int(head[1]), int(head[3])
        if len(lines) != 1 + n + m:
            raise MeshError("line count does not match header")
        node_rows = [ln.split() for ln in lines[1 : 1 + n]]
        nodes = np.array([[float(r[0]), float(r[1])] for r in node_rows])
        bnd = np.array([r[2] == "1" for r in node_rows])
        elems = np.array([[int(t) for t in ln.split()] for ln in lines[1 + n :]])
        return cls(nodes, elems, bnd)

    @classmethod
    def read(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_text(fh.read())


def domain_area(domain: str) -> float:
    return {"unit_square": 1.0, "lshape": 0.75}[domain]


def _edge_structure(elements, n_nodes):
    # edge i of an element is the one opposite vertex i; edge 0 is the
    # refinement edge
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = elements[:, loc].reshape(-1, 2)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    key = lo * n_nodes + hi
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    edges = np.stack([uniq // n_nodes, uniq % n_nodes], axis=1)
    return edges, inverse.reshape(-1, 3), counts


# -- generation ---------------------------------------------------------------


def coarse_mesh(domain: str):
    """Structured 2x2-square triangulation, right angle as newest vertex."""
    if domain not in DOMAINS:
        raise MeshError(f"unknown domain {domain!r}; choose from {DOMAINS}")
    k = 2
    xs = np.linspace(0.0, 1.0, k + 1)
    idx = {}
    nodes = []
    for j in range(k + 1):
        for i in range(k + 1):
            if domain == "lshape" and i > k // 2 and j > k // 2:
                continue
            idx[i, j] = len(nodes)
            nodes.append((xs[i], xs[j]))
    elems = []
    for j in range(k):
        for i in range(k):
            if domain == "lshape" and i >= k // 2 and j >= k // 2:
                continue
            p00, p10 = idx[i, j], idx[i + 1, j]
            p01, p11 = idx[i, j + 1], idx[i + 1, j + 1]
            elems.append((p10, p11, p00))
            elems.append((p01, p00, p11))
    nodes = np.array(nodes)
    elems = np.array(elems, dtype=np.int64)
    edges, _, mult = _edge_structure(elems, len(nodes))
    bnd = np.zeros(len(nodes), dtype=bool)
    bnd[edges[mult == 1].ravel()] = True
    return nodes, elems, bnd


def _on_segment(p, a, b, tol=1e-12):
    ab = b - a
    t = np.dot(p - a, ab) / np.dot(ab, ab)
    if t < -tol or t > 1 + tol:
        return False
    return np.linalg.norm(a + t * ab - p) <= tol


def _check_gamma_on_skeleton(nodes, elems, gamma: np.ndarray) -> None:
    edges, _, _ = _edge_structure(elems, len(nodes))
    for g in gamma:
        if not any(_on_segment(g, nodes[a], nodes[b]) for a, b in edges):
            raise MeshError(
                f"grading point ({g[0]:g}, {g[1]:g}) is not on the mesh skeleton"
            )


def bisect(nodes, elems, boundary, marked):
    """One round of newest-vertex bisection with conforming closure.

    Returns new ``(nodes, elems, boundary)``.  Marked elements are bisected
    at least once; neighbours are bisected as needed to avoid hanging nodes.
    """
    n = len(nodes)
    edges, e2e, mult = _edge_structure(elems, n)
    cut = np.zeros(len(edges), dtype=bool)
    cut[e2e[marked, 0]] = True
    while True:
        need = (cut[e2e[:, 1]] | cut[e2e[:, 2]]) & ~cut[e2e[:, 0]]
        if not need.any():
            break
        cut[e2e[need, 0]] = True

    cut_ids = np.flatnonzero(cut)
    mid = np.full(len(edges), -1, dtype=np.int64)
    mid[cut_ids] = n + np.arange(len(cut_ids))
    new_nodes = 0.5 * (nodes[edges[cut_ids, 0]] + nodes[edges[cut_ids, 1]])
    nodes = np.vstack([nodes, new_nodes])
    boundary = np.concatenate([boundary, mult[cut_ids] == 1])

    emid = mid[e2e]
    refine = emid[:, 0] >= 0
    keep = elems[~refine]
    par = elems[refine]
    pm = emid[refine]
    v0, v1, v2 = par[:, 0], par[:, 1], par[:, 2]
    m0, m1, m2 = pm[:, 0], pm[:, 1], pm[:, 2]

    out = [keep]
    # first child (m0, v0, v1), refinement edge is the parent's edge 2
    c1 = m2 >= 0
    out.append(np.stack([m0, v0, v1], axis=1)[~c1])
    out.append(np.stack([m2[c1], m0[c1], v0[c1]], axis=1))
    out.append(np.stack([m2[c1], v1[c1], m0[c1]], axis=1))
    # second child (m0, v2, v0), refinement edge is the parent's edge 1
    c2 = m1 >= 0
    out.append(np.stack([m0, v2, v0], axis=1)[~c2])
    out.append(np.stack([m1[c2], m0[c2], v2[c2]], axis=1))
    out.append(np.stack([m1[c2], v0[c2], m0[c2]], axis=1))
    return nodes, np.concatenate(out, axis=0), boundary


def _refine_to(nodes, elems, bnd, target_fn, max_rounds=400):
    for _ in range(max_rounds):
        p = nodes[elems]
        lens = np.stack(
            [
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            ],
            axis=1,
        )
        h = lens.max(axis=1)
        inc = np.einsum("mi,mij->mj", lens / lens.sum(axis=1, keepdims=True), p)
        marked = h > target_fn(inc) * (1 + 1e-12)
        if not marked.any():
            return nodes, elems, bnd
        nodes, elems, bnd = bisect(nodes, elems, bnd, marked)
    raise MeshError("refinement did not reach a fixpoint")


def generate_mesh(
    domain: str,
    grading: GradingSpec | None = None,
    uniform_width: float | None = None,
) -> Mesh:
    """Generate a uniform or graded mesh of ``domain``.

    Exactly one of ``grading`` and ``uniform_width`` must be given.  A uniform
    mesh of width ``w`` is produced by the same refinement as a grading with
    exponent 1 and coarse width ``w``, so both give identical meshes.
    """
    if (grading is None) == (uniform_width is None):
        raise MeshError("give exactly one of grading / uniform_width")
    nodes, elems, bnd = coarse_mesh(domain)
    if grading is None:
        if not uniform_width > 0:
            raise MeshError(f"uniform width must be > 0, got {uniform_width}")
        nodes, elems, bnd = _refine_to(
            nodes, elems, bnd, lambda x: np.full(len(x), float(uniform_width))
        )
        return Mesh(nodes, elems, bnd, None, domain)

    _check_gamma_on_skeleton(nodes, elems, grading.points)
    nodes, elems, bnd = _refine_to(nodes, elems, bnd, grading.target_width)
    mesh = Mesh(nodes, elems, bnd, grading, domain)
    ratios = grading_ratios(mesh)
    if ratios.max() / ratios.min() > GRADING_SPREAD:
        raise GradingError(
            f"grading law not achieved: c1={ratios.min():.4g}, "
            f"c2={ratios.max():.4g}, c2/c1={ratios.max() / ratios.min():.4g}",
            ratios,
        )
    return mesh


def grading_ratios(mesh: Mesh) -> np.ndarray:
    """Element-wise h(T) / (dist(x_T, gamma)**(1 - 1/alpha) * H)."""
    if mesh.grading is None:
        raise MeshError("mesh carries no grading")
    return mesh.widths / mesh.grading.target_width(mesh.incenters)


# -- mesh metric --------------------------------------------------------------


def mesh_dist(mesh: Mesh, a, b) -> float:
    """Minimal incenter distance between two clusters."""
    a, b = _as_cluster(a), _as_cluster(b)
    if len(a) == 0 or len(b) == 0:
        raise MeshError("clusters must be nonempty")
    if len(a) > len(b):
        a, b = b, a
    tree = cKDTree(mesh.incenters[b.element_ids])
    d, _ = tree.query(mesh.incenters[a.element_ids])
    return float(d.min())


def point_set_diameter(x: np.ndarray) -> float:
    """Exact diameter of a planar point set (via its convex hull)."""
    x = np.unique(np.asarray(x, dtype=float), axis=0)
    if len(x) < 2:
        return 0.0
    if len(x) > 8:
        try:
            x = x[ConvexHull(x).vertices]
        except QhullError:
            # collinear points: the diameter is spanned by the extreme ones
            d = x - x[0]
            t = d @ d[np.argmax(np.einsum("ij,ij->i", d, d))]
            x = x[[np.argmin(t), np.argmax(t)]]
    diff = x[:, None, :] - x[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max()))


def cluster_diam(mesh: Mesh, a) -> float:
    """Maximal incenter distance within a cluster (0 for singletons)."""
    a = _as_cluster(a)
    if len(a) == 0:
        raise MeshError("cluster must be nonempty")
    return point_set_diameter(mesh.incenters[a.element_ids])


def distance_to_cluster(mesh: Mesh, b) -> np.ndarray:
    """dist(T, B) for every element T."""
    b = _as_cluster(b)
    if len(b) == 0:
        raise MeshError("cluster must be nonempty")
    tree = cKDTree(mesh.incenters[b.element_ids])
    d, _ = tree.query(mesh.incenters)
    return d


def inflate(mesh: Mesh, b, delta: float) -> Cluster:
    """All elements within mesh-metric distance ``delta`` of ``b``."""
    if delta < 0:
        raise MeshError("inflation radius must be >= 0")
    b = _as_cluster(b)
    return Cluster(np.flatnonzero(distance_to_cluster(mesh, b) <= delta))


def patch(mesh: Mesh, target) -> Cluster:
    """Elements whose closure meets the closure of ``target``.

    ``target`` is a Cluster (or element ids) or a float array of points of
    shape (k, 2).
    """
    if isinstance(target, np.ndarray) and target.dtype.kind == "f":
        return Cluster(_elements_containing_points(mesh, target.reshape(-1, 2)))
    target = _as_cluster(target)
    sel = np.zeros(mesh.n_elements)
    sel[target.element_ids] = 1
    hit = mesh.element_patch_matrix.astype(np.int32) @ sel
    return Cluster(np.flatnonzero(hit > 0))


def _elements_containing_points(mesh: Mesh, pts, tol=1e-12):
    p = mesh.vertex_coords
    found = []
    for q in pts:
        # barycentric coordinates of q in every element
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        r = q - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        l0 = 1 - l1 - l2
        scale = tol * max(1.0, float(np.abs(q).max()))
        ok = (l0 >= -scale / mesh.inradii) & (l1 >= -scale / mesh.inradii)
        ok &= l2 >= -scale / mesh.inradii
        found.append(np.flatnonzero(ok))
    return np.concatenate(found) if found else np.zeros(0, dtype=np.int64)


def elements_touching_nodes(mesh: Mesh, node_ids: Iterable[int]) -> Cluster:
    node_ids = np.asarray(list(node_ids), dtype=np.int64)
    inc = mesh.node_element_incidence[node_ids]
    return Cluster(np.unique(inc.indices))


# -- cardinality diagnostics --------------------------------------------------


@dataclass
class CardinalityReport:
    c_card: float
    width_ratio: float
    cluster_ratios: np.ndarray
    width_limit: float
    cluster_limit: float

    @property
    def max_cluster_ratio(self) -> float:
        return float(self.cluster_ratios.max()) if len(self.cluster_ratios) else 0.0

    @property
    def width_ok(self) -> bool:
        return self.width_ratio <= self.width_limit

    @property
    def clusters_ok(self) -> bool:
        return self.max_cluster_ratio <= self.cluster_limit

    @property
    def passed(self) -> bool:
        return self.width_ok and self.clusters_ok

    def to_text(self) -> str:
        flag = lambda ok: "pass" if ok else "FAIL"
        return "\n".join(
            [
                f"C_card {self.c_card:g}",
                f"h_max^C/h_min {self.width_ratio:.6g} limit {self.width_limit:g} "
                f"{flag(self.width_ok)}",
                f"max card ratio {self.max_cluster_ratio:.6g} over "
                f"{len(self.cluster_ratios)} clusters limit {self.cluster_limit:g} "
                f"{flag(self.clusters_ok)}",
            ]
        ) + "\n"


def sample_ball_clusters(mesh: Mesh, count: int, rng: np.random.Generator):
    """Mesh-metric balls with random center element and log-uniform radius."""
    out = []
    for _ in range(count):
        t = int(rng.integers(mesh.n_elements))
        lo, hi = np.log(mesh.widths[t]), np.log(mesh.domain_diameter)
        rad = float(np.exp(rng.uniform(lo, hi)))
        ids = mesh.kdtree.query_ball_point(mesh.incenters[t], rad)
        out.append(Cluster(ids))
    return out


def regularity_cardinality_report(
    mesh: Mesh,
    c_card: float,
    sample_count: int,
    seed: int = 0,
    width_limit: float = 100.0,
    cluster_limit: float = 10.0,
) -> CardinalityReport:
    """Measure the two locally-bounded-cardinality quantities on ``mesh``."""
    if c_card < 1:
        raise ValueError("C_card must be >= 1")
    rng = np.random.default_rng(seed)
    ratios = []
    for b in sample_ball_clusters(mesh, sample_count, rng):
        hb = mesh.widths[b.element_ids].max()
        denom = (1.0 + cluster_diam(mesh, b) / hb) ** (2 * c_card)
        ratios.append(len(b) / denom)
    return CardinalityReport(
        c_card=c_card,
        width_ratio=mesh.h_max**c_card / mesh.h_min,
        cluster_ratios=np.array(ratios),
        width_limit=width_limit,
        cluster_limit=cluster_limit,
    )
