"""
P1 Galerkin assembly with homogeneous Dirichlet conditions, the local dual
basis of the hat functions and the coordinate mappings built from it.

Conventions
-----------
* DOFs are the interior nodes, numbered in node order (zero based).
* ``A[m, n] = a(phi_n, phi_m)``: row = test function, column = trial function.
* Element-wise functions (:class:`ElementField`) are stored by their P2
  Lagrange values per element, which represents every quantity used here
  (P1 data, products of two P1 functions) exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

#: edge-midpoint rule, exact for polynomials of degree 2
MIDPOINT_BARY = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
MIDPOINT_WEIGHTS = np.full(3, 1.0 / 3.0)

# symmetric 6-point rule, exact for degree 4
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
GAUSS6_BARY = np.array(
    [
        [1 - 2 * _A, _A, _A],
        [_A, 1 - 2 * _A, _A],
        [_A, _A, 1 - 2 * _A],
        [1 - 2 * _B, _B, _B],
        [_B, 1 - 2 * _B, _B],
        [_B, _B, 1 - 2 * _B],
    ]
)
GAUSS6_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)

#: P1 mass matrix of the reference triangle (area 1/2)
REFERENCE_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
#: coefficients of the dual shape functions in the P1 shape basis
DUAL_SHAPE_COEFFS = np.linalg.inv(REFERENCE_MASS)


class CoercivityError(ValueError):
    def __init__(self, point, eigenvalue):
        super().__init__(
            f"a1 not coercive at ({point[0]:.6g}, {point[1]:.6g}): "
            f"min eigenvalue of sym(a1) = {eigenvalue:.6g}"
        )
        self.point = point
        self.eigenvalue = eigenvalue


class SolverError(RuntimeError):
    pass


# -- coefficients -------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    """PDE coefficients, each vectorised over an (n, 2) array of points."""

    a1: Callable[[np.ndarray], np.ndarray]
    a2: Callable[[np.ndarray], np.ndarray]
    a3: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    @classmethod
    def constant(cls, a1, a2=(0.0, 0.0), a3=0.0, name="custom"):
        a1 = np.asarray(a1, dtype=float).reshape(2, 2)
        a2 = np.asarray(a2, dtype=float).reshape(2)
        a3 = float(a3)
        return cls(
            lambda x: np.broadcast_to(a1, (len(x), 2, 2)),
            lambda x: np.broadcast_to(a2, (len(x), 2)),
            lambda x: np.full(len(x), a3),
            name,
        )

    @classmethod
    def laplace(cls):
        return cls.constant(np.eye(2), name="laplace")

    @classmethod
    def paper_s4(cls):
        """Benchmark coefficients a1 = [[10, -1], [-1, 1]], a2 = (10 y, 0), a3 = 1."""
        a1 = np.array([[10.0, -1.0], [-1.0, 1.0]])

        def a2(x):
            out = np.zeros((len(x), 2))
            out[:, 0] = 10.0 * x[:, 1]
            return out

        return cls(
            lambda x: np.broadcast_to(a1, (len(x), 2, 2)),
            a2,
            lambda x: np.ones(len(x)),
            "paper_s4",
        )

    @property
    def has_convection(self) -> bool:
        probe = np.random.default_rng(0).random((8, 2))
        return bool(np.any(self.a2(probe) != 0))


def min_sym_eigenvalue(a1: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part of each 2x2 matrix."""
    p = a1[:, 0, 0]
    s = a1[:, 1, 1]
    q = 0.5 * (a1[:, 0, 1] + a1[:, 1, 0])
    return 0.5 * (p + s) - np.sqrt(0.25 * (p - s) ** 2 + q**2)


# -- dof map ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: Mesh
    dof_to_node: np.ndarray
    node_to_dof: np.ndarray  # -1 on boundary nodes

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        dof_to_node = np.flatnonzero(~mesh.boundary)
        node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
        node_to_dof[dof_to_node] = np.arange(len(dof_to_node))
        return cls(mesh, dof_to_node, node_to_dof)

    @property
    def N(self) -> int:
        return len(self.dof_to_node)

    def to_nodal(self, x: np.ndarray) -> np.ndarray:
        """Extend a DOF vector by zero boundary values."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.dof_to_node] = x
        return out

    def element_dofs(self) -> np.ndarray:
        return self.node_to_dof[self.mesh.elements]


# -- local matrices -----------------------------------------------------------


def p1_gradients(mesh: Mesh) -> np.ndarray:
    """(m, 3, 2) constant gradients of the three barycentric coordinates."""
    p = mesh.vertex_coords
    # gradient of lambda_i is the rotated opposite edge over 2|T|
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    rot = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    return rot / (2.0 * mesh.areas)[:, None, None]


def quadrature_points(mesh: Mesh, bary: np.ndarray) -> np.ndarray:
    """(m, q, 2) physical points for barycentric rule points."""
    return np.einsum("qi,mij->mqj", bary, mesh.vertex_coords)


def element_matrices(mesh: Mesh, coeffs: Coefficients, alpha1: float = 0.0) -> np.ndarray:
    """Local system matrices ``K[t, i, j] = a(phi_j, phi_i)`` on element t."""
    m = mesh.n_elements
    g = p1_gradients(mesh)
    xq = quadrature_points(mesh, MIDPOINT_BARY).reshape(-1, 2)
    a1 = np.asarray(coeffs.a1(xq), dtype=float).reshape(m, 3, 2, 2)
    a2 = np.asarray(coeffs.a2(xq), dtype=float).reshape(m, 3, 2)
    a3 = np.asarray(coeffs.a3(xq), dtype=float).reshape(m, 3)

    lam = min_sym_eigenvalue(a1.reshape(-1, 2, 2))
    bad = np.flatnonzero(~(lam > alpha1))
    if len(bad):
        raise CoercivityError(xq[bad[0]], float(lam[bad[0]]))

    w = mesh.areas[:, None] * MIDPOINT_WEIGHTS[None, :]
    a1_int = np.einsum("mq,mqkl->mkl", w, a1)
    diff = np.einsum("mik,mkl,mjl->mij", g, a1_int, g)
    # (a2 . grad phi_j) phi_i summed over quadrature points
    adv = np.einsum("mq,mqk,mjk,qi->mij", w, a2, g, MIDPOINT_BARY)
    rea = np.einsum("mq,mq,qi,qj->mij", w, a3, MIDPOINT_BARY, MIDPOINT_BARY)
    return diff + adv + rea


def _scatter(local: np.ndarray, idx: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(idx, 3, axis=1).ravel()
    cols = np.tile(idx, (1, 3)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def assemble_system(mesh: Mesh, coeffs: Coefficients, alpha1: float = 0.0):
    """Assemble the Dirichlet system matrix.

    Returns
    -------
    A : scipy.sparse.csr_matrix
    dofmap : DofMap
    """
    dofmap = DofMap.from_mesh(mesh)
    local = element_matrices(mesh, coeffs, alpha1)
    return _scatter(local, dofmap.element_dofs(), dofmap.N), dofmap


@dataclass(frozen=True, eq=False)
class NormMatrices:
    """Full P1 (boundary included) mass and H1-seminorm matrices."""

    mesh: Mesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    local_mass: np.ndarray
    local_stiffness: np.ndarray

    def element_sq_norms(self, v: np.ndarray):
        """Per-element squared L2 norm and H1 seminorm of nodal vector ``v``."""
        ve = v[self.mesh.elements]
        l2 = np.einsum("mi,mij,mj->m", ve, self.local_mass, ve)
        h1 = np.einsum("mi,mij,mj->m", ve, self.local_stiffness, ve)
        return np.maximum(l2, 0.0), np.maximum(h1, 0.0)

    def l2_norm(self, v, cluster=None) -> float:
        l2, _ = self.element_sq_norms(v)
        return float(np.sqrt(_restrict_sum(l2, cluster)))

    def h1_seminorm(self, v, cluster=None) -> float:
        _, h1 = self.element_sq_norms(v)
        return float(np.sqrt(_restrict_sum(h1, cluster)))

    def cluster_matrices(self, cluster):
        """Mass and stiffness assembled over the elements of ``cluster`` only."""
        ids = _ids(cluster)
        n = self.mesh.n_nodes
        idx = self.mesh.elements[ids]
        return _scatter(self.local_mass[ids], idx, n), _scatter(
            self.local_stiffness[ids], idx, n
        )


def _ids(cluster):
    return np.asarray(getattr(cluster, "element_ids", cluster), dtype=np.int64)


def _restrict_sum(vals, cluster):
    return vals.sum() if cluster is None else vals[_ids(cluster)].sum()


def assemble_norm_matrices(mesh: Mesh) -> NormMatrices:
    g = p1_gradients(mesh)
    lk = np.einsum("mik,mjk->mij", g, g) * mesh.areas[:, None, None]
    lm = 2.0 * mesh.areas[:, None, None] * REFERENCE_MASS[None]
    idx = mesh.elements
    n = mesh.n_nodes
    return NormMatrices(mesh, _scatter(lm, idx, n), _scatter(lk, idx, n), lm, lk)


# -- element-wise functions ---------------------------------------------------


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """P2 Lagrange basis at barycentric points: vertices, then the midpoints
    of the edges opposite vertex 0, 1, 2."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1],
        axis=1,
    )


P2_NODES_BARY = np.vstack([np.eye(3), MIDPOINT_BARY])


@dataclass(frozen=True, eq=False)
class ElementField:
    """Element-wise polynomial of degree <= 2 (possibly discontinuous)."""

    mesh: Mesh
    values: np.ndarray  # (m, 6) P2 Lagrange values

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros((mesh.n_elements, 6)))

    @classmethod
    def from_p1(cls, mesh, vertex_values: np.ndarray) -> "ElementField":
        """From (m, 3) per-element vertex values of a discontinuous P1 function."""
        v = np.asarray(vertex_values, dtype=float)
        mids = v @ MIDPOINT_BARY.T
        return cls(mesh, np.hstack([v, mids]))

    @classmethod
    def from_nodal(cls, mesh, nodal: np.ndarray) -> "ElementField":
        return cls.from_p1(mesh, np.asarray(nodal)[mesh.elements])

    @classmethod
    def from_dofs(cls, dofmap: DofMap, x: np.ndarray) -> "ElementField":
        return cls.from_nodal(dofmap.mesh, dofmap.to_nodal(x))

    @classmethod
    def from_function(cls, mesh, f: Callable[[np.ndarray], np.ndarray]) -> "ElementField":
        """P2 interpolant of ``f`` (exact for piecewise quadratics)."""
        pts = quadrature_points(mesh, P2_NODES_BARY)
        vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float)
        return cls(mesh, vals.reshape(mesh.n_elements, 6))

    def at(self, bary: np.ndarray) -> np.ndarray:
        """(m, q) values at barycentric points."""
        return self.values @ p2_basis(bary).T

    def __add__(self, other):
        return ElementField(self.mesh, self.values + other.values)

    def __mul__(self, s):
        return ElementField(self.mesh, self.values * s)

    __rmul__ = __mul__

    def support(self, tol=0.0) -> np.ndarray:
        """Elements on which the field is not identically zero."""
        return np.flatnonzero(np.abs(self.values).max(axis=1) > tol)

    def integrate_against_p1(self) -> np.ndarray:
        """(m, 3) integrals of the field times each local P1 shape function."""
        fq = self.at(GAUSS6_BARY)
        return np.einsum("m,mq,q,qi->mi", self.mesh.areas, fq, GAUSS6_WEIGHTS, GAUSS6_BARY)

    def l2_norm(self) -> float:
        fq = self.at(GAUSS6_BARY)
        return float(np.sqrt(np.einsum("m,mq,q->", self.mesh.areas, fq**2, GAUSS6_WEIGHTS)))


def load_vector(dofmap: DofMap, f: ElementField) -> np.ndarray:
    """b_m = <f, phi_m>."""
    local = f.integrate_against_p1()
    idx = dofmap.element_dofs().ravel()
    keep = idx >= 0
    return np.bincount(idx[keep], weights=local.ravel()[keep], minlength=dofmap.N)


# -- dual system --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualSystem:
    """Dual functions lambda_n, each supported on one carrier element.

    On its carrier T_n, ``lambda_n = |det DF|^-1 sum_i coeffs[n, i] phihat_i``,
    i.e. its P1 vertex values are ``coeffs[n] / (2 |T_n|)``.
    """

    dofmap: DofMap
    carrier: np.ndarray  # (N,) element ids
    local_index: np.ndarray  # (N,) vertex position of the dof in its carrier
    coeffs: np.ndarray  # (N, 3)

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    @property
    def N(self) -> int:
        return len(self.carrier)

    def vertex_values(self) -> np.ndarray:
        """(N, 3) P1 vertex values of each lambda_n on its carrier."""
        return self.coeffs / (2.0 * self.mesh.areas[self.carrier])[:, None]

    def perturbed(self, eps: float, index: int = 0) -> "DualSystem":
        c = self.coeffs.copy()
        c[index, self.local_index[index]] += eps
        return DualSystem(self.dofmap, self.carrier, self.local_index, c)

    def apply(self, x: np.ndarray) -> ElementField:
        """Lambda x = sum_n x_n lambda_n as an element-wise P1 function."""
        vv = self.vertex_values() * np.asarray(x, dtype=float)[:, None]
        out = np.zeros((self.mesh.n_elements, 3))
        np.add.at(out, self.carrier, vv)
        return ElementField.from_p1(self.mesh, out)

    def norms(self) -> np.ndarray:
        """L2 norms of the individual dual functions."""
        vv = self.vertex_values()
        lm = 2.0 * self.mesh.areas[self.carrier][:, None, None] * REFERENCE_MASS
        return np.sqrt(np.einsum("ni,nij,nj->n", vv, lm, vv))

    def stability_ratio(self, x: np.ndarray) -> float:
        """||Lambda x|| / (h_min^-1 ||x||)  (d = 2)."""
        return self.apply(x).l2_norm() * self.mesh.h_min / np.linalg.norm(x)


def build_dual_system(mesh: Mesh, dofmap: DofMap) -> DualSystem:
    """Carrier T_n = lowest-index element incident to node n."""
    inc = mesh.node_element_incidence
    carrier = np.empty(dofmap.N, dtype=np.int64)
    local = np.empty(dofmap.N, dtype=np.int64)
    used = {}
    for n, node in enumerate(dofmap.dof_to_node):
        cand = inc.indices[inc.indptr[node] : inc.indptr[node + 1]]
        if len(cand) == 0:
            raise RuntimeError(f"node {node} has no incident element")
        t = int(cand.min())
        pos = int(np.flatnonzero(mesh.elements[t] == node)[0])
        # the slot is the node's own vertex position, so it is always free
        assert (t, pos) not in used
        used[t, pos] = n
        carrier[n], local[n] = t, pos
    coeffs = DUAL_SHAPE_COEFFS[local]
    return DualSystem(dofmap, carrier, local, coeffs)


def duality_gram(dual: DualSystem) -> sp.csr_matrix:
    """G[n, m] = <phi_n, lambda_m> (sparse; exact via the local mass)."""
    mesh, dofmap = dual.mesh, dual.dofmap
    vv = dual.vertex_values()
    lm = 2.0 * mesh.areas[dual.carrier][:, None, None] * REFERENCE_MASS
    # column m: integrals of lambda_m against the three shape functions of T_m
    ints = np.einsum("mij,mj->mi", lm, vv)
    rows = dofmap.node_to_dof[mesh.elements[dual.carrier]]
    cols = np.repeat(np.arange(dual.N)[:, None], 3, axis=1)
    keep = rows >= 0
    g = sp.coo_matrix((ints[keep], (rows[keep], cols[keep])), shape=(dual.N, dual.N))
    return g.tocsr()


def duality_defect(dual: DualSystem) -> float:
    """max |<phi_n, lambda_m> - delta_nm| over all n, m."""
    g = duality_gram(dual) - sp.identity(dual.N, format="csr")
    return float(abs(g).max()) if g.nnz else 0.0


def apply_LambdaT(dual: DualSystem, v: ElementField) -> np.ndarray:
    """(Lambda^T v)_n = <v, lambda_n>."""
    ints = v.integrate_against_p1()[dual.carrier]
    return np.einsum("ni,ni->n", ints, dual.vertex_values())


# -- solves -------------------------------------------------------------------


class Factorization:
    """Sparse LU of A with one step of iterative refinement per solve."""

    def __init__(self, A: sp.spmatrix, tol: float = 1e-12):
        self.A = sp.csr_matrix(A)
        self.tol = tol
        try:
            lu = spla.splu(sp.csc_matrix(A))
            self._solve = lu.solve
        except RuntimeError:
            # dense fallback; lu_factor warns rather than fails on singularity
            fac = sla.lu_factor(self.A.toarray())
            self._solve = lambda b: sla.lu_solve(fac, b)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        with np.errstate(all="ignore"):
            u = self._solve(b)
            if np.all(np.isfinite(u)):
                u += self._solve(b - self.A @ u)
        if not np.all(np.isfinite(u)):
            raise SolverError("solve produced non-finite values")
        res = np.linalg.norm(b - self.A @ u) / nb
        if not np.isfinite(res) or res > self.tol:
            raise SolverError(f"solve residual {res:.3e} exceeds {self.tol:g}")
        return u


def discrete_solution(A, dofmap: DofMap, f: ElementField, factorization=None) -> np.ndarray:
    """Coefficients of u with a(u, phi_m) = <f, phi_m> for all m."""
    fac = factorization or Factorization(A)
    return fac.solve(load_vector(dofmap, f))


def h1_norm(norms: NormMatrices, dofmap: DofMap, x: np.ndarray) -> float:
    v = dofmap.to_nodal(x)
    return float(np.sqrt(v @ (norms.mass @ v) + v @ (norms.stiffness @ v)))


def a_priori_ratio(
    A, dofmap: DofMap, f: ElementField, norms: NormMatrices | None = None, factorization=None
) -> float:
    """||u||_H1 / ||f||_L2 for the discrete solution u of data f."""
    nf = f.l2_norm()
    if nf == 0:
        return 0.0
    norms = norms or assemble_norm_matrices(dofmap.mesh)
    return h1_norm(norms, dofmap, discrete_solution(A, dofmap, f, factorization)) / nf


def representation_residual(
    A, dual: DualSystem, trial_count: int, seed: int = 0, factorization=None, vectors=None
) -> float:
    """max over f of ||A^-1 f - Lambda^T S Lambda f|| / ||A^-1 f||.

    ``f`` runs over ``trial_count`` standard normal vectors, or over
    ``vectors`` when given. A zero ``f`` contributes residual 0.
    """
    rng = np.random.default_rng(seed)
    if vectors is None:
        vectors = [rng.standard_normal(dual.N) for _ in range(trial_count)]
    fac = factorization or Factorization(A)
    # independent route: dense LU of the assembled matrix
    dense_lu = sla.lu_factor(sp.csr_matrix(A).toarray())
    worst = 0.0
    for f in vectors:
        f = np.asarray(f, dtype=float)
        direct = sla.lu_solve(dense_lu, f)
        nd = np.linalg.norm(direct)
        if nd == 0:
            continue
        u = discrete_solution(A, dual.dofmap, dual.apply(f), fac)
        rep = apply_LambdaT(dual, ElementField.from_dofs(dual.dofmap, u))
        worst = max(worst, np.linalg.norm(direct - rep) / nd)
    return float(worst)


def write_matrix(A, path) -> None:
    """Coordinate text export, sorted by (row, col)."""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {v:.16e}\n")
