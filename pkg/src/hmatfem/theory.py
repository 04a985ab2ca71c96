"""
Executable checks of the local machinery behind the rank bound: the Clément
quasi-interpolant, discrete cut-off functions and operators, the inverse
inequality, locally discrete harmonic spaces and the discrete Caccioppoli
inequality.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import Coefficients, DofMap, NormMatrices, assemble_norm_matrices, assemble_system, p1_gradients
from .mesh import Cluster, Mesh, _as_cluster, distance_to_cluster, generate_mesh, inflate, patch


class CutoffPreconditionError(ValueError):
    def __init__(self, message, h_max_b):
        super().__init__(message)
        self.h_max_b = h_max_b


class NotHarmonicError(ValueError):
    def __init__(self, residual):
        super().__init__(f"function is not locally discrete harmonic (residual {residual:.3e})")
        self.residual = residual


# -- P1 functions -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PiecewiseP1Function:
    """Degree-1 function, either conforming (nodal values) or discontinuous
    (three vertex values per element)."""

    mesh: Mesh
    nodal: np.ndarray | None = None
    element_values: np.ndarray | None = None

    def __post_init__(self):
        if (self.nodal is None) == (self.element_values is None):
            raise ValueError("give exactly one of nodal or element_values")

    @property
    def conforming(self) -> bool:
        return self.nodal is not None

    def vertex_values(self) -> np.ndarray:
        """(m, 3) values at the element vertices."""
        if self.conforming:
            return self.nodal[self.mesh.elements]
        return self.element_values

    def gradients(self) -> np.ndarray:
        """(m, 2) constant gradient per element."""
        return np.einsum("mi,mik->mk", self.vertex_values(), p1_gradients(self.mesh))

    def support(self) -> Cluster:
        """Elements on which the function does not vanish identically."""
        return Cluster(np.flatnonzero(np.any(self.vertex_values() != 0.0, axis=1)))

    def w1inf_seminorm(self) -> float:
        return float(np.hypot(*self.gradients().T).max())


def element_means(f: PiecewiseP1Function) -> np.ndarray:
    return f.vertex_values().mean(axis=1)


def clement(mesh: Mesh, means: np.ndarray) -> PiecewiseP1Function:
    """Node value = arithmetic average of the element means on its patch."""
    means = np.asarray(means, dtype=float)
    if means.shape != (mesh.n_elements,):
        raise ValueError("need one mean value per element")
    inc = mesh.node_element_incidence
    count = np.diff(inc.indptr)
    nodal = (inc @ means) / count
    return PiecewiseP1Function(mesh, nodal=nodal)


# -- cut-off ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cutoff:
    kappa: PiecewiseP1Function
    cluster: Cluster
    delta: float
    epsilon: float
    gradient_constant: float  # delta * sup |grad kappa|


def _check_cutoff_precondition(mesh, b: Cluster, delta, min_delta_factor):
    h_b = float(mesh.widths[b.element_ids].max())
    factor = 4.0 * mesh.shape_constant**3 if min_delta_factor is None else float(min_delta_factor)
    if delta < factor * h_b:
        raise CutoffPreconditionError(
            f"delta = {delta:.6g} below {factor:.6g} * h_max(B) = {factor * h_b:.6g} (h_max(B) = {h_b:.6g})",
            h_b,
        )
    if delta > mesh.domain_diameter:
        raise CutoffPreconditionError(
            f"delta = {delta:.6g} exceeds the domain diameter {mesh.domain_diameter:.6g}", h_b
        )


def cutoff_epsilon(mesh: Mesh, b: Cluster, delta: float, rule: str = "adaptive") -> float:
    """Width of the linear ramp of the step function.

    ``"conservative"`` uses delta / (4 C^2). ``"adaptive"`` uses the largest width
    for which the support of the smoothed function still lies in B^delta:
    the smallest distance from patch(B) of an element whose own patch leaves
    B^delta (capped at delta).
    """
    if rule == "conservative":
        return delta / (4.0 * mesh.shape_constant**2)
    if rule != "adaptive":
        raise ValueError(f"unknown epsilon rule {rule!r}")
    d = distance_to_cluster(mesh, patch(mesh, b))
    inside = np.zeros(mesh.n_elements)
    inside[inflate(mesh, b, delta).element_ids] = 1.0
    # number of patch neighbours outside B^delta
    outside = mesh.element_patch_matrix.astype(np.float64) @ (1.0 - inside)
    leaking = outside > 0
    if not leaking.any():
        return float(delta)
    return float(min(d[leaking].min(), delta))


def cutoff_function(
    mesh: Mesh,
    cluster,
    delta: float,
    epsilon_rule: str = "adaptive",
    min_delta_factor: float | None = None,
) -> Cutoff:
    """Smoothed distance step: kappa = J chi with chi = max(0, 1 - dist(T, patch(B)) / eps).

    Parameters
    ----------
    min_delta_factor
        Lower bound factor c in ``delta >= c * h_max(B)``. The default is
        4 C^3 with the measured shape constant C of the mesh.
    """
    b = _as_cluster(cluster)
    if len(b) == 0:
        raise ValueError("cluster must be nonempty")
    _check_cutoff_precondition(mesh, b, delta, min_delta_factor)
    eps = cutoff_epsilon(mesh, b, delta, epsilon_rule)
    if not eps > 0:
        h_b = float(mesh.widths[b.element_ids].max())
        raise CutoffPreconditionError(
            f"delta = {delta:.6g} leaves no room for a cut-off ramp (h_max(B) = {h_b:.6g})", h_b
        )
    d = distance_to_cluster(mesh, patch(mesh, b))
    chi = np.maximum(0.0, 1.0 - d / eps)
    kappa = clement(mesh, chi)
    return Cutoff(kappa, b, float(delta), eps, float(delta * kappa.w1inf_seminorm()))


def cutoff_operator(mesh: Mesh, cluster, delta: float, u_nodal: np.ndarray, **kwargs) -> np.ndarray:
    """Nodal interpolant of kappa * u for conforming P1 ``u`` (nodal values)."""
    cut = cutoff_function(mesh, cluster, delta, **kwargs)
    return cut.kappa.nodal * np.asarray(u_nodal, dtype=float)


def cutoff_stability(norms: NormMatrices, delta: float, u_nodal, ku_nodal) -> float:
    """max over T of (||Ku||_T + delta |Ku|_T) / (||u||_T + delta |u|_T)."""
    l2u, h1u = norms.element_sq_norms(u_nodal)
    l2k, h1k = norms.element_sq_norms(ku_nodal)
    den = np.sqrt(l2u) + delta * np.sqrt(h1u)
    num = np.sqrt(l2k) + delta * np.sqrt(h1k)
    ok = den > 0
    return float((num[ok] / den[ok]).max()) if ok.any() else 0.0


# -- inverse inequality -------------------------------------------------------


def inverse_inequality_ratio(mesh: Mesh, v_nodal: np.ndarray, norms: NormMatrices | None = None) -> float:
    """max over T of h(T) |v|_{H1(T)} / ||v||_{L2(T)} (zero elements skipped)."""
    norms = norms or assemble_norm_matrices(mesh)
    l2, h1 = norms.element_sq_norms(np.asarray(v_nodal, dtype=float))
    ok = l2 > 0
    if not ok.any():
        return 0.0
    return float((mesh.widths[ok] * np.sqrt(h1[ok] / l2[ok])).max())


def inverse_inequality_constant(mesh: Mesh, norms: NormMatrices | None = None) -> float:
    """Supremum of :func:`inverse_inequality_ratio` over all P1 functions:
    max over T of h(T) sqrt(lambda_max(K_T, M_T))."""
    norms = norms or assemble_norm_matrices(mesh)
    # M_T is positive definite; reduce to a symmetric standard problem
    L = np.linalg.cholesky(norms.local_mass)
    Li = np.linalg.inv(L)
    S = Li @ norms.local_stiffness @ np.swapaxes(Li, 1, 2)
    lam = np.linalg.eigvalsh(S)[:, -1]
    return float((mesh.widths * np.sqrt(np.maximum(lam, 0.0))).max())


# -- locally discrete harmonic functions --------------------------------------


def interior_dofs(dofmap: DofMap, cluster) -> np.ndarray:
    """DOFs whose hat function is supported inside ``cluster``."""
    mesh = dofmap.mesh
    b = _as_cluster(cluster)
    inside = np.zeros(mesh.n_elements, dtype=np.int64)
    inside[b.element_ids] = 1
    inc = mesh.node_element_incidence[dofmap.dof_to_node]
    n_in = inc.astype(np.int64) @ inside
    return np.flatnonzero(n_in == np.diff(inc.indptr))


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    cluster: Cluster
    basis: np.ndarray  # (N, k), mass-orthonormal columns
    constrained: np.ndarray  # J_B
    trivial: bool = False

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def _harmonic_extension(A_csr, J: np.ndarray, F: np.ndarray):
    """Z with rows J = -A_JJ^-1 A_JF and rows F = identity (columns over F)."""
    n = A_csr.shape[0]
    Z = np.zeros((n, len(F)))
    Z[F, np.arange(len(F))] = 1.0
    if len(J) and len(F):
        AJJ = sp.csc_matrix(A_csr[J][:, J])
        AJF = A_csr[J][:, F].toarray()
        Z[J] = -spla.splu(AJJ).solve(AJF)
    return Z


def _mass_orthonormalize(Z: np.ndarray, M) -> np.ndarray:
    if Z.shape[1] == 0:
        return Z
    G = Z.T @ (M @ Z)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return sla.solve_triangular(L, Z.T, lower=True).T


def harmonic_basis(mesh: Mesh, A, dofmap: DofMap, cluster, norms: NormMatrices | None = None) -> HarmonicBasis:
    """Mass-orthonormal basis of {u : (A u)_j = 0 for all j in J_B}."""
    b = _as_cluster(cluster)
    A = sp.csr_matrix(A)
    J = interior_dofs(dofmap, b)
    F = np.setdiff1d(np.arange(dofmap.N), J)
    norms = norms or assemble_norm_matrices(mesh)
    Mdof = norms.mass[dofmap.dof_to_node][:, dofmap.dof_to_node]
    Z = _mass_orthonormalize(_harmonic_extension(A, J, F), Mdof)
    return HarmonicBasis(b, Z, J, trivial=len(J) == 0)


def harmonic_residual(A, J: np.ndarray, u: np.ndarray) -> float:
    """max_j in J |(A u)_j| / ||u||."""
    nu = np.linalg.norm(u)
    if nu == 0 or len(J) == 0:
        return 0.0
    return float(np.abs((A @ u)[J]).max() / nu)


@dataclass(frozen=True, eq=False)
class LocalHarmonicSpace:
    """Functions harmonic on a cluster D, represented by their values on the
    nodes of D and extended by zero elsewhere.

    Rows of A for DOFs interior to D only couple nodes of D, so the zero
    extension of a locally harmonic function stays harmonic on D.
    """

    cluster: Cluster
    dofs: np.ndarray  # DOFs on nodes of D
    constrained: np.ndarray  # J_D (global DOF numbers)
    basis: np.ndarray  # (len(dofs), k)

    def to_global(self, coeffs: np.ndarray, N: int) -> np.ndarray:
        out = np.zeros((N,) + coeffs.shape[1:])
        out[self.dofs] = self.basis @ coeffs
        return out


def local_harmonic_space(A, dofmap: DofMap, cluster) -> LocalHarmonicSpace:
    mesh = dofmap.mesh
    d = _as_cluster(cluster)
    A = sp.csr_matrix(A)
    nodes = np.unique(mesh.elements[d.element_ids])
    dofs = dofmap.node_to_dof[nodes]
    dofs = np.sort(dofs[dofs >= 0])
    J = interior_dofs(dofmap, d)
    local_J = np.searchsorted(dofs, J)
    F = np.setdiff1d(np.arange(len(dofs)), local_J)
    Z = _harmonic_extension(A[dofs][:, dofs], local_J, F)
    return LocalHarmonicSpace(d, dofs, J, Z)


def caccioppoli_ratio(
    mesh: Mesh, norms: NormMatrices, A, dofmap: DofMap, u: np.ndarray, cluster, delta: float, tol: float = 1e-8
) -> float:
    """delta |u|_{H1(B)} / ||u||_{L2(B^delta)} for u harmonic on B^delta."""
    b = _as_cluster(cluster)
    big = inflate(mesh, b, delta)
    res = harmonic_residual(A, interior_dofs(dofmap, big), u)
    if res > tol:
        raise NotHarmonicError(res)
    v = dofmap.to_nodal(u)
    den = norms.l2_norm(v, big)
    if den == 0.0:
        raise ValueError("u vanishes on the inflated cluster")
    return float(delta * norms.h1_seminorm(v, b) / den)


@dataclass(frozen=True, eq=False)
class CaccioppoliMax:
    value: float
    basis: np.ndarray  # (N, k) generalized eigenvectors, global DOF vectors
    ratios: np.ndarray  # ratio of each column
    dim: int


def caccioppoli_maximum(
    mesh: Mesh, norms: NormMatrices, A, dofmap: DofMap, cluster, delta: float, keep: int = 3
) -> CaccioppoliMax:
    """Supremum of the Caccioppoli ratio over the harmonic space on B^delta.

    Solves the generalized eigenproblem of the H1(B) seminorm against the
    L2(B^delta) mass form restricted to the local harmonic space; in this
    eigenbasis the largest column ratio equals the supremum. The ``keep``
    leading eigenvectors are returned as global DOF vectors.
    """
    b = _as_cluster(cluster)
    big = inflate(mesh, b, delta)
    space = local_harmonic_space(A, dofmap, big)
    if space.basis.shape[1] == 0:
        return CaccioppoliMax(0.0, np.zeros((dofmap.N, 0)), np.zeros(0), 0)
    mass_big, _ = norms.cluster_matrices(big)
    _, stiff_b = norms.cluster_matrices(b)
    nodes = dofmap.dof_to_node[space.dofs]
    Mloc = mass_big[nodes][:, nodes]
    Kloc = stiff_b[nodes][:, nodes]
    Z = space.basis
    G = Z.T @ (Mloc @ Z)
    S = Z.T @ (Kloc @ Z)
    mu, X = sla.eigh(0.5 * (S + S.T), 0.5 * (G + G.T))
    mu = np.clip(mu, 0.0, None)
    order = np.argsort(mu)[::-1][:keep]
    vecs = space.to_global(X[:, order], dofmap.N)
    return CaccioppoliMax(float(delta * np.sqrt(mu[order[0]])), vecs, delta * np.sqrt(mu[order]), Z.shape[1])


# -- verification grids -------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    prop: str
    cluster_id: int
    delta: float
    level: int
    value: float
    passed: bool

    def to_text(self) -> str:
        flag = "pass" if self.passed else "FAIL"
        return f"{self.prop:<22s} {self.cluster_id:>3d} {self.delta:>12.6e} {self.level:>3d} {self.value:>14.6e}  {flag}"


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows) and all(
            v for k, v in self.summary.items() if k.endswith("_ok")
        )

    def to_text(self) -> str:
        head = f"{'property':<22s} {'B':>3s} {'delta':>12s} {'lvl':>3s} {'value':>14s}  status"
        lines = [head] + [r.to_text() for r in self.rows]
        lines += [f"{k} = {v}" for k, v in self.summary.items()]
        lines.append(f"overall = {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def ball_clusters(mesh: Mesh, centers: np.ndarray, radii: np.ndarray) -> list[Cluster]:
    out = []
    for c, r in zip(centers, radii):
        d = np.hypot(*(mesh.incenters - c).T)
        ids = np.flatnonzero(d <= r)
        if len(ids) == 0:
            ids = np.array([int(np.argmin(d))])
        out.append(Cluster(ids))
    return out


def caccioppoli_grid(
    base_width: float = np.sqrt(2.0) / 64.0,
    levels: int = 2,
    delta_factors=(8, 16, 32),
    cluster_count: int = 5,
    seed: int = 0,
    coeffs: Coefficients | None = None,
    growth_limit: float = 1.5,
    radius_range=(0.03, 0.08),
) -> VerificationReport:
    """Caccioppoli maxima on nested uniform unit-square meshes.

    Balls B and radii delta are fixed physically (delta is a multiple of the
    coarsest mesh width), so the maxima should not grow under refinement.
    Cells whose inflated cluster is the whole mesh are skipped.
    """
    coeffs = coeffs or Coefficients.paper_s4()
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(cluster_count, 2))
    radii = rng.uniform(*radius_range, size=cluster_count)
    report = VerificationReport()
    maxima = {}
    for level in range(levels):
        mesh = generate_mesh("unit_square", uniform_width=base_width / 2**level)
        A, dofmap = assemble_system(mesh, coeffs)
        norms = assemble_norm_matrices(mesh)
        clusters = ball_clusters(mesh, centers, radii)
        for ci, b in enumerate(clusters):
            for f in delta_factors:
                delta = f * base_width
                if len(inflate(mesh, b, delta)) == mesh.n_elements:
                    continue
                res = caccioppoli_maximum(mesh, norms, A, dofmap, b, delta, keep=1)
                maxima[level, ci, f] = res.value
                report.rows.append(ReportRow("caccioppoli_max", ci, delta, level, res.value, True))
    level_max = [max(v for (lv, *_), v in maxima.items() if lv == level) for level in range(levels)]
    growth = max(level_max[i + 1] / level_max[i] for i in range(levels - 1)) if levels > 1 else 1.0
    report.summary.update(
        {f"level_{i}_max": m for i, m in enumerate(level_max)}
        | {"growth_factor": growth, "growth_limit": growth_limit, "growth_ok": growth <= growth_limit}
    )
    return report


def cutoff_sweep(
    mesh: Mesh,
    cluster,
    deltas,
    ratio_limit: float = 0.75,
    min_delta_factor: float = 1.0,
    epsilon_rule: str = "adaptive",
) -> VerificationReport:
    """Structural cut-off properties for each delta and the gradient decay
    sup|grad kappa(2 delta)| / sup|grad kappa(delta)| between neighbours."""
    b = _as_cluster(cluster)
    report = VerificationReport()
    sups = []
    for delta in deltas:
        cut = cutoff_function(mesh, b, delta, epsilon_rule, min_delta_factor)
        props = cutoff_properties(mesh, cut)
        for name, ok in props.items():
            report.rows.append(ReportRow(name, 0, delta, 0, float(ok), ok))
        g = cut.kappa.w1inf_seminorm()
        sups.append(g)
        report.rows.append(ReportRow("sup_grad_kappa", 0, delta, 0, g, True))
    ratios = [sups[i + 1] / sups[i] for i in range(len(sups) - 1)]
    report.summary.update(
        {"max_gradient_ratio": max(ratios) if ratios else 0.0, "gradient_ok": all(r <= ratio_limit for r in ratios)}
    )
    return report


def cutoff_properties(mesh: Mesh, cut: Cutoff) -> dict[str, bool]:
    """Exact checks: support in B^delta, kappa = 1 on B, 0 <= kappa <= 1."""
    kv = cut.kappa.vertex_values()
    big = inflate(mesh, cut.cluster, cut.delta)
    return {
        "support_in_inflated": cut.kappa.support().issubset(big),
        "one_on_cluster": bool(np.all(kv[cut.cluster.element_ids] == 1.0)),
        "range_0_1": bool(np.all((cut.kappa.nodal >= 0.0) & (cut.kappa.nodal <= 1.0))),
    }
