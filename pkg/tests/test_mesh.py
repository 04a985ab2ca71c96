import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from conftest import CORNER, graded_lshape
from hmatfem.mesh import (
    Cluster,
    GradingError,
    GradingSpec,
    Mesh,
    MeshError,
    cluster_diam,
    generate_mesh,
    grading_ratios,
    inflate,
    mesh_dist,
    patch,
    regularity_cardinality_report,
)


def _brute_dist(mesh, a, b):
    return cdist(mesh.incenters[list(a)], mesh.incenters[list(b)]).min()


def _brute_diam(mesh, a):
    return cdist(mesh.incenters[list(a)], mesh.incenters[list(a)]).max()


def _two_triangles(shift):
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = np.vstack([tri, tri + shift])
    return Mesh(nodes, np.array([[0, 1, 2], [3, 4, 5]]), np.ones(6, dtype=bool))


@pytest.mark.parametrize(
    "domain,kwargs",
    [
        ("unit_square", {"uniform_width": 0.1}),
        ("lshape", {"uniform_width": 0.07}),
        ("lshape", {"grading": GradingSpec(CORNER, 5.0, 0.2)}),
        ("unit_square", {"grading": GradingSpec(CORNER, 3.0, 0.2)}),
    ],
)
def test_generated_mesh_invariants(domain, kwargs):
    mesh = generate_mesh(domain, **kwargs)
    mesh.check()
    area = {"unit_square": 1.0, "lshape": 0.75}[domain]
    assert mesh.areas.sum() == pytest.approx(area, rel=1e-10)
    # Ball(x_T, h/gamma) inside T
    assert np.all(mesh.inradii >= mesh.widths / mesh.shape_constant * (1 - 1e-12))
    assert mesh.shape_constant <= 10


def test_widths_are_longest_edges(square_small):
    p = square_small.vertex_coords
    edges = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
    np.testing.assert_allclose(square_small.widths, edges.max(axis=1))


@pytest.mark.parametrize("width", [0.3, 0.1, 0.04])
def test_uniform_width_ratio(width):
    mesh = generate_mesh("unit_square", uniform_width=width)
    assert mesh.h_max / mesh.h_min <= 4
    assert mesh.h_max <= width


@pytest.mark.parametrize("H", [0.13, 0.115, 0.09])
def test_grading_law_desk_range(H):
    mesh = graded_lshape(H)
    n = int((~mesh.boundary).sum())
    assert 1500 <= n <= 4000
    r = grading_ratios(mesh)
    assert r.max() / r.min() <= 16
    assert mesh.shape_constant <= 10


def test_alpha_one_equals_uniform():
    graded = generate_mesh("lshape", grading=GradingSpec(CORNER, 1.0, 0.1))
    uniform = generate_mesh("lshape", uniform_width=0.1)
    np.testing.assert_array_equal(graded.nodes, uniform.nodes)
    np.testing.assert_array_equal(graded.elements, uniform.elements)
    assert graded.h_max / graded.h_min == pytest.approx(1.0)


def test_grading_refines_towards_gamma():
    mesh = graded_lshape(0.2)
    d = mesh.grading.distance(mesh.incenters)
    near = mesh.widths[d < 0.05].max()
    far = mesh.widths[d > 0.4].min()
    assert near < far


@pytest.mark.parametrize(
    "kwargs",
    [{}, {"uniform_width": 0.1, "grading": GradingSpec(CORNER, 2.0, 0.1)}, {"uniform_width": -1.0}],
)
def test_generate_rejects_bad_arguments(kwargs):
    with pytest.raises(MeshError):
        generate_mesh("unit_square", **kwargs)


def test_gamma_off_skeleton_rejected():
    with pytest.raises(MeshError):
        generate_mesh("lshape", grading=GradingSpec(np.array([[0.3, 0.1]]), 5.0, 0.2))


def test_grading_error_is_mesh_error():
    assert issubclass(GradingError, MeshError)


@pytest.mark.parametrize("bad", [{"alpha": 0.5}, {"coarse_width": 0.0}])
def test_grading_spec_validation(bad):
    args = {"gamma_set": CORNER, "alpha": 5.0, "coarse_width": 0.1} | bad
    with pytest.raises(MeshError):
        GradingSpec(**args)


# -- metric ---------------------------------------------------------------------


def test_mesh_dist_known_value():
    mesh = _two_triangles(np.array([3.0, 4.0]))
    assert mesh_dist(mesh, [0], [1]) == pytest.approx(5.0, abs=1e-14)
    assert mesh_dist(mesh, [0], [0]) == 0.0


def test_cluster_diam_known_value():
    mesh = _two_triangles(np.array([0.6, 0.8]))
    assert cluster_diam(mesh, [0, 1]) == pytest.approx(1.0, abs=1e-14)
    assert cluster_diam(mesh, [1]) == 0.0


def test_empty_cluster_rejected(square_small):
    with pytest.raises(MeshError):
        mesh_dist(square_small, [], [0])
    with pytest.raises(MeshError):
        cluster_diam(square_small, [])


cluster_sets = st.lists(st.integers(0, 127), min_size=1, max_size=20)


@given(a=cluster_sets, b=cluster_sets)
def test_dist_and_diam_match_brute_force(square_small, a, b):
    m = square_small
    a = [i % m.n_elements for i in a]
    b = [i % m.n_elements for i in b]
    assert mesh_dist(m, a, b) == pytest.approx(_brute_dist(m, a, b), abs=1e-14)
    assert mesh_dist(m, a, b) == mesh_dist(m, b, a)
    assert cluster_diam(m, a) == pytest.approx(_brute_diam(m, a), abs=1e-14)
    assert (mesh_dist(m, a, b) == 0) == bool(set(a) & set(b))


@given(a=cluster_sets, b=cluster_sets, c=cluster_sets)
def test_triangle_type_inequality(square_small, a, b, c):
    m = square_small
    a, b, c = ([i % m.n_elements for i in x] for x in (a, b, c))
    lhs = mesh_dist(m, a, c)
    assert lhs <= mesh_dist(m, a, b) + cluster_diam(m, b) + mesh_dist(m, b, c) + 1e-14


@pytest.mark.parametrize("fixture", ["square_mid", "lshape_small"])
def test_neighbour_bounds(fixture, request):
    m = request.getfixturevalue(fixture)
    gamma = m.shape_constant
    d = cdist(m.incenters, m.incenters)
    nb = m.element_patch_matrix.toarray()
    h = m.widths
    off = ~np.eye(m.n_elements, dtype=bool)
    inside = nb & off
    assert np.all(d[inside] <= (gamma * h[:, None] * np.ones_like(d))[inside] + 1e-14)
    outside = ~nb
    hsum = (h[:, None] + h[None, :]) / gamma
    assert np.all(d[outside] >= hsum[outside] - 1e-14)


# -- inflation and patches -------------------------------------------------------


def test_inflate_extremes(square_mid):
    b = Cluster([5, 17])
    assert inflate(square_mid, b, 0.0) == b
    assert len(inflate(square_mid, b, square_mid.domain_diameter)) == square_mid.n_elements
    with pytest.raises(MeshError):
        inflate(square_mid, b, -0.1)


@given(ids=st.lists(st.integers(0, 399), min_size=1, max_size=10), delta=st.floats(0.0, 0.6), eps=st.floats(0.0, 0.3))
def test_inflate_properties(square_mid, ids, delta, eps):
    m = square_mid
    b = Cluster([i % m.n_elements for i in ids])
    bd = inflate(m, b, delta)
    oracle = Cluster([t for t in range(m.n_elements) if _brute_dist(m, [t], b) <= delta])
    assert bd == oracle
    assert b.issubset(bd)
    assert bd.issubset(inflate(m, b, delta + eps))
    assert inflate(m, bd, eps).issubset(inflate(m, b, delta + eps * (1 + 1e-12) + 1e-15))
    assert cluster_diam(m, bd) <= cluster_diam(m, b) + 2 * delta + 1e-12


def test_patch_of_element_is_vertex_neighbours(square_mid):
    m = square_mid
    t = int(np.argmin(np.linalg.norm(m.incenters - 0.5, axis=1)))
    expected = [s for s in range(m.n_elements) if set(m.elements[s]) & set(m.elements[t])]
    assert patch(m, [t]) == Cluster(expected)
    assert len(patch(m, np.arange(m.n_elements))) == m.n_elements


def test_patch_of_vertex_point_is_incidence(square_small):
    m = square_small
    node = int(np.flatnonzero(~m.boundary)[0])
    expected = [s for s in range(m.n_elements) if node in m.elements[s]]
    assert patch(m, m.nodes[node][None, :].astype(float)) == Cluster(expected)


def test_patch_of_interior_point(square_small):
    m = square_small
    c = m.incenters[3]
    assert patch(m, c[None, :]) == Cluster([3])


# -- text format --------------------------------------------------------------------


def test_text_round_trip(lshape_small, tmp_path):
    path = tmp_path / "mesh.txt"
    lshape_small.write(path)
    back = Mesh.read(path)
    np.testing.assert_array_equal(back.nodes, lshape_small.nodes)
    np.testing.assert_array_equal(back.elements, lshape_small.elements)
    np.testing.assert_array_equal(back.boundary, lshape_small.boundary)
    assert path.read_text().splitlines()[0] == f"nodes {lshape_small.n_nodes} elements {lshape_small.n_elements}"


def test_text_rejects_bad_header():
    with pytest.raises(MeshError):
        Mesh.from_text("vertices 3\n")


def test_clockwise_element_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError):
        Mesh(nodes, np.array([[0, 2, 1]]), np.ones(3, dtype=bool))


# -- cardinality ----------------------------------------------------------------------


@pytest.mark.parametrize("width", [0.1, 0.05, 0.025])
def test_uniform_cardinality_passes(width):
    mesh = generate_mesh("unit_square", uniform_width=width)
    assert regularity_cardinality_report(mesh, 1, 40).passed


@pytest.mark.parametrize("H", [0.2, 0.1])
def test_graded_cardinality_with_alpha(H):
    assert regularity_cardinality_report(graded_lshape(H), 5, 40).passed


def test_graded_cardinality_control_grows():
    coarse = regularity_cardinality_report(graded_lshape(0.2), 1, 40)
    fine = regularity_cardinality_report(graded_lshape(0.1), 1, 40)
    assert not coarse.passed
    assert fine.width_ratio > 4 * coarse.width_ratio


def test_cardinality_rejects_small_exponent(square_small):
    with pytest.raises(ValueError):
        regularity_cardinality_report(square_small, 0.5, 5)
