import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from conftest import graded_lshape
from hmatfem import clustering, fem
from hmatfem.mesh import Cluster, cluster_diam, generate_mesh, mesh_dist


def _problem(mesh, c_small=25, c_adm=2.0):
    _, dofmap = fem.assemble_system(mesh, fem.Coefficients.laplace())
    dual = fem.build_dual_system(mesh, dofmap)
    tree = clustering.build_cluster_tree(mesh, dual, c_small)
    return dual, tree, clustering.build_block_partition(tree, c_adm)


@given(ids=st.lists(st.integers(0, 196), min_size=1, max_size=15))
def test_index_patch_matches_brute_force(system_small, ids):
    _, dofmap, dual = system_small
    ids = [i % dofmap.N for i in ids]
    mesh = dual.mesh
    expected = set()
    for n in ids:
        node = dofmap.dof_to_node[n]
        incident = [t for t in range(mesh.n_elements) if node in mesh.elements[t]]
        expected.add(min(incident))
    assert clustering.index_patch(dual, ids) == Cluster(sorted(expected))


# -- cluster tree ------------------------------------------------------------------


def test_tree_invariants(partition_small):
    tree, _ = partition_small
    tree.check()
    assert tree.root.level == 1
    for node in tree.nodes:
        for child in node.children:
            assert child.level == node.level + 1


def test_tree_node_geometry(partition_small, system_small):
    tree, _ = partition_small
    _, _, dual = system_small
    mesh = dual.mesh
    for node in tree.nodes[:40]:
        elems = clustering.index_patch(dual, node.index_set)
        assert node.diam == pytest.approx(cluster_diam(mesh, elems), abs=1e-14)


def test_single_node_tree(square_small):
    dual, tree, part = _problem(square_small, c_small=25)
    assert dual.N <= 25
    assert len(tree.nodes) == 1
    assert len(part.blocks) == 1
    assert not part.blocks[0].admissible


def test_tree_rejects_bad_leaf_size(system_small):
    _, _, dual = system_small
    with pytest.raises(ValueError):
        clustering.build_cluster_tree(dual.mesh, dual, 0)


def test_tree_is_deterministic(system_small):
    _, _, dual = system_small
    a = clustering.build_cluster_tree(dual.mesh, dual, 10)
    b = clustering.build_cluster_tree(dual.mesh, dual, 10)
    assert [tuple(n.index_set) for n in a.nodes] == [tuple(n.index_set) for n in b.nodes]


def test_leaves_near_gamma_are_deep(desk_problem):
    _, _, _, tree, _ = desk_problem
    near = tree.leaves_near(np.array([[0.5, 0.5]]))
    depth_near = max(leaf.level for leaf in near)
    median = np.median([leaf.level for leaf in tree.leaves])
    assert depth_near > median


# -- block partition -----------------------------------------------------------------


def test_partition_tiles_exactly(partition_small):
    _, part = partition_small
    assert part.covers_exactly()
    assert part.covers_exactly(dense_limit=0, probes=5000)


def test_admissibility_holds_verbatim(partition_small, system_small):
    _, part = partition_small
    _, _, dual = system_small
    mesh = dual.mesh
    assert part.admissible_blocks
    for b in part.admissible_blocks:
        wi = clustering.index_patch(dual, b.row.index_set)
        wj = clustering.index_patch(dual, b.col.index_set)
        assert cluster_diam(mesh, wi) <= part.c_adm * mesh_dist(mesh, wi, wj)


def test_small_blocks_have_small_side(partition_small):
    _, part = partition_small
    assert part.forced_small == 0
    for b in part.small_blocks:
        assert min(b.shape) <= part.c_small


def test_admissibility_known_example():
    """diam 0.1 and distance 0.2 is admissible for C_adm = 2 and not for 0.4."""

    def node(points, nid):
        pts = np.asarray(points, dtype=float)
        box = np.concatenate([pts.min(axis=0), pts.max(axis=0)])
        return clustering.ClusterNode(nid, np.array([nid]), 1, box, pts)

    row = node([[0.0, 0.0], [0.1, 0.0]], 0)
    col = node([[0.3, 0.0], [0.35, 0.0]], 1)
    assert row.diam == pytest.approx(0.1)
    assert row.dist(col) == pytest.approx(0.2)
    assert clustering.is_admissible(row, col, 2.0)
    assert not clustering.is_admissible(row, col, 0.4)
    assert not clustering.is_admissible(row, row, 100.0)


def test_partition_rejects_bad_constant(partition_small):
    tree, _ = partition_small
    with pytest.raises(ValueError):
        clustering.build_block_partition(tree, 0.0)


def test_small_blocks_concentrate_on_diagonal(desk_problem):
    *_, part = desk_problem
    assert clustering.diagonal_fraction(part) > 0.5


def test_diagonal_fraction_oracle(partition_small):
    tree, part = partition_small
    order = np.concatenate([leaf.index_set for leaf in tree.leaves])
    pos = {int(d): k for k, d in enumerate(order)}
    hits = 0
    for b in part.small_blocks:
        r = sorted(pos[int(i)] for i in b.row.index_set)
        c = sorted(pos[int(i)] for i in b.col.index_set)
        hits += r[0] <= c[-1] + 1 and c[0] <= r[-1] + 1
    assert clustering.diagonal_fraction(part) == pytest.approx(hits / len(part.small_blocks))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_block_set_independent_of_child_order(partition_small, seed):
    tree, part = partition_small
    other = clustering.build_block_partition(tree.permuted(np.random.default_rng(seed)), 2.0)
    assert other.canonical() == part.canonical()


def test_export_round_trip(tmp_path, partition_small):
    _, part = partition_small
    path = tmp_path / "partition.txt"
    part.write(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(part.blocks)
    for line, b in zip(lines, part.blocks):
        kind, rows, cols = line.split()
        assert kind == ("adm" if b.admissible else "small")
        assert np.array_equal(clustering.decode_ranges(rows), b.row.index_set)
        assert np.array_equal(clustering.decode_ranges(cols), b.col.index_set)


@given(st.sets(st.integers(0, 200), min_size=1))
def test_range_encoding_round_trip(values):
    idx = np.array(sorted(values))
    assert np.array_equal(clustering.decode_ranges(clustering.encode_ranges(idx)), idx)


def test_range_encoding_example():
    assert clustering.encode_ranges(np.array([0, 1, 2, 5, 7, 8])) == "0..2,5..5,7..8"
    assert clustering.decode_ranges("").size == 0


@pytest.mark.parametrize("H", [0.23, 0.115])
def test_partition_report_across_sizes(H):
    _, tree, part = _problem(graded_lshape(H))
    rep = clustering.partition_report(part)
    assert rep.exact_cover
    assert rep.forced_small == 0
    assert rep.n_blocks == rep.n_admissible + rep.n_small
    assert rep.depth <= rep.tree_depth
    assert 1 <= rep.sparsity_constant <= 40
    assert "sparsity_constant = " in rep.to_text()


def test_uniform_mesh_partition():
    _, tree, part = _problem(generate_mesh("unit_square", uniform_width=0.05))
    assert part.covers_exactly()
    assert part.forced_small == 0
    # geometric bisection on a uniform mesh keeps the tree shallow
    assert tree.depth <= 2 + np.ceil(np.log2(tree.N / 10))


def test_sparsity_constant_oracle(partition_small):
    _, part = partition_small
    from collections import Counter

    rows = Counter(b.row.id for b in part.blocks)
    cols = Counter(b.col.id for b in part.blocks)
    assert part.sparsity_constant() == max(max(rows.values()), max(cols.values()))


def test_cluster_distance_matches_cdist(partition_small):
    tree, _ = partition_small
    a, b = tree.leaves[0], tree.leaves[-1]
    assert a.dist(b) == pytest.approx(cdist(a.points, b.points).min(), abs=1e-15)
    assert a.box_dist(b) <= a.dist(b) + 1e-15
