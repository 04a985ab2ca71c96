"""
Geometric cluster trees over DOF indices and the admissible block partition.

Geometry of an index set I is that of its index patch, the union of the
carrier elements of the dual functions in I, measured with the incenter
metric of :mod:`hmatfem.mesh`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .fem import DualSystem
from .mesh import Cluster, Mesh, point_set_diameter


def index_patch(dual: DualSystem, index_set) -> Cluster:
    """Union of the carrier elements of the duals in ``index_set``."""
    idx = np.asarray(index_set, dtype=np.int64)
    return Cluster(np.unique(dual.carrier[idx]))


# -- cluster tree -------------------------------------------------------------


@dataclass(eq=False)
class ClusterNode:
    id: int
    index_set: np.ndarray  # sorted dof indices
    level: int  # root has level 1
    box: np.ndarray  # (xmin, ymin, xmax, ymax) of the patch incenters
    points: np.ndarray = field(repr=False)  # distinct patch incenters
    children: tuple = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def card(self) -> int:
        return len(self.index_set)

    @cached_property
    def diam(self) -> float:
        return point_set_diameter(self.points)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.points)

    def dist(self, other: "ClusterNode") -> float:
        """Mesh-metric distance between the two index patches."""
        a, b = (self, other) if len(self.points) <= len(other.points) else (other, self)
        d, _ = b.kdtree.query(a.points)
        return float(d.min())

    def box_dist(self, other: "ClusterNode") -> float:
        """Lower bound of :meth:`dist` from the bounding boxes."""
        gap = np.maximum(
            np.maximum(self.box[:2] - other.box[2:], other.box[:2] - self.box[2:]), 0.0
        )
        return float(np.hypot(*gap))


class ClusterTree:
    """Binary cluster tree; ``nodes`` are stored in pre-order."""

    def __init__(self, root: ClusterNode, n_dofs: int, c_small: int):
        self.root = root
        self.N = n_dofs
        self.c_small = c_small
        self.nodes: list[ClusterNode] = []
        stack = [root]
        while stack:
            node = stack.pop()
            self.nodes.append(node)
            stack.extend(reversed(node.children))

    @property
    def leaves(self) -> list[ClusterNode]:
        return [n for n in self.nodes if n.is_leaf]

    @property
    def depth(self) -> int:
        return max(n.level for n in self.nodes)

    def permuted(self, rng: np.random.Generator) -> "ClusterTree":
        """Same clusters with randomly swapped child order."""

        def rebuild(node):
            kids = tuple(rebuild(c) for c in node.children)
            if kids and rng.random() < 0.5:
                kids = kids[::-1]
            return ClusterNode(node.id, node.index_set, node.level, node.box, node.points, kids)

        return ClusterTree(rebuild(self.root), self.N, self.c_small)

    def leaves_near(self, points: np.ndarray) -> list[ClusterNode]:
        """Leaves whose boxes contain any of ``points``; the nearest leaves
        by box distance when none does."""
        pts = np.atleast_2d(points)
        out, best, best_d = [], [], np.inf
        for leaf in self.leaves:
            lo, hi = leaf.box[:2], leaf.box[2:]
            gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
            d = float(np.hypot(gap[:, 0], gap[:, 1]).min())
            if d == 0.0:
                out.append(leaf)
            elif d < best_d - 1e-15:
                best, best_d = [leaf], d
            elif abs(d - best_d) <= 1e-15:
                best.append(leaf)
        return out or best

    def check(self) -> None:
        """Assert partition, monotone boxes and leaf sizes."""
        for node in self.nodes:
            if node.is_leaf:
                assert node.card <= self.c_small, "oversized leaf"
                continue
            a, b = node.children
            assert a.card > 0 and b.card > 0
            joined = np.concatenate([a.index_set, b.index_set])
            assert np.array_equal(np.sort(joined), node.index_set)
            for c in node.children:
                assert np.all(c.box[:2] >= node.box[:2]) and np.all(c.box[2:] <= node.box[2:])
        assert np.array_equal(self.root.index_set, np.arange(self.N))


def _split(idx: np.ndarray, pts: np.ndarray):
    """Bisect at the midpoint of the longest box axis (ties toward x)."""
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = hi - lo
    axis = 0 if ext[0] >= ext[1] else 1
    mid = 0.5 * (lo[axis] + hi[axis])
    left = pts[:, axis] <= mid
    if left.all() or not left.any():
        # degenerate: median split along the same axis
        order = np.argsort(pts[:, axis], kind="stable")
        left = np.zeros(len(idx), dtype=bool)
        left[order[: len(idx) // 2]] = True
    return left


def build_cluster_tree(mesh: Mesh, dual: DualSystem, c_small: int) -> ClusterTree:
    if c_small < 1:
        raise ValueError("C_small must be >= 1")
    centers = mesh.incenters[dual.carrier]
    counter = [0]

    def make(idx: np.ndarray, level: int) -> ClusterNode:
        pts = centers[idx]
        uniq = np.unique(pts, axis=0)
        box = np.concatenate([pts.min(axis=0), pts.max(axis=0)])
        node = ClusterNode(counter[0], idx, level, box, uniq)
        counter[0] += 1
        if len(idx) > c_small:
            left = _split(idx, pts)
            node.children = (make(idx[left], level + 1), make(idx[~left], level + 1))
        return node

    root = make(np.arange(dual.N), 1)
    return ClusterTree(root, dual.N, c_small)


# -- block partition ----------------------------------------------------------


@dataclass(frozen=True)
class Block:
    row: ClusterNode
    col: ClusterNode
    admissible: bool
    level: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.row.card, self.col.card


@dataclass(eq=False)
class BlockPartition:
    tree: ClusterTree
    blocks: list[Block]  # pre-order of the block tree
    c_adm: float
    c_small: int
    forced_small: int

    @property
    def N(self) -> int:
        return self.tree.N

    @property
    def admissible_blocks(self) -> list[Block]:
        return [b for b in self.blocks if b.admissible]

    @property
    def small_blocks(self) -> list[Block]:
        return [b for b in self.blocks if not b.admissible]

    @property
    def depth(self) -> int:
        return max(b.level for b in self.blocks)

    def sparsity_constant(self) -> int:
        rows, cols = {}, {}
        for b in self.blocks:
            rows[b.row.id] = rows.get(b.row.id, 0) + 1
            cols[b.col.id] = cols.get(b.col.id, 0) + 1
        return max(max(rows.values()), max(cols.values()))

    def covers_exactly(self, probes: int = 20000, seed: int = 0, dense_limit: int = 4096) -> bool:
        """Every (m, n) lies in exactly one block."""
        N = self.N
        if sum(b.row.card * b.col.card for b in self.blocks) != N * N:
            return False
        if N <= dense_limit:
            count = np.zeros((N, N), dtype=np.uint8)
            for b in self.blocks:
                count[np.ix_(b.row.index_set, b.col.index_set)] += 1
            return bool(np.all(count == 1))
        rng = np.random.default_rng(seed)
        pm = rng.integers(0, N, probes)
        pn = rng.integers(0, N, probes)
        hits = np.zeros(probes, dtype=np.int64)
        for b in self.blocks:
            hits += np.isin(pm, b.row.index_set) & np.isin(pn, b.col.index_set)
        return bool(np.all(hits == 1))

    def canonical(self) -> list[tuple]:
        """Order-independent description of the block set."""
        return sorted(
            (b.admissible, tuple(b.row.index_set), tuple(b.col.index_set)) for b in self.blocks
        )

    def to_text(self) -> str:
        lines = []
        for b in self.blocks:
            kind = "adm" if b.admissible else "small"
            lines.append(f"{kind}  {encode_ranges(b.row.index_set)}  {encode_ranges(b.col.index_set)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def is_admissible(row: ClusterNode, col: ClusterNode, c_adm: float) -> bool:
    diam = row.diam
    if diam <= 0.0:
        return False
    if diam <= c_adm * row.box_dist(col):
        return True
    return diam <= c_adm * row.dist(col)


def build_block_partition(tree: ClusterTree, c_adm: float) -> BlockPartition:
    if not c_adm > 0:
        raise ValueError("C_adm must be positive")
    blocks: list[Block] = []
    forced = [0]
    c_small = tree.c_small

    def visit(row, col, level):
        if is_admissible(row, col, c_adm):
            blocks.append(Block(row, col, True, level))
        elif min(row.card, col.card) <= c_small:
            blocks.append(Block(row, col, False, level))
        elif row.is_leaf or col.is_leaf:
            forced[0] += 1
            blocks.append(Block(row, col, False, level))
        else:
            for r in row.children:
                for c in col.children:
                    visit(r, c, level + 1)

    visit(tree.root, tree.root, 1)
    return BlockPartition(tree, blocks, float(c_adm), c_small, forced[0])


def encode_ranges(idx: np.ndarray) -> str:
    """Run-length encode a sorted index set as ``lo..hi`` ranges."""
    idx = np.asarray(idx)
    if len(idx) == 0:
        return ""
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(idx) - 1]])
    return ",".join(f"{idx[s]}..{idx[e]}" for s, e in zip(starts, ends))


def decode_ranges(text: str) -> np.ndarray:
    if not text:
        return np.zeros(0, dtype=np.int64)
    parts = []
    for r in text.split(","):
        lo, hi = r.split("..")
        parts.append(np.arange(int(lo), int(hi) + 1))
    return np.concatenate(parts)


@dataclass(frozen=True)
class PartitionReport:
    n_blocks: int
    n_admissible: int
    n_small: int
    depth: int
    tree_depth: int
    sparsity_constant: int
    forced_small: int
    exact_cover: bool
    diagonal_fraction: float

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.__dict__.items())


def leaf_order(tree: ClusterTree) -> np.ndarray:
    """Position of every dof when the leaves are listed in pre-order."""
    perm = np.concatenate([leaf.index_set for leaf in tree.leaves])
    pos = np.empty(tree.N, dtype=np.int64)
    pos[perm] = np.arange(tree.N)
    return pos


def diagonal_fraction(P: BlockPartition) -> float:
    """Share of small blocks whose row and column ranges overlap or abut
    once the dofs are sorted in leaf order."""
    pos = leaf_order(P.tree)
    small = P.small_blocks
    if not small:
        return 0.0
    touching = 0
    for b in small:
        r, c = pos[b.row.index_set], pos[b.col.index_set]
        if r.min() <= c.max() + 1 and c.min() <= r.max() + 1:
            touching += 1
    return touching / len(small)


def partition_report(P: BlockPartition) -> PartitionReport:
    return PartitionReport(
        n_blocks=len(P.blocks),
        n_admissible=len(P.admissible_blocks),
        n_small=len(P.small_blocks),
        depth=P.depth,
        tree_depth=P.tree.depth,
        sparsity_constant=P.sparsity_constant(),
        forced_small=P.forced_small,
        exact_cover=P.covers_exactly(),
        diagonal_fraction=diagonal_fraction(P),
    )
