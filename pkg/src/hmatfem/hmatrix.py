"""
H-matrix approximation of a dense inverse by blockwise truncated SVD.

The dense inverse is computed once, every admissible block is decomposed
once, and all ranks are then obtained by truncation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .clustering import BlockPartition

DENSE_BUDGET = 10_000
CSV_HEADER = ("r", "computable_bound", "spectral_error", "memory_bytes", "depth", "n_adm", "n_small")


class DenseBudgetError(MemoryError):
    pass


def invert_dense(A, budget: int = DENSE_BUDGET, seed: int = 0, tol: float = 1e-8) -> np.ndarray:
    """Explicit inverse of a sparse (or dense) matrix.

    Raises
    ------
    DenseBudgetError
        If N exceeds ``budget``; the message states the memory required.
    numpy.linalg.LinAlgError
        If A is singular or the residual check fails.
    """
    N = A.shape[0]
    if N > budget:
        raise DenseBudgetError(
            f"N = {N} exceeds the dense budget {budget}: "
            f"the inverse needs {8 * N * N / 2**30:.2f} GiB"
        )
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    M = sla.inv(dense)
    rng = np.random.default_rng(seed)
    cols = rng.choice(N, size=min(10, N), replace=False)
    res = dense @ M[:, cols]
    res[cols, np.arange(len(cols))] -= 1.0
    err = float(np.abs(res).max())
    if not err <= tol:
        raise np.linalg.LinAlgError(f"inverse residual {err:.3e} exceeds {tol:g}")
    return M


def signed_svd(block: np.ndarray):
    """Thin SVD with the first nonzero entry of each left vector positive."""
    U, s, Vt = np.linalg.svd(block, full_matrices=False)
    for k in range(len(s)):
        col = U[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-14 * np.abs(col).max())
        if len(nz) and col[nz[0]] < 0:
            U[:, k] *= -1.0
            Vt[k] *= -1.0
    return U, s, Vt


@dataclass(frozen=True, eq=False)
class LowRankBlock:
    rows: np.ndarray
    cols: np.ndarray
    X: np.ndarray  # U_r diag(s_r)
    Y: np.ndarray  # V_r
    sigma: np.ndarray  # retained singular values
    sigma_next: float  # first discarded singular value, 0 if exact

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.X @ self.Y.T


@dataclass(frozen=True, eq=False)
class DenseBlock:
    rows: np.ndarray
    cols: np.ndarray
    value: np.ndarray


@dataclass(frozen=True, eq=False)
class HMatrix:
    partition: BlockPartition
    low_rank_blocks: list
    dense_blocks: list
    rank_bound: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.partition.N, self.partition.N

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return hmatvec(self, x)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """H^T y."""
        return hmatvec(self, y, transpose=True)

    @cached_property
    def operators(self):
        return _flat_operators(self)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for b in self.low_rank_blocks:
            out[np.ix_(b.rows, b.cols)] = b.to_dense()
        for b in self.dense_blocks:
            out[np.ix_(b.rows, b.cols)] = b.value
        return out


class BlockSVDCache:
    """Full SVDs of all admissible blocks of ``M``, computed once."""

    def __init__(self, M: np.ndarray, partition: BlockPartition):
        if M.shape != (partition.N, partition.N):
            raise ValueError("matrix and partition dimensions differ")
        self.M = M
        self.partition = partition
        self.svds = [
            signed_svd(M[np.ix_(b.row.index_set, b.col.index_set)])
            for b in partition.admissible_blocks
        ]

    @property
    def max_min_dim(self) -> int:
        return max((len(s) for _, s, _ in self.svds), default=0)

    def compress(self, r: int) -> HMatrix:
        if r < 1:
            raise ValueError("rank must be >= 1")
        low = []
        for b, (U, s, Vt) in zip(self.partition.admissible_blocks, self.svds):
            k = min(r, len(s))
            I, J = b.row.index_set, b.col.index_set
            if k < len(s):
                low.append(LowRankBlock(I, J, U[:, :k] * s[:k], Vt[:k].T.copy(), s[:k].copy(), float(s[k])))
                continue
            # no truncation: store an exact rank-k factorization of the block
            block = self.M[np.ix_(I, J)]
            if len(J) <= len(I):
                X, Y = block.copy(), np.eye(len(J))
            else:
                X, Y = np.eye(len(I)), block.T.copy()
            low.append(LowRankBlock(I, J, X, Y, s.copy(), 0.0))
        dense = [
            DenseBlock(b.row.index_set, b.col.index_set, self.M[np.ix_(b.row.index_set, b.col.index_set)])
            for b in self.partition.small_blocks
        ]
        return HMatrix(self.partition, low, dense, r)


def compress(M: np.ndarray, partition: BlockPartition, r: int) -> HMatrix:
    return BlockSVDCache(M, partition).compress(r)


def computable_bound(H: HMatrix) -> float:
    """Block-tree depth times the largest discarded singular value."""
    worst = max((b.sigma_next for b in H.low_rank_blocks), default=0.0)
    return H.partition.depth * worst


def _flat_operators(H: HMatrix):
    """Sparse matrices Xs, Ys, D with H = Xs Ys^T + D."""
    N = H.partition.N
    xr, xc, xv, yr, yc, yv = [], [], [], [], [], []
    offset = 0
    for b in H.low_rank_blocks:
        k = b.rank
        cols = offset + np.arange(k)
        xr.append(np.repeat(b.rows, k))
        xc.append(np.tile(cols, len(b.rows)))
        xv.append(b.X.ravel())
        yr.append(np.repeat(b.cols, k))
        yc.append(np.tile(cols, len(b.cols)))
        yv.append(b.Y.ravel())
        offset += k
    dr = [np.repeat(b.rows, len(b.cols)) for b in H.dense_blocks]
    dc = [np.tile(b.cols, len(b.rows)) for b in H.dense_blocks]
    dv = [b.value.ravel() for b in H.dense_blocks]

    def build(r, c, v, shape):
        if not r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=shape)

    Xs = build(xr, xc, xv, (N, offset))
    Ys = build(yr, yc, yv, (N, offset))
    D = build(dr, dc, dv, (N, N))
    return Xs, Ys, D


def hmatvec(H: HMatrix, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    """H x (or H^T x) from the stored factors and dense blocks."""
    x = np.asarray(x, dtype=float)
    N = H.partition.N
    if x.shape != (N,):
        raise ValueError(f"vector of shape {x.shape} does not match N = {N}")
    Xs, Ys, D = H.operators
    if transpose:
        return Ys @ (Xs.T @ x) + D.T @ x
    return Xs @ (Ys.T @ x) + D @ x


def residual_matrix(M: np.ndarray, H: HMatrix) -> np.ndarray:
    """Dense M - H assembled block by block (exact zeros on copied blocks)."""
    E = np.zeros_like(M)
    for b in H.low_rank_blocks:
        E[np.ix_(b.rows, b.cols)] = M[np.ix_(b.rows, b.cols)] - b.X @ b.Y.T
    for b in H.dense_blocks:
        E[np.ix_(b.rows, b.cols)] = M[np.ix_(b.rows, b.cols)] - b.value
    return E


@dataclass(frozen=True)
class SpectralError:
    estimate: float  # power-iteration value, a lower bound of ||M - H||_2
    frobenius: float  # ||M - H||_F, an upper bound
    iterations: int

    def __float__(self) -> float:
        return self.estimate


def spectral_error(
    M: np.ndarray, H: HMatrix, iterations: int = 500, tol: float = 1e-12, seed: int = 0
) -> SpectralError:
    """Power-iteration estimate of ||M - H||_2 with a Frobenius upper bound.

    The residual is formed block by block before iterating, so blocks that
    H reproduces exactly contribute exact zeros instead of cancellation noise.
    """
    E = residual_matrix(M, H)
    frob = float(np.linalg.norm(E))
    if frob == 0.0:
        return SpectralError(0.0, 0.0, 0)
    est, it = _power_norm(E, iterations, tol, seed)
    return SpectralError(min(est, frob), frob, it)


def _power_norm(E: np.ndarray, iterations: int, tol: float, seed: int):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(E.shape[1])
    v /= np.linalg.norm(v)
    est, it = 0.0, 0
    for it in range(1, iterations + 1):
        w = E @ v
        new = float(np.linalg.norm(w))
        z = E.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return new, it
        v = z / nz
        if abs(new - est) <= tol * new:
            return new, it
        est = new
    return est, it


def memory_bytes(H: HMatrix) -> int:
    """Storage of the rank-r format in bytes (8 per scalar).

    Every admissible block is charged r (|I| + |J|) scalars at the nominal
    rank r of H, every small block |I| |J|.
    """
    r = H.rank_bound
    n = sum(r * (len(b.rows) + len(b.cols)) for b in H.low_rank_blocks)
    n += sum(b.value.size for b in H.dense_blocks)
    return 8 * int(n)


def stored_bytes(H: HMatrix) -> int:
    """Bytes actually held, with each factor pair at its effective rank
    min(r, |I|, |J|)."""
    n = sum(b.rank * (len(b.rows) + len(b.cols)) for b in H.low_rank_blocks)
    n += sum(b.value.size for b in H.dense_blocks)
    return 8 * int(n)


def index_bytes(H: HMatrix) -> int:
    """Storage of the row and column index arrays (reported separately)."""
    blocks = list(H.low_rank_blocks) + list(H.dense_blocks)
    return 8 * sum(len(b.rows) + len(b.cols) for b in blocks)


def spectral_norm(M: np.ndarray, iterations: int = 500, tol: float = 1e-12, seed: int = 0) -> float:
    """||M||_2 by power iteration on M^T M."""
    return _power_norm(M, iterations, tol, seed)[0]


# -- rank sweeps --------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    r: int
    computable_bound: float
    spectral_error: float
    memory_bytes: int
    depth: int
    n_adm: int
    n_small: int

    def as_csv(self) -> list[str]:
        return [
            str(self.r),
            f"{self.computable_bound:.16e}",
            f"{self.spectral_error:.16e}",
            str(self.memory_bytes),
            str(self.depth),
            str(self.n_adm),
            str(self.n_small),
        ]


def rank_sweep(M: np.ndarray, partition: BlockPartition, ranks, iterations: int = 500, seed: int = 0):
    cache = BlockSVDCache(M, partition)
    rows = []
    for r in ranks:
        H = cache.compress(int(r))
        rows.append(
            SweepRow(
                int(r),
                computable_bound(H),
                spectral_error(M, H, iterations, seed=seed).estimate,
                memory_bytes(H),
                partition.depth,
                len(H.low_rank_blocks),
                len(H.dense_blocks),
            )
        )
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.as_csv())


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [
            SweepRow(
                int(d["r"]),
                float(d["computable_bound"]),
                float(d["spectral_error"]),
                int(d["memory_bytes"]),
                int(d["depth"]),
                int(d["n_adm"]),
                int(d["n_small"]),
            )
            for d in rd
        ]


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def linear_fit(x, y) -> LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2, len(x))


def bound_decay_fit(rows, floor: float = 1e-13) -> LinearFit:
    """Least-squares slope of log10(bound) against r where bound > floor."""
    pts = [(row.r, np.log10(row.computable_bound)) for row in rows if row.computable_bound > floor]
    if len(pts) < 2:
        raise ValueError("fewer than two ranks above the floor")
    x, y = zip(*pts)
    return linear_fit(x, y)


def memory_fit(rows, r_min: int = 5, r_max: int = 40) -> LinearFit:
    sel = [(row.r, row.memory_bytes) for row in rows if r_min <= row.r <= r_max]
    x, y = zip(*sel)
    return linear_fit(x, y)
