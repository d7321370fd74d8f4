"""Sparse spatial weight matrices: construction, normalization, lags, I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import TopologyError

__all__ = [
    "WeightMatrix",
    "Violation",
    "build_circular",
    "build_knn",
    "row_normalize",
    "spatial_lag",
    "validate",
    "summary",
    "read_weights",
    "write_weights",
    "read_coordinates",
]

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightMatrix:
    """Immutable n x n spatial weight matrix stored in CSR form.

    Parameters
    ----------
    matrix : scipy.sparse matrix
        Nonnegative weights. Explicit zeros are dropped on construction.
    row_normalized : bool
        Whether the rows are claimed to sum to one. ``validate`` checks the claim.
    """

    matrix: sp.csr_matrix
    row_normalized: bool = False
    n: int = field(init=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=np.float64, copy=True)
        if m.shape[0] != m.shape[1]:
            raise TopologyError(f"weight matrix must be square, got {m.shape}")
        m.eliminate_zeros()
        m.sort_indices()
        if not np.all(np.isfinite(m.data)):
            raise TopologyError("weight matrix contains non-finite entries")
        if np.any(m.data < 0):
            raise TopologyError("weight matrix contains negative entries")
        # the CSR buffers are shared; freeze them so the object is safe to share
        for arr in (m.data, m.indices, m.indptr):
            arr.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "n", m.shape[0])

    @classmethod
    def from_triplets(cls, n, rows, cols, weights, row_normalized=False):
        m = sp.coo_matrix((np.asarray(weights, float), (np.asarray(rows), np.asarray(cols))), shape=(n, n))
        return cls(m.tocsr(), row_normalized=row_normalized)

    @classmethod
    def from_dense(cls, array, row_normalized=False):
        return cls(sp.csr_matrix(np.asarray(array, dtype=float)), row_normalized=row_normalized)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def entries(self):
        """Return (rows, cols, weights) arrays in row-major order."""
        coo = self.matrix.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class Violation:
    kind: str  # "self_loop" | "row_sum" | "isolated"
    index: int
    value: float

    def __str__(self):
        return f"{self.kind} at location {self.index} (value {self.value:.6g})"


def build_circular(n: int, K: int) -> WeightMatrix:
    """Ring topology: each location links to its K predecessors and K successors.

    The result carries raw unit weights and is not row-normalized.
    """
    if K < 1:
        raise TopologyError(f"K must be >= 1, got {K}")
    if n <= 2 * K:
        raise TopologyError(f"circular weights need n >= 2K + 1 (n={n}, K={K})")
    idx = np.arange(n)
    offsets = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)])
    rows = np.repeat(idx, 2 * K)
    cols = (idx[:, None] + offsets[None, :]).ravel() % n
    return WeightMatrix.from_triplets(n, rows, cols, np.ones(rows.size))


def build_knn(coords, K: int, chunk: int = 1024) -> WeightMatrix:
    """Directed K-nearest-neighbour weights from planar coordinates.

    Distance ties are broken by the lower location index, so the result is
    fully deterministic. A location is never its own neighbour.
    """
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TopologyError(f"coordinates must be an (n, 2) array, got shape {pts.shape}")
    n = pts.shape[0]
    if n < 2:
        raise TopologyError("need at least two locations")
    if not np.all(np.isfinite(pts)):
        raise TopologyError("coordinates contain non-finite values")
    if K < 1 or K >= n:
        raise TopologyError(f"K must satisfy 1 <= K < n (K={K}, n={n})")

    cols = np.empty((n, K), dtype=np.int64)
    for start in range(0, n, chunk):
        block = pts[start:start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(block.shape[0]), np.arange(start, start + block.shape[0])] = np.inf
        # stable sort keeps lower column index first among equal distances
        order = np.argsort(d2, axis=1, kind="stable")
        cols[start:start + block.shape[0]] = order[:, :K]
    rows = np.repeat(np.arange(n), K)
    return WeightMatrix.from_triplets(n, rows, cols.ravel(), np.ones(n * K))


def row_normalize(W: WeightMatrix) -> WeightMatrix:
    """Divide every row by its sum. Isolated locations are rejected."""
    sums = W.row_sums()
    isolated = np.flatnonzero(sums <= 0)
    if isolated.size:
        raise TopologyError(
            f"cannot row-normalize: location {int(isolated[0])} has no neighbours"
            + (f" ({isolated.size} isolated in total)" if isolated.size > 1 else "")
        )
    scaled = sp.diags(1.0 / sums) @ W.matrix
    return WeightMatrix(scaled.tocsr(), row_normalized=True)


def spatial_lag(W: WeightMatrix, M) -> np.ndarray:
    """Sparse-dense product W @ M for a vector or an n x k matrix."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != W.n:
        raise ValueError(f"dimension mismatch: W is {W.n} x {W.n}, argument has {M.shape[0]} rows")
    return np.asarray(W.matrix @ M)


def validate(W: WeightMatrix, tol: float = _ROW_SUM_TOL) -> list[Violation]:
    """List self-loops, isolated rows, and (if flagged normalized) bad row sums."""
    out = []
    diag = W.matrix.diagonal()
    for i in np.flatnonzero(diag != 0):
        out.append(Violation("self_loop", int(i), float(diag[i])))
    sums = W.row_sums()
    for i in np.flatnonzero(sums == 0):
        out.append(Violation("isolated", int(i), 0.0))
    if W.row_normalized:
        for i in np.flatnonzero((sums != 0) & (np.abs(sums - 1.0) > tol)):
            out.append(Violation("row_sum", int(i), float(sums[i])))
    return out


def summary(W: WeightMatrix) -> dict:
    """Degree and boundedness statistics for a weight matrix."""
    deg = W.degrees()
    return {
        "n": W.n,
        "nnz": W.nnz,
        "min_degree": int(deg.min()),
        "max_degree": int(deg.max()),
        "mean_degree": float(deg.mean()),
        "max_abs_row_sum": float(np.abs(W.row_sums()).max()),
        "max_abs_col_sum": float(np.abs(W.col_sums()).max()),
        "symmetric": bool(abs(W.matrix - W.matrix.T).max() == 0) if W.nnz else True,
        "row_normalized": W.row_normalized,
    }


def write_weights(W: WeightMatrix, path) -> None:
    """Write 0-based ``i,j,w`` triplets with a header line."""
    rows, cols, vals = W.entries()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "w"])
        for i, j, w in zip(rows, cols, vals):
            writer.writerow([int(i), int(j), repr(float(w))])


def read_weights(path, n: int | None = None) -> WeightMatrix:
    """Read a triplet CSV written by :func:`write_weights`.

    ``n`` defaults to one plus the largest index seen. The normalized flag is
    inferred from the row sums.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["i", "j", "w"]:
            raise TopologyError(f"{path}: expected header 'i,j,w', got {header}")
        rows, cols, vals = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise TopologyError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            try:
                rows.append(int(rec[0]))
                cols.append(int(rec[1]))
                vals.append(float(rec[2]))
            except ValueError as exc:
                raise TopologyError(f"{path}:{lineno}: {exc}") from None
    rows_a, cols_a = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    if rows_a.size and (rows_a.min() < 0 or cols_a.min() < 0):
        raise TopologyError(f"{path}: negative index")
    seen = int(max(rows_a.max(initial=-1), cols_a.max(initial=-1))) + 1
    if n is None:
        n = seen
    elif seen > n:
        raise TopologyError(f"{path}: index {seen - 1} out of range for n={n}")
    W = WeightMatrix.from_triplets(n, rows_a, cols_a, vals)
    sums = W.row_sums()
    normalized = bool(np.all(np.abs(sums - 1.0) <= 1e-9))
    return WeightMatrix(W.matrix, row_normalized=normalized)


def read_coordinates(path) -> np.ndarray:
    """Read an ``id,x,y`` CSV; rows are returned in file order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "x", "y"]:
            raise TopologyError(f"{path}: expected header 'id,x,y', got {header}")
        pts = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                pts.append((float(rec[1]), float(rec[2])))
            except (ValueError, IndexError) as exc:
                raise TopologyError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(pts, dtype=float).reshape(-1, 2)
