"""Moran-operator spatial basis functions from an area adjacency structure."""

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InsufficientSpectrumError, ParseError, ShapeError, UsageError
from .model import DesignMatrixSpec, check_design

POSITIVE_TOL = 1e-10
TIE_TOL = 1e-10


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Binary symmetric adjacency with zero diagonal, rows aligned with ``area_ids``."""

    A: np.ndarray
    area_ids: Sequence[str]

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError("adjacency must be square")
        if not np.all((A == 0) | (A == 1)):
            raise ParseError("adjacency entries must be 0 or 1")
        if np.any(np.diag(A) != 0):
            raise ParseError("adjacency has a self-loop")
        if not np.array_equal(A, A.T):
            raise ParseError("adjacency is not symmetric")
        ids = tuple(str(a) for a in self.area_ids)
        if len(ids) != A.shape[0]:
            raise ShapeError(f"{len(ids)} ids for a {A.shape[0]}-area adjacency")
        if len(set(ids)) != len(ids):
            raise ParseError("duplicate area ids")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "area_ids", ids)

    @property
    def m(self):
        return self.A.shape[0]


def adjacency_from_edges(edges, area_ids):
    """Build an adjacency from ``(a, b)`` id pairs; each edge is undirected."""
    ids = [str(a) for a in area_ids]
    index = {a: i for i, a in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    for a, b in edges:
        A[index[str(a)], index[str(b)]] = A[index[str(b)], index[str(a)]] = 1.0
    return AdjacencyMatrix(A, ids)


def load_adjacency(path, area_ids):
    """Read a whitespace-separated ``area_id area_id`` edge list.

    ``#`` starts a comment. Unknown ids, self-loops and lines without exactly
    two fields raise :class:`ParseError` with the line number.
    """
    ids = [str(a) for a in area_ids]
    index = {a: i for i, a in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected two area ids, got {len(parts)} field(s)", lineno)
            a, b = parts
            for x in (a, b):
                if x not in index:
                    raise ParseError(f"unknown area id {x!r}", lineno)
            if a == b:
                raise ParseError(f"self-loop on area {a!r}", lineno)
            A[index[a], index[b]] = A[index[b], index[a]] = 1.0
    return AdjacencyMatrix(A, ids)


def write_adjacency(path, adjacency):
    iu = np.argwhere(np.triu(adjacency.A, 1) > 0)
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in iu:
            fh.write(f"{adjacency.area_ids[i]} {adjacency.area_ids[j]}\n")


def grid_adjacency(nrow, ncol):
    """Rook contiguity on an ``nrow x ncol`` lattice; ids run "1".."m" row-major."""
    m = nrow * ncol
    A = np.zeros((m, m))
    for r in range(nrow):
        for c in range(ncol):
            i = r * ncol + c
            if c + 1 < ncol:
                A[i, i + 1] = A[i + 1, i] = 1.0
            if r + 1 < nrow:
                A[i, i + ncol] = A[i + ncol, i] = 1.0
    return AdjacencyMatrix(A, [str(i + 1) for i in range(m)])


def _matrix(A):
    return A.A if isinstance(A, AdjacencyMatrix) else np.asarray(A, dtype=float)


def moran_operator(A, X):
    """``(I - P_X) A (I - P_X)`` with ``P_X`` the projection onto col(X)."""
    A = _matrix(A)
    X = check_design(X, A.shape[0])
    Q, _ = np.linalg.qr(X)
    M = np.eye(A.shape[0]) - Q @ Q.T
    G = M @ A @ M
    return 0.5 * (G + G.T)


def _orient(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def moran_spectrum(G):
    """All eigenpairs of symmetric ``G`` in descending order.

    Eigenvectors are oriented so their largest-magnitude entry is positive;
    eigenvalues within a relative 1e-10 of each other are ordered
    lexicographically by eigenvector.
    """
    G = np.asarray(G, dtype=float)
    vals, vecs = linalg.eigh(0.5 * (G + G.T))
    vals = vals[::-1]
    vecs = _orient(vecs[:, ::-1])
    scale = max(float(np.max(np.abs(vals))), np.finfo(float).tiny) if vals.size else 1.0
    order = []
    start = 0
    for k in range(1, vals.size + 1):
        if k == vals.size or vals[k - 1] - vals[k] > TIE_TOL * scale:
            block = list(range(start, k))
            if len(block) > 1:
                block = sorted(block, key=lambda j: tuple(np.round(vecs[:, j], 12)))
            order.extend(block)
            start = k
    order = np.array(order, dtype=int)
    return vals[order], vecs[:, order]


def positive_count(eigenvalues):
    if eigenvalues.size == 0:
        return 0
    scale = float(np.max(np.abs(eigenvalues)))
    return int(np.sum(eigenvalues > POSITIVE_TOL * scale))


@dataclass(frozen=True)
class MoranBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (m, q)
    base_X: np.ndarray = None

    @property
    def q(self):
        return self.eigenvectors.shape[1]

    def columns(self, p):
        """Leading ``p`` basis vectors as a new basis."""
        if p > self.q:
            raise InsufficientSpectrumError(p, self.q)
        return MoranBasis(self.eigenvalues[:p], self.eigenvectors[:, :p], self.base_X)


def moran_basis(G, p=None, base_X=None):
    """Eigenvectors of ``G`` for its ``p`` largest positive eigenvalues.

    ``p=None`` keeps every positive eigenvalue.
    """
    vals, vecs = moran_spectrum(G)
    q = positive_count(vals)
    if p is None:
        p = q
    if p < 0:
        raise UsageError("p must be non-negative")
    if p > q:
        raise InsufficientSpectrumError(p, q)
    return MoranBasis(vals[:p], vecs[:, :p], None if base_X is None else np.asarray(base_X, float))


def moran_eigenbasis(A, X=None):
    """Full positive-spectrum basis for adjacency ``A`` orthogonal to ``X``.

    ``X`` defaults to the intercept column.
    """
    m = _matrix(A).shape[0]
    X = np.ones((m, 1)) if X is None else np.asarray(X, dtype=float)
    return moran_basis(moran_operator(A, X), None, X)


def augment_design(X, basis, name=None):
    """``[X | basis vectors]`` as a candidate design."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    V = basis.eigenvectors if isinstance(basis, MoranBasis) else np.asarray(basis, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != X.shape[0]:
        raise ShapeError(f"basis has {V.shape[0]} rows but X has {X.shape[0]}")
    full = np.hstack([X, V])
    return DesignMatrixSpec(full, name if name is not None else f"p{V.shape[1]}")


def write_design_csv(path, area_ids, design, base_names=("intercept",)):
    """Write ``area_id,intercept,mb_1,...,mb_p``."""
    X = design.X if isinstance(design, DesignMatrixSpec) else np.asarray(design)
    nb = len(base_names)
    header = ["area_id", *base_names] + [f"mb_{k + 1}" for k in range(X.shape[1] - nb)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, row in zip(area_ids, X):
            w.writerow([a, *(repr(float(v)) for v in row)])


def read_design_csv(path):
    """Read a design CSV whose first column is ``area_id``; returns (ids, X, names)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "area_id":
            raise ParseError("first column must be area_id", 1)
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, np.array(rows, dtype=float).reshape(len(ids), len(header) - 1), header[1:]
