"""Pyramid max pooling of activation tensors and descriptor distances."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .fileio import write_rows


def pyramid_pool(t: np.ndarray) -> np.ndarray:
    """Pool a ``(C, H, W)`` tensor into a ``5 * C`` descriptor.

    For each channel the entries are ``[global, top-left, top-right,
    bottom-left, bottom-right]`` maxima. Rows split at ``H // 2`` and columns
    at ``W // 2``, so the bottom/right halves take the extra row/column of an
    odd dimension. Empty quadrants (``H == 1`` or ``W == 1``) contribute 0.
    """
    t = np.asarray(t, dtype=np.float32)
    c, h, w = t.shape
    h2, w2 = h // 2, w // 2
    out = np.zeros((c, 5), dtype=np.float32)
    out[:, 0] = t.max(axis=(1, 2))
    quads = (t[:, :h2, :w2], t[:, :h2, w2:], t[:, h2:, :w2], t[:, h2:, w2:])
    for k, q in enumerate(quads, start=1):
        if q.size:
            out[:, k] = q.max(axis=(1, 2))
    return out.reshape(-1)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"descriptor length mismatch: {a.size} vs {b.size}")
    return a, b


def l2_distance(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``; defined as 1 when either vector has zero norm."""
    a, b = _pair(a, b)
    na, nb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        return 1.0
    return float(1.0 - np.dot(a, b) / (na * nb))


def cosine_distance_matrix(queries, refs) -> np.ndarray:
    """All-pairs cosine distance, rows are queries. Same conventions as :func:`cosine_distance`."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ValueError(f"descriptor length mismatch: {q.shape} vs {r.shape}")
    nq = np.sqrt(np.einsum("ij,ij->i", q, q))
    nr = np.sqrt(np.einsum("ij,ij->i", r, r))
    denom = np.outer(nq, nr)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - (q @ r.T) / denom
    d[denom == 0] = 1.0
    return d


def write_descriptors_csv(path, descriptors, ids=None) -> None:
    """One row per image: id followed by the descriptor values."""
    descriptors = np.asarray(descriptors)
    if ids is None:
        ids = range(len(descriptors))
    write_rows(path, [["id"] + [f"d{k}" for k in range(descriptors.shape[1])]]
               + [[i] + [repr(float(v)) for v in row] for i, row in zip(ids, descriptors)])


def read_descriptors_csv(path) -> tuple[list[str], np.ndarray]:
    with open(Path(path), newline="") as f:
        rows = list(csv.reader(f))
    ids = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float32)
    return ids, values
