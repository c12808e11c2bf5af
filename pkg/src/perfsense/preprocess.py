"""Series cleaning and offline feature-reduction helpers (correlation, PCA)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from perfsense.matrix import DecisionMatrix

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
DEFAULT_VARIANCE_TARGET = 0.85


def _as_missing_array(values) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in values], dtype=float)


@dataclass(frozen=True)
class SeriesWithGaps:
    timestamps: tuple[int, ...]
    values: tuple[float | None, ...]

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values differ in length")
        ts = np.asarray(self.timestamps)
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly ascending")

    @classmethod
    def of(cls, timestamps: Sequence[int], values: Sequence[float | None]) -> SeriesWithGaps:
        vals = tuple(None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v) for v in values)
        return cls(tuple(int(t) for t in timestamps), vals)

    @property
    def missing(self) -> int:
        return sum(v is None for v in self.values)


def interpolate_linear(s: SeriesWithGaps) -> SeriesWithGaps:
    """Fill gaps linearly in timestamp space.

    Leading and trailing gaps take the nearest observed value; a straight
    line extrapolated past the data would amplify edge noise.
    """
    y = _as_missing_array(s.values)
    observed = ~np.isnan(y)
    if not observed.any():
        raise ValueError("cannot interpolate a series with no observed values")
    t = np.asarray(s.timestamps, dtype=float)
    # np.interp holds the end values flat outside the observed span
    filled = np.where(observed, y, np.interp(t, t[observed], y[observed]))
    return SeriesWithGaps(s.timestamps, tuple(float(v) for v in filled))


def correlation_matrix(X: DecisionMatrix) -> np.ndarray:
    """Pearson correlation between indicator columns (m x m)."""
    n, m = X.shape
    if n < 2:
        raise ValueError("correlation needs at least two rows")
    A = X.values
    centered = A - A.mean(axis=0)
    ss = np.sqrt((centered**2).sum(axis=0))
    flat = [X.columns[j] for j in range(m) if ss[j] == 0 or ss[j] <= 1e-300]
    if flat:
        raise ValueError(f"zero-variance column(s): {', '.join(flat)}")
    R = (centered.T @ centered) / np.outer(ss, ss)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def _off_norm(a: np.ndarray) -> float:
    # summing off-diagonal squares directly; total minus diagonal cancels badly
    return math.sqrt(float((np.triu(a, 1) ** 2).sum() * 2.0))


def jacobi_eigh(A: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    sorted by descending eigenvalue.
    """
    a = np.array(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    m = a.shape[0]
    v = np.eye(m)
    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off < tol:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _off_norm(a)
        if off >= tol:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3g})")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    # sign convention: the largest-magnitude entry of each vector is positive
    for k in range(m):
        j = int(np.argmax(np.abs(v[:, k])))
        if v[j, k] < 0:
            v[:, k] = -v[:, k]
    return w, v


def standardize(X: DecisionMatrix) -> np.ndarray:
    A = X.values
    sd = A.std(axis=0)
    flat = [X.columns[j] for j in range(A.shape[1]) if sd[j] == 0]
    if flat:
        raise ValueError(f"zero-variance column(s): {', '.join(flat)}")
    return (A - A.mean(axis=0)) / sd


@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray  # k-th row is the k-th unit principal axis
    explained_variance_ratio: np.ndarray
    selected_count: int
    eigenvalues: np.ndarray
    columns: tuple[str, ...]

    def transform(self, Z: np.ndarray, k: int | None = None) -> np.ndarray:
        """Project standardized rows onto the first *k* components."""
        k = self.selected_count if k is None else k
        return Z @ self.components[:k].T

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components[: scores.shape[1]]

    def loadings(self) -> list[dict]:
        return [
            {"component": k + 1, "ratio": float(self.explained_variance_ratio[k]),
             **{c: float(x) for c, x in zip(self.columns, self.components[k])}}
            for k in range(len(self.columns))
        ]


def pca(X: DecisionMatrix, variance_target: float = DEFAULT_VARIANCE_TARGET) -> PcaResult:
    """Principal components of the correlation matrix.

    ``selected_count`` is the smallest k whose cumulative explained variance
    reaches *variance_target*.
    """
    if not 0 < variance_target <= 1:
        raise ValueError(f"variance_target must lie in (0, 1], got {variance_target}")
    n, m = X.shape
    if n <= m:
        raise ValueError(f"PCA needs more rows than columns (n={n}, m={m})")
    R = correlation_matrix(X)
    w, v = jacobi_eigh(R)
    w = np.clip(w, 0.0, None)
    ratios = w / w.sum()
    cum = np.cumsum(ratios)
    # tolerance so that a target of 1.0 is reachable despite rounding
    k = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    return PcaResult(v.T.copy(), ratios, min(k, m), w, X.columns)
