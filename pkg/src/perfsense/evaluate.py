"""TOPSIS scoring with entropy-derived objective weights.

Pipeline for one population snapshot::

    positivize -> entropy_weights -> normalize -> ideal_targets -> topsis_scores

``evaluate_multilevel`` runs that pipeline per indicator category and then
once more over the category scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from perfsense.matrix import DecisionMatrix
from perfsense.schema import (
    INTERMEDIATE,
    INTERVAL,
    MAXIMAL,
    MINIMAL,
    FeatureSchema,
    maximal_schema,
)


class DegenerateColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NormalizedMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    degenerate: tuple[bool, ...] = ()

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class IdealTargets:
    best: np.ndarray
    worst: np.ndarray


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    e: np.ndarray
    g: np.ndarray
    P: np.ndarray
    columns: tuple[str, ...] = ()

    def report(self) -> list[dict]:
        """One record per indicator: ``{indicator, p_summary, e, g, w}``."""
        out = []
        for j, name in enumerate(self.columns or range(len(self.w))):
            p = self.P[:, j]
            out.append({
                "indicator": str(name),
                "p_summary": {"min": float(p.min()), "mean": float(p.mean()), "max": float(p.max())},
                "e": float(self.e[j]),
                "g": float(self.g[j]),
                "w": float(self.w[j]),
            })
        return out


@dataclass(frozen=True)
class ScoreVector:
    raw: np.ndarray
    d_plus: np.ndarray
    d_minus: np.ndarray
    row_ids: tuple[str, ...] = ()
    weights: WeightVector | None = None
    # per-category scaled scores when produced by evaluate_multilevel
    breakdown: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def scaled(self) -> np.ndarray:
        return 100.0 * self.raw


def positivize(X: DecisionMatrix, schema: FeatureSchema) -> DecisionMatrix:
    """Turn every column into a larger-is-better column.

    Constant columns that cannot be rescaled (zero spread from the best
    value) become all ones.
    """
    out = np.empty_like(X.values)
    for j, name in enumerate(X.columns):
        x = X.values[:, j]
        d = schema[name].direction
        if d.kind == MAXIMAL:
            out[:, j] = x
        elif d.kind == MINIMAL:
            out[:, j] = x.max() - x
        elif d.kind == INTERMEDIATE:
            M = np.abs(x - d.best).max()
            out[:, j] = 1.0 if M == 0 else 1.0 - np.abs(x - d.best) / M
        elif d.kind == INTERVAL:
            M = max(d.a - x.min(), x.max() - d.b)
            if M <= 0:
                out[:, j] = 1.0
            else:
                col = np.ones_like(x)
                below, above = x < d.a, x > d.b
                col[below] = 1.0 - (d.a - x[below]) / M
                col[above] = 1.0 - (x[above] - d.b) / M
                out[:, j] = col
        else:  # pragma: no cover - Direction.parse rejects others
            raise ValueError(f"unknown direction {d.kind!r} for {name!r}")
    return X.with_values(out)


def normalize(X_pos: DecisionMatrix) -> NormalizedMatrix:
    """Vector-normalize each column to unit Euclidean norm.

    All-zero columns stay zero and trigger a ``DegenerateColumnWarning``.
    """
    A = X_pos.values
    if (A < 0).any():
        raise ValueError("normalize expects a positivized (non-negative) matrix")
    norms = np.sqrt((A**2).sum(axis=0))
    zero = norms == 0
    if zero.any():
        names = [X_pos.columns[j] for j in np.flatnonzero(zero)]
        warnings.warn(f"all-zero column(s) left at zero: {', '.join(names)}", DegenerateColumnWarning, stacklevel=2)
    Z = np.divide(A, norms, out=np.zeros_like(A), where=~zero)
    return NormalizedMatrix(Z, X_pos.columns, tuple(bool(z) for z in zero))


def ideal_targets(Z: NormalizedMatrix) -> IdealTargets:
    return IdealTargets(best=Z.values.max(axis=0), worst=Z.values.min(axis=0))


def entropy_weights(X_pos: DecisionMatrix) -> WeightVector:
    """Entropy weights of a positivized matrix.

    Columns are min-max scaled to [0, 100] before computing the shares
    ``p``. ``0 * ln 0`` counts as 0. A constant column carries no
    information (e = 1, weight 0); if every column is constant the weights
    are uniform.
    """
    A = X_pos.values
    n, m = A.shape
    if n < 2:
        raise ValueError("entropy weights need at least two evaluation objects")
    lo, hi = A.min(axis=0), A.max(axis=0)
    spread = hi - lo
    constant = spread == 0
    scaled = np.divide(A - lo, spread, out=np.zeros_like(A), where=~constant) * 100.0
    sums = scaled.sum(axis=0)
    P = np.divide(scaled, sums, out=np.full_like(A, 1.0 / n), where=sums > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(P), 0.0)
    e = -plogp.sum(axis=0) / np.log(n)
    e[constant] = 1.0
    e = np.clip(e, 0.0, 1.0)
    g = 1.0 - e
    total = g.sum()
    w = g / total if total > 0 else np.full(m, 1.0 / m)
    return WeightVector(w=w, e=e, g=g, P=P, columns=X_pos.columns)


def topsis_scores(Z: NormalizedMatrix, targets: IdealTargets, w: WeightVector | np.ndarray) -> ScoreVector:
    """Relative closeness to the ideal, with weights inside the squared distances."""
    weights = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    z = Z.values
    m = z.shape[1]
    if weights.shape != (m,) or targets.best.shape != (m,) or targets.worst.shape != (m,):
        raise ValueError(f"dimension mismatch: matrix has {m} columns, weights {weights.shape}, "
                         f"targets {targets.best.shape}/{targets.worst.shape}")
    d_plus = np.sqrt((weights * (targets.best - z) ** 2).sum(axis=1))
    d_minus = np.sqrt((weights * (targets.worst - z) ** 2).sum(axis=1))
    denom = d_plus + d_minus
    raw = np.divide(d_minus, denom, out=np.full_like(denom, 0.5), where=denom > 0)
    return ScoreVector(raw=raw, d_plus=d_plus, d_minus=d_minus,
                       weights=w if isinstance(w, WeightVector) else None)


def entropy_linear_score(X_pos: DecisionMatrix, weights: WeightVector | None = None) -> np.ndarray:
    """Diagnostic score ``s_i = sum_j w_j * p_ij`` (not the headline score)."""
    weights = weights or entropy_weights(X_pos)
    return weights.P @ weights.w


def evaluate_snapshot(X: DecisionMatrix, schema: FeatureSchema) -> ScoreVector:
    """Weighted-TOPSIS scores of every row of a preprocessed snapshot."""
    X_pos = positivize(X, schema)
    weights = entropy_weights(X_pos)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        Z = normalize(X_pos)
    sv = topsis_scores(Z, ideal_targets(Z), weights)
    return ScoreVector(raw=sv.raw, d_plus=sv.d_plus, d_minus=sv.d_minus, row_ids=X.row_ids, weights=weights)


def evaluate_multilevel(X: DecisionMatrix, schema: FeatureSchema) -> ScoreVector:
    """Two-stage evaluation: per-category scores, then a global score over them."""
    X = X.reorder(schema) if X.columns != tuple(schema.names) else X
    if len(schema.categories) < 2:
        return evaluate_snapshot(X, schema)
    breakdown: dict[str, np.ndarray] = {}
    for cat in schema.categories:
        cols = [schema.indicators[j].name for j in schema.columns_of(cat)]
        if not cols:
            raise ValueError(f"category {cat!r} has no columns")
        breakdown[cat] = evaluate_snapshot(X.select(cols), schema).scaled
    stage2 = DecisionMatrix(np.column_stack([breakdown[c] for c in schema.categories]),
                            tuple(schema.categories), X.row_ids)
    sv = evaluate_snapshot(stage2, maximal_schema(schema.categories))
    return ScoreVector(raw=sv.raw, d_plus=sv.d_plus, d_minus=sv.d_minus, row_ids=X.row_ids,
                       weights=sv.weights, breakdown=breakdown)
