"""Dynamic device performance scoring.

Rank device feature snapshots with entropy-weighted TOPSIS, smooth the
resulting score series with a Hull moving average, forecast it with ARIMA,
and label network quality portraits from daily telemetry.
"""

from perfsense.evaluate import evaluate_multilevel, evaluate_snapshot, entropy_weights
from perfsense.matrix import DecisionMatrix
from perfsense.schema import FeatureSchema, default_schema, parse_schema
from perfsense.smooth import ScoreSeries, SmoothParams, hma, sma, wma, wma_corrected

__version__ = "0.1.0"

__all__ = [
    "DecisionMatrix", "FeatureSchema", "ScoreSeries", "SmoothParams",
    "default_schema", "parse_schema", "evaluate_snapshot", "evaluate_multilevel",
    "entropy_weights", "sma", "wma", "wma_corrected", "hma",
]
