"""Forecast error metrics: RMSE, MAE, MAPE and R² over flow series.

MAPE terms with zero actual flow are skipped (and counted); R² with zero
variance in the actuals is reported as undefined rather than coerced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricReport:
    rmse: float
    mae: float
    mape: float | None  # percent; None when every actual was zero
    r2: float | None  # None when the actuals are constant
    n: int
    mape_skipped: int = 0

    def row(self):
        fmt = lambda v: "" if v is None else repr(float(v))
        return (repr(self.rmse), repr(self.mae), fmt(self.mape), fmt(self.r2))


def compute(actual, predicted):
    actual = np.asarray(actual, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if actual.size == 0:
        raise ValueError("empty input")
    if actual.shape != predicted.shape:
        raise ValueError("length mismatch")

    err = actual - predicted
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))

    nonzero = actual != 0
    skipped = int((~nonzero).sum())
    if nonzero.any():
        mape = float(np.mean(np.abs(err[nonzero] / actual[nonzero])) * 100.0)
    else:
        mape = None

    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(err ** 2)) / ss_tot

    return MetricReport(rmse=rmse, mae=mae, mape=mape, r2=r2,
                        n=int(actual.size), mape_skipped=skipped)
