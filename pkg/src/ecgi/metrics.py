"""Reconstruction quality metrics: relative error, correlation, MSE."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .apsim import SpatioTemporalField

__all__ = ["MetricsReport", "evaluate"]


@dataclass(frozen=True)
class MetricsReport:
    re: float
    cc: float
    mse: float
    n: int

    def csv_row(self):
        return f"{self.re:.9g},{self.cc:.9g},{self.mse:.9g},{self.n}"


def evaluate(ref: SpatioTemporalField,
             est: SpatioTemporalField) -> MetricsReport:
    """RE, CC, and MSE between a reference and an estimated field.

    RE and MSE pool every spacetime sample.  CC mean-centers each node's
    time series and pools the node sums into a single quotient; nodes
    whose reference series is constant contribute nothing (with a
    warning), since their centered norm is zero.
    """
    u = ref.data
    uh = est.data
    if u.shape != uh.shape:
        raise ValueError(f"shape mismatch: ref {u.shape}, est {uh.shape}")
    ref_energy = (u ** 2).sum()
    if ref_energy == 0:
        raise ValueError("all-zero reference: RE undefined")
    diff2 = ((uh - u) ** 2).sum()
    re = float(np.sqrt(diff2) / np.sqrt(ref_energy))
    mse = float(diff2 / u.size)

    uc = u - u.mean(axis=1, keepdims=True)
    uhc = uh - uh.mean(axis=1, keepdims=True)
    const_rows = (uc == 0).all(axis=1)
    if const_rows.any():
        warnings.warn(
            f"{const_rows.sum()} constant reference node(s) skipped in CC",
            stacklevel=2)
        uc = uc[~const_rows]
        uhc = uhc[~const_rows]
    num = (uhc * uc).sum()
    den = np.sqrt((uhc ** 2).sum() * (uc ** 2).sum())
    cc = float(num / den) if den > 0 else 0.0
    return MetricsReport(re, cc, mse, u.size)
