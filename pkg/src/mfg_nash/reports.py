"""Residual report container used by every verification layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ResidualReport:
    """Per-node residuals plus aggregate norms.

    ``per_node`` keeps the raw residual grid so callers can localize defects;
    ``sup_norm`` is the max absolute entry and ``l2_norm`` the root mean
    square over all scalar entries, so ``l2_norm <= sup_norm`` always holds.
    """

    label: str
    per_node: np.ndarray
    sup_norm: float
    l2_norm: float

    def to_dict(self) -> dict:
        return {"label": self.label, "sup": self.sup_norm, "l2": self.l2_norm}


def build_report(label: str, per_node: np.ndarray) -> ResidualReport:
    values = np.asarray(per_node, dtype=float)
    if values.size == 0:
        return ResidualReport(label, values, 0.0, 0.0)
    magnitude = np.abs(values)
    return ResidualReport(
        label=label,
        per_node=values,
        sup_norm=float(magnitude.max()),
        l2_norm=float(np.sqrt(np.mean(magnitude**2))),
    )
