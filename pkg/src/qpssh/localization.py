"""Participation ratios of right eigenvectors and their bulk/edge averages."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .spectral import EigenSystem, split_edge_bulk

# zero thresholds: an extended state has IPR ~ 1.5/L, a localized bulk has
# NPR ~ 3-6/L at desk sizes, so NPR needs the wider margin
IPR_ZERO_FACTOR = 5.0
NPR_ZERO_FACTOR = 8.0
ZERO_FLOOR = 1e-3


class Regime(str, enum.Enum):
    EXTENDED = "Extended"
    COEXISTING = "Coexisting"
    LOCALIZED = "Localized"
    INDETERMINATE = "Indeterminate"

    def __str__(self):
        return self.value


def default_thresholds(L: int) -> tuple[float, float]:
    """``(eta_ipr, eta_npr)`` separating O(1/L) values from O(1) ones."""
    return max(IPR_ZERO_FACTOR / L, ZERO_FLOOR), max(NPR_ZERO_FACTOR / L, ZERO_FLOOR)


def _weights(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    p = np.abs(v) ** 2
    total = p.sum(axis=0)
    if np.any(total == 0):
        raise ValueError("zero vector has no participation ratio")
    return p / total


def ipr_state(v) -> float | np.ndarray:
    """sum |v_i|^4 / (sum |v_i|^2)^2; columns of a 2-D input are separate states."""
    p = _weights(v)
    return (p**2).sum(axis=0)


def npr_state(v) -> float | np.ndarray:
    """1 / (L sum |v_i|^4) for the unit-normalised ``v``."""
    v = np.asarray(v)
    return 1.0 / (v.shape[0] * ipr_state(v))


def classify_regime(ipr_bulk, npr_bulk, L, eta_ipr=None, eta_npr=None) -> Regime:
    d_ipr, d_npr = default_thresholds(L)
    eta_ipr = d_ipr if eta_ipr is None else eta_ipr
    eta_npr = d_npr if eta_npr is None else eta_npr
    ipr_on = ipr_bulk >= eta_ipr
    npr_on = npr_bulk >= eta_npr
    if ipr_on and npr_on:
        return Regime.COEXISTING
    if ipr_on:
        return Regime.LOCALIZED
    if npr_on:
        return Regime.EXTENDED
    return Regime.INDETERMINATE


@dataclass(frozen=True)
class LocalizationReport:
    per_state_ipr: np.ndarray = field(repr=False)
    per_state_npr: np.ndarray = field(repr=False)
    edge_indices: np.ndarray = field(repr=False)
    bulk_indices: np.ndarray = field(repr=False)
    ipr_bulk: float
    npr_bulk: float
    ipr_edge: float
    npr_edge: float
    abs_E_edge: float
    regime: Regime
    thresholds_used: tuple[float, float]


def aggregate(eig: EigenSystem, split=None, eta_ipr=None, eta_npr=None) -> LocalizationReport:
    """Per-state IPR/NPR plus the averages over the L-2 bulk and 2 edge states."""
    if split is None:
        split = split_edge_bulk(eig)
    edge, bulk = (np.asarray(s) for s in split)
    L = eig.dim
    ipr = ipr_state(eig.right)
    npr = 1.0 / (L * ipr)
    d_ipr, d_npr = default_thresholds(L)
    eta = (d_ipr if eta_ipr is None else eta_ipr, d_npr if eta_npr is None else eta_npr)
    ipr_b = float(ipr[bulk].mean())
    npr_b = float(npr[bulk].mean())
    for arr in (ipr, npr):
        arr.setflags(write=False)
    return LocalizationReport(
        per_state_ipr=ipr,
        per_state_npr=npr,
        edge_indices=edge,
        bulk_indices=bulk,
        ipr_bulk=ipr_b,
        npr_bulk=npr_b,
        ipr_edge=float(ipr[edge].mean()),
        npr_edge=float(npr[edge].mean()),
        abs_E_edge=float(np.abs(eig.eigenvalues[edge]).mean()),
        regime=classify_regime(ipr_b, npr_b, L, *eta),
        thresholds_used=eta,
    )


def write_state_metrics(path, eig: EigenSystem, report: LocalizationReport) -> None:
    edge = set(report.edge_indices.tolist())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "re_E", "im_E", "abs_E", "ipr", "npr", "is_edge"])
        for i, e in enumerate(eig.eigenvalues):
            writer.writerow(
                [
                    i,
                    repr(float(e.real)),
                    repr(float(e.imag)),
                    repr(float(abs(e))),
                    repr(float(report.per_state_ipr[i])),
                    repr(float(report.per_state_npr[i])),
                    int(i in edge),
                ]
            )
