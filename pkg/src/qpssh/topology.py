"""Real-space winding number of the open chain.

mu = Tr'(C Q [Q, X]) / (2 L'), where Q is the biorthogonal flattened
projector built from the lower half of the spectrum, X the cell coordinate
and Tr' the trace over the sites left after trimming ``l`` from each end.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import ModelParams, build_hamiltonian, chiral_signs
from .spectral import EigenSystem, eigendecompose

OCCUPIED_RULES = ("lower_real_half",)
# the raw trace gives exactly 1/2 in the clean nontrivial SSH chain
CALIBRATION = 2.0
# finite quasiperiodic non-Hermitian chains leave Im(mu) ~ 1e-5..1e-3 even deep in a
# phase, so validity uses a margin well below the 0.05 quantisation tolerance
IM_TOL = 1e-2
CUT_TOL = 1e-8  # relative to ||H||


class IllDefinedCutWarning(RuntimeWarning):
    """More than one chiral pair sits on Re(E) = 0 at the half-filling cut."""


@dataclass(frozen=True)
class WindingConfig:
    trim_fraction: float = 0.2
    occupied_rule: str = "lower_real_half"

    def __post_init__(self):
        if not 0.0 < self.trim_fraction < 0.5:
            raise ValueError(f"trim_fraction must lie in (0, 0.5), got {self.trim_fraction}")
        if self.occupied_rule not in OCCUPIED_RULES:
            raise ValueError(f"unknown occupied_rule {self.occupied_rule!r}")

    def trim(self, L: int) -> int:
        l = int(round(self.trim_fraction * L))
        if L - 2 * l < 2:
            raise ValueError(f"trim {l} leaves fewer than 2 sites of {L}")
        return l


@dataclass(frozen=True)
class WindingResult:
    mu_raw: float
    mu_calibrated: float
    im_residual: float
    trim_fraction: float
    occupied_rule: str
    calibration: float
    cut_ok: bool

    @property
    def valid(self) -> bool:
        return self.cut_ok and self.im_residual < IM_TOL

    def to_dict(self) -> dict:
        return {
            "mu_raw": self.mu_raw,
            "mu_calibrated": self.mu_calibrated,
            "im_residual": self.im_residual,
            "trim_fraction": self.trim_fraction,
            "occupied_rule": self.occupied_rule,
            "calibration": self.calibration,
            "valid": self.valid,
        }


def coordinate_operator(L: int) -> np.ndarray:
    """Diagonal of X: both sites of cell n carry coordinate n (1-based)."""
    return np.arange(L) // 2 + 1.0


def occupied_indices(eig: EigenSystem, rule: str = "lower_real_half") -> np.ndarray:
    if rule not in OCCUPIED_RULES:
        raise ValueError(f"unknown occupied_rule {rule!r}")
    # eigenvalues are already sorted by real part, then imaginary part, then index
    return np.arange(eig.dim // 2)


def cut_is_well_defined(eig: EigenSystem) -> bool:
    """At most one chiral pair (the edge pair) may sit on Re(E) = 0."""
    on_axis = np.abs(eig.eigenvalues.real) <= CUT_TOL * eig.h_norm
    return int(on_axis.sum()) <= 2


def build_q(eig: EigenSystem, rule: str = "lower_real_half") -> np.ndarray:
    """Q = sum_occ (|R><L| - C |R><L| C^-1)."""
    L = eig.dim
    c = chiral_signs(L)
    if not cut_is_well_defined(eig):
        warnings.warn(IllDefinedCutWarning("ill-defined occupied cut"), stacklevel=2)
    occ = occupied_indices(eig, rule)
    P = eig.right[:, occ] @ eig.left[:, occ].conj().T
    return P - (c[:, None] * P * c[None, :])


def winding_trace(Q: np.ndarray, trim: int) -> complex:
    """Tr'(C Q [Q, X]) / (2 L') without forming the L x L products."""
    L = Q.shape[0]
    c = chiral_signs(L)
    x = coordinate_operator(L)
    mid = np.arange(trim, L - trim)
    # (Q X - X Q)_{ji} = Q_{ji} (x_i - x_j)
    terms = Q[mid, :] * Q[:, mid].T * (x[mid][:, None] - x[None, :])
    return complex((c[mid] * terms.sum(axis=1)).sum() / (2 * mid.size))


def winding_number(eig: EigenSystem, cfg: WindingConfig | None = None, calibration: float = CALIBRATION) -> WindingResult:
    cfg = WindingConfig() if cfg is None else cfg
    cut_ok = cut_is_well_defined(eig)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllDefinedCutWarning)
        Q = build_q(eig, cfg.occupied_rule)
    value = winding_trace(Q, cfg.trim(eig.dim))
    return WindingResult(
        mu_raw=value.real,
        mu_calibrated=calibration * value.real,
        im_residual=abs(value.imag),
        trim_fraction=cfg.trim_fraction,
        occupied_rule=cfg.occupied_rule,
        calibration=calibration,
        cut_ok=cut_ok,
    )


def calibrate(t1: float = 1.0, t2: float = 1.3, n_cells: int = 200, trim_fraction: float = 0.2) -> float:
    """Calibration constant from the clean nontrivial chain: 1 / mu_raw, as a small rational."""
    params = ModelParams(t1=t1, t2=t2, w1=0.0, w2=0.0, gamma=0.0, n_cells=n_cells)
    eig = eigendecompose(build_hamiltonian(params))
    raw = winding_number(eig, WindingConfig(trim_fraction), calibration=1.0).mu_raw
    return float(Fraction(1.0 / raw).limit_denominator(4))
