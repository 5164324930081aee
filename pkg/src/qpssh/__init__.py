"""Quasiperiodic non-Hermitian SSH chain: spectra, localization, winding, sweeps."""

__version__ = "0.1.0"

from .model import GOLDEN_BETA, Hamiltonian, InvalidParameterError, ModelParams, build_hamiltonian  # noqa: E402
from .spectral import EigenSystem, eigendecompose, split_edge_bulk  # noqa: E402
from .localization import LocalizationReport, Regime, aggregate, classify_regime  # noqa: E402
from .topology import WindingConfig, WindingResult, winding_number  # noqa: E402
from .sweep import SweepSpec, SweepTable, W2Rule, finite_size_scan, run_sweep  # noqa: E402

__all__ = [
    "GOLDEN_BETA",
    "Hamiltonian",
    "InvalidParameterError",
    "ModelParams",
    "build_hamiltonian",
    "EigenSystem",
    "eigendecompose",
    "split_edge_bulk",
    "LocalizationReport",
    "Regime",
    "aggregate",
    "classify_regime",
    "WindingConfig",
    "WindingResult",
    "winding_number",
    "SweepSpec",
    "SweepTable",
    "W2Rule",
    "finite_size_scan",
    "run_sweep",
]
