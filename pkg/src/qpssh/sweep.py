"""One-parameter sweeps, NPR derivative, transition detection, size scans."""
from __future__ import annotations

import csv
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .localization import LocalizationReport, Regime, aggregate, default_thresholds
from .model import ModelParams, build_hamiltonian
from .spectral import (
    DEFAULT_TOL_EIG,
    EdgeTieWarning,
    EigensolverError,
    NearDefectiveWarning,
    eigendecompose,
    split_edge_bulk,
)
from .topology import WindingConfig, winding_number

AXES = ("w1", "gamma")
W2_KINDS = ("equal", "constant", "cosine")
SELECTIONS = ("all_states", "bulk_only", "lowest_abs_energy")
CSV_HEADER = (
    "axis",
    "mu_raw",
    "mu_calibrated",
    "absE_edge",
    "ipr_bulk",
    "npr_bulk",
    "ipr_edge",
    "npr_edge",
    "dnpr_edge",
    "regime",
    "flags",
)
DEFAULT_PROMINENCE = 20.0


@dataclass(frozen=True)
class W2Rule:
    """How W2 follows W1: ``equal``, ``constant`` (W2 = c) or ``cosine`` (W2 = a cos(b W1) + c)."""

    kind: str = "equal"
    a: float | None = None
    b: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in W2_KINDS:
            raise ValueError(f"w2_rule: unknown kind {self.kind!r}")
        used = {"equal": (), "constant": ("c",), "cosine": ("a", "b", "c")}[self.kind]
        for name in ("a", "b", "c"):
            value = getattr(self, name)
            if name in used and value is None:
                raise ValueError(f"w2_rule: {self.kind} needs {name}")
            if name not in used and value is not None:
                raise ValueError(f"w2_rule: {name} is not used by {self.kind}")

    def apply(self, w1: float) -> float:
        if self.kind == "equal":
            return w1
        if self.kind == "constant":
            return self.c
        return self.a * math.cos(self.b * w1) + self.c

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_value(cls, value) -> "W2Rule":
        if isinstance(value, W2Rule):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        return cls(**value)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    start: float
    stop: float
    num_points: int
    base: ModelParams
    w2_rule: W2Rule = W2Rule()
    winding: bool = True
    spectrum_dump: bool = False
    snapshots: tuple = ()
    eta_ipr: float | None = None
    eta_npr: float | None = None
    trim_fraction: float = 0.2
    tol_eig: float = DEFAULT_TOL_EIG

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.start < self.stop:
            raise ValueError("start must be < stop")
        if isinstance(self.num_points, bool) or int(self.num_points) != self.num_points or self.num_points < 2:
            raise ValueError("num_points must be an integer >= 2")
        object.__setattr__(self, "num_points", int(self.num_points))
        object.__setattr__(self, "snapshots", tuple(float(s) for s in self.snapshots))
        WindingConfig(self.trim_fraction)

    def grid(self) -> np.ndarray:
        k = np.arange(self.num_points)
        return self.start + k * (self.stop - self.start) / (self.num_points - 1)

    def params_at(self, value: float) -> ModelParams:
        if self.axis == "w1":
            return self.base.replace(w1=value, w2=self.w2_rule.apply(value))
        return self.base.replace(gamma=value, w2=self.w2_rule.apply(self.base.w1))

    def thresholds(self) -> tuple[float, float]:
        d_ipr, d_npr = default_thresholds(self.base.L)
        return (
            d_ipr if self.eta_ipr is None else self.eta_ipr,
            d_npr if self.eta_npr is None else self.eta_npr,
        )

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "start": self.start,
            "stop": self.stop,
            "num_points": self.num_points,
            "base": self.base.to_dict(),
            "w2_rule": self.w2_rule.to_dict(),
            "winding": self.winding,
            "spectrum_dump": self.spectrum_dump,
            "snapshots": list(self.snapshots),
            "eta_ipr": self.eta_ipr,
            "eta_npr": self.eta_npr,
            "trim_fraction": self.trim_fraction,
            "tol_eig": self.tol_eig,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown sweep key")
        for key in ("axis", "start", "stop", "num_points", "base"):
            if key not in data:
                raise ValueError(f"{key}: missing required sweep key")
        base = data.pop("base")
        data["base"] = base if isinstance(base, ModelParams) else ModelParams.from_mapping(base)
        if "w2_rule" in data:
            data["w2_rule"] = W2Rule.from_value(data["w2_rule"])
        return cls(**data)


@dataclass
class PointResult:
    axis_value: float
    params: ModelParams
    mu_raw: float = math.nan
    mu_calibrated: float = math.nan
    mu_im: float = math.nan
    abs_E_edge: float = math.nan
    ipr_bulk: float = math.nan
    npr_bulk: float = math.nan
    ipr_edge: float = math.nan
    npr_edge: float = math.nan
    regime: str = Regime.INDETERMINATE.value
    flags: tuple = ()
    max_residual: float = math.nan
    biorth_error: float = math.nan
    method: str = ""
    spectrum: np.ndarray | None = field(default=None, repr=False)


def evaluate_point(
    params: ModelParams,
    axis_value: float = math.nan,
    winding: bool = True,
    spectrum_dump: bool = False,
    eta_ipr=None,
    eta_npr=None,
    trim_fraction: float = 0.2,
    tol_eig: float = DEFAULT_TOL_EIG,
) -> PointResult:
    """Build, diagonalize, split, aggregate and (optionally) wind one parameter point.

    Solver failures are reported in ``flags`` rather than raised.
    """
    out = PointResult(axis_value=axis_value, params=params)
    flags = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            eig = eigendecompose(build_hamiltonian(params), tol_eig=tol_eig)
        except EigensolverError as exc:
            out.flags = (f"solver_error:{exc}",)
            return out
        edge, bulk = split_edge_bulk(eig)
        rep = aggregate(eig, (edge, bulk), eta_ipr, eta_npr)
        if winding:
            wr = winding_number(eig, WindingConfig(trim_fraction))
            out.mu_raw, out.mu_calibrated, out.mu_im = wr.mu_raw, wr.mu_calibrated, wr.im_residual
            if not wr.cut_ok:
                flags.append("ill_defined_cut")
            elif not wr.valid:
                flags.append("non_quantized_winding")
    for w in caught:
        if issubclass(w.category, NearDefectiveWarning):
            flags.append("near_defective")
        elif issubclass(w.category, EdgeTieWarning):
            flags.append("edge_tie")
    if eig.method != "chiral":
        flags.append(f"solver:{eig.method}")
    out.abs_E_edge = rep.abs_E_edge
    out.ipr_bulk, out.npr_bulk = rep.ipr_bulk, rep.npr_bulk
    out.ipr_edge, out.npr_edge = rep.ipr_edge, rep.npr_edge
    out.regime = rep.regime.value
    out.max_residual = eig.max_residual
    out.biorth_error = eig.biorth_error
    out.method = eig.method
    out.flags = tuple(dict.fromkeys(flags))
    if spectrum_dump:
        is_edge = np.zeros(eig.dim)
        is_edge[edge] = 1
        out.spectrum = np.column_stack(
            [eig.eigenvalues.real, eig.eigenvalues.imag, np.abs(eig.eigenvalues), rep.per_state_ipr, rep.per_state_npr, is_edge]
        )
    return out


def _sweep_task(args):
    spec, value = args
    return evaluate_point(
        spec.params_at(value),
        axis_value=value,
        winding=spec.winding,
        spectrum_dump=spec.spectrum_dump,
        eta_ipr=spec.eta_ipr,
        eta_npr=spec.eta_npr,
        trim_fraction=spec.trim_fraction,
        tol_eig=spec.tol_eig,
    )


def _map(func, items, jobs):
    items = list(items)
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(func, items))


@dataclass
class SweepTable:
    spec: SweepSpec
    records: list
    metadata: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    @property
    def axis_values(self) -> np.ndarray:
        return np.array([r.axis_value for r in self.records])

    def column(self, name: str) -> np.ndarray:
        if name == "axis":
            return self.axis_values
        name = {"absE_edge": "abs_E_edge"}.get(name, name)
        if name == "regime":
            return np.array([r.regime for r in self.records])
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def regimes(self) -> list[str]:
        return [r.regime for r in self.records]

    def dnpr_edge(self) -> np.ndarray:
        if len(self.records) < 3:
            return np.full(len(self.records), math.nan)
        return derivative(self, "npr_edge")

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        d = self.dnpr_edge()
        for r, dv in zip(self.records, d):
            writer.writerow(
                [
                    repr(float(r.axis_value)),
                    repr(float(r.mu_raw)),
                    repr(float(r.mu_calibrated)),
                    repr(float(r.abs_E_edge)),
                    repr(float(r.ipr_bulk)),
                    repr(float(r.npr_bulk)),
                    repr(float(r.ipr_edge)),
                    repr(float(r.npr_edge)),
                    repr(float(dv)),
                    r.regime,
                    ";".join(r.flags),
                ]
            )

    def write_spectra_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(["axis", "index", "re_E", "im_E", "abs_E", "ipr", "npr", "is_edge"])
        for r in self.records:
            if r.spectrum is None:
                continue
            for i, row in enumerate(r.spectrum):
                writer.writerow([repr(float(r.axis_value)), i, *(repr(float(x)) for x in row[:5]), int(row[5])])


def run_sweep(spec: SweepSpec, jobs: int | None = 1) -> SweepTable:
    """Evaluate every grid point; records come back in grid order."""
    t0 = time.perf_counter()
    grid = spec.grid()
    records = _map(_sweep_task, [(spec, float(v)) for v in grid], jobs)
    eta_ipr, eta_npr = spec.thresholds()
    table = SweepTable(
        spec=spec,
        records=records,
        metadata={
            "axis": spec.axis,
            "spec": spec.to_dict(),
            "thresholds": {"eta_ipr": eta_ipr, "eta_npr": eta_npr},
            "deterministic": "no random input; identical spec gives identical output on one numeric backend",
        },
    )
    for value in spec.snapshots:
        table.snapshots[value] = snapshot(spec.params_at(value), "all_states", tol_eig=spec.tol_eig)
    table.metadata["wall_time_s"] = time.perf_counter() - t0
    return table


def derivative(table, column: str, grid=None) -> np.ndarray:
    """d(column)/d(axis) by central differences, second-order one-sided at the ends.

    ``table`` may be a :class:`SweepTable` or an array of values (then pass ``grid``).
    """
    if isinstance(table, SweepTable):
        values = table.column(column)
        grid = table.axis_values
    else:
        values = np.asarray(table, dtype=float)
        if grid is None:
            raise ValueError("grid is required when passing raw values")
        grid = np.asarray(grid, dtype=float)
    if values.size < 3 or values.size != grid.size:
        raise ValueError("need at least 3 points on a matching grid")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0) or steps[0] <= 0:
        raise ValueError("grid must be uniform and increasing")
    return np.gradient(values, steps[0], edge_order=2)


def detect_transitions(deriv, grid, prominence: float = DEFAULT_PROMINENCE) -> list[float]:
    """Axis values of local maxima of |deriv| above ``prominence * median |deriv|``.

    Peaks closer than one grid step are merged into the taller one.
    """
    a = np.abs(np.asarray(deriv, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if a.size != grid.size:
        raise ValueError("deriv and grid differ in length")
    if a.size == 0:
        return []
    a = np.nan_to_num(a, nan=0.0)
    thr = prominence * float(np.median(a))
    left = np.concatenate([[-np.inf], a[:-1]])
    right = np.concatenate([a[1:], [-np.inf]])
    peaks = np.flatnonzero((a > thr) & (a > 0) & (a >= left) & (a >= right))
    merged = []
    for i in peaks:
        if merged and i - merged[-1] <= 1:
            if a[i] > a[merged[-1]]:
                merged[-1] = i
            continue
        merged.append(i)
    return [float(grid[i]) for i in merged]


@dataclass(frozen=True)
class SizeRecord:
    L: int
    npr_bulk: float
    ipr_bulk: float
    npr_edge: float
    ipr_edge: float
    regime: str
    flags: tuple = ()


def _size_task(args):
    params, L, eta_ipr, eta_npr, tol_eig = args
    res = evaluate_point(params.replace(n_cells=L // 2), winding=False, eta_ipr=eta_ipr, eta_npr=eta_npr, tol_eig=tol_eig)
    return SizeRecord(L, res.npr_bulk, res.ipr_bulk, res.npr_edge, res.ipr_edge, res.regime, res.flags)


def validate_sizes(sizes) -> list[int]:
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes: empty")
    for s in sizes:
        if isinstance(s, bool) or int(s) != s or s < 4 or int(s) % 2:
            raise ValueError(f"sizes: {s} is not an even integer >= 4")
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes: must be strictly ascending")
    return sizes


def finite_size_scan(params: ModelParams, sizes, jobs: int | None = 1, eta_ipr=None, eta_npr=None, tol_eig=DEFAULT_TOL_EIG) -> list[SizeRecord]:
    """Full pipeline at fixed parameters for each chain length L (n_cells = L/2).

    Thresholds default to the size-dependent values of each L.
    """
    sizes = validate_sizes(sizes)
    return _map(_size_task, [(params, L, eta_ipr, eta_npr, tol_eig) for L in sizes], jobs)


@dataclass(frozen=True)
class StateProfile:
    index: int
    re_E: float
    im_E: float
    ipr: float
    is_edge: bool
    probability: np.ndarray = field(repr=False)


def snapshot(params: ModelParams, selection: str = "all_states", tol_eig=DEFAULT_TOL_EIG) -> list[StateProfile]:
    """Per-site |psi_i|^2 of the selected unit-norm right eigenvectors."""
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    eig = eigendecompose(build_hamiltonian(params), tol_eig=tol_eig)
    edge, bulk = split_edge_bulk(eig)
    rep: LocalizationReport = aggregate(eig, (edge, bulk))
    chosen = {"all_states": np.arange(eig.dim), "bulk_only": bulk, "lowest_abs_energy": edge}[selection]
    prob = np.abs(eig.right) ** 2
    edge_set = set(edge.tolist())
    return [
        StateProfile(
            index=int(i),
            re_E=float(eig.eigenvalues[i].real),
            im_E=float(eig.eigenvalues[i].imag),
            ipr=float(rep.per_state_ipr[i]),
            is_edge=int(i) in edge_set,
            probability=prob[:, i],
        )
        for i in chosen
    ]


def write_snapshot_csv(fh, profiles) -> None:
    writer = csv.writer(fh)
    writer.writerow(["state", "site", "prob", "re_E", "im_E", "ipr", "is_edge"])
    for p in profiles:
        for site, value in enumerate(p.probability):
            writer.writerow([p.index, site, repr(float(value)), repr(float(p.re_E)), repr(float(p.im_E)), repr(float(p.ipr)), int(p.is_edge)])


def regime_runs(grid, regimes) -> list[tuple[str, float, float]]:
    """Collapse a regime sequence into ``(regime, first_value, last_value)`` runs."""
    runs = []
    for x, r in zip(grid, regimes):
        if runs and runs[-1][0] == r:
            runs[-1][2] = float(x)
        else:
            runs.append([r, float(x), float(x)])
    return [tuple(r) for r in runs]
