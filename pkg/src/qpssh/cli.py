"""Command-line front end: ``qpssh {spectrum,sweep,winding,fss,snapshot}``.

Every subcommand reads a config file (JSON or ``key = value`` lines; dotted
keys such as ``base.t1`` nest), applies ``--set`` overrides, computes, and only
then writes its outputs (temp file + rename) followed by ``manifest.json``.
A manifest can be passed back as ``--config`` to repeat the run.

Exit codes: 0 success, 1 numeric failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .localization import aggregate, default_thresholds, write_state_metrics
from .model import InvalidParameterError, ModelParams, build_hamiltonian, parse_key_value
from .spectral import DEFAULT_TOL_EIG, EigensolverError, eigendecompose, split_edge_bulk
from .sweep import SELECTIONS, SweepSpec, finite_size_scan, run_sweep, snapshot, validate_sizes, write_snapshot_csv
from .topology import CALIBRATION, WindingConfig, winding_number

ENV_PREFIX = "QPSSH_"
OPTION_KEYS = ("eta_ipr", "eta_npr", "trim_fraction", "tol_eig")
MODEL_KEYS = ("t1", "t2", "w1", "w2", "gamma", "beta", "n_cells")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config


def _nest(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def _coerce(value):
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(path) -> dict:
    """Read a config or manifest file into a nested dict."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {path}: {exc}") from None
    else:
        try:
            data = _nest({k: _coerce(v) for k, v in parse_key_value(text).items()})
        except ValueError as exc:
            raise ConfigError(f"config: {exc}") from None
    if isinstance(data, dict) and "tool_version" in data and "config" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def apply_overrides(config: dict, sets) -> dict:
    config = json.loads(json.dumps(config))
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        node = config
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _coerce(value.strip())
    return config


def _env(name):
    return os.environ.get(ENV_PREFIX + name.upper())


def resolve_options(args, config: dict) -> dict:
    """Flag > environment variable > config file > default."""
    opts = {}
    for key, flag in (("eta_ipr", "eta_ipr"), ("eta_npr", "eta_npr"), ("trim_fraction", "trim"), ("tol_eig", "tol_eig")):
        value = getattr(args, flag, None)
        if value is None and _env(flag) is not None:
            try:
                value = float(_env(flag))
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{flag.upper()}: not a number") from None
        if value is None:
            value = config.get(key)
        opts[key] = value
    if opts["trim_fraction"] is None:
        opts["trim_fraction"] = 0.2
    if opts["tol_eig"] is None:
        opts["tol_eig"] = DEFAULT_TOL_EIG
    try:
        WindingConfig(float(opts["trim_fraction"]))
    except ValueError as exc:
        raise ConfigError(f"trim_fraction: {exc}") from None
    if float(opts["tol_eig"]) <= 0:
        raise ConfigError("tol_eig: must be positive")
    return opts


def _model_from(config: dict) -> ModelParams:
    try:
        return ModelParams.from_mapping({k: v for k, v in config.items() if k in MODEL_KEYS})
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None


def _check_keys(config: dict, allowed) -> None:
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config key")


# ---------------------------------------------------------------- output


class Outputs:
    """Collects files in memory; :meth:`commit` writes them atomically."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def add(self, name: str, writer) -> None:
        buf = io.StringIO(newline="")
        writer(buf)
        self.files[name] = buf.getvalue()

    def add_text(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self, manifest: dict) -> dict:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = dict(manifest)
        manifest["outputs"] = sorted(self.files)
        self.files["manifest.json"] = json.dumps(manifest, indent=2, default=_json_default) + "\n"
        names = [n for n in self.files if n != "manifest.json"] + ["manifest.json"]
        for name in names:
            _atomic_write(self.out_dir / name, self.files[name])
        return manifest


def _json_default(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest(command, config, opts, t0, diagnostics=None) -> dict:
    resolved = dict(config)
    resolved.update({k: v for k, v in opts.items() if v is not None})
    return {
        "tool": "qpssh",
        "tool_version": __version__,
        "command": command,
        "config": resolved,
        "calibration_constant": CALIBRATION,
        "wall_time_s": time.perf_counter() - t0,
        "diagnostics": diagnostics or {},
    }


PLOT_SPECTRUM = '''"""Real part of the spectrum coloured by per-state IPR."""
import sys
import matplotlib.pyplot as plt
import numpy as np

data = np.genfromtxt("states.csv", delimiter=",", names=True)
fig, ax = plt.subplots()
sc = ax.scatter(data["re_E"], data["im_E"], c=data["ipr"], s=6, cmap="viridis")
fig.colorbar(sc, label="IPR")
ax.set_xlabel("Re E")
ax.set_ylabel("Im E")
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "spectrum.png", dpi=150)
'''

PLOT_SWEEP = '''"""Bulk and edge participation ratios, winding and |E| of the edge pair."""
import sys
import matplotlib.pyplot as plt
import numpy as np

d = np.genfromtxt("sweep.csv", delimiter=",", names=True, dtype=None, encoding=None)
fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
axes[0, 0].plot(d["axis"], d["mu_calibrated"])
axes[0, 0].set_ylabel("winding")
axes[0, 1].plot(d["axis"], d["ipr_bulk"], "r", label="IPR bulk")
axes[0, 1].plot(d["axis"], d["npr_bulk"], "b", label="NPR bulk")
axes[0, 1].legend()
axes[1, 0].semilogy(d["axis"], d["absE_edge"], "k", label="|E| edge")
axes[1, 0].twinx().plot(d["axis"], d["npr_edge"], "g")
axes[1, 1].plot(d["axis"], d["dnpr_edge"])
axes[1, 1].set_ylabel("d NPR edge")
for ax in axes[1]:
    ax.set_xlabel("axis")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "sweep.png", dpi=150)
'''

PLOT_SNAPSHOT = '''"""Per-site weight of each selected state, ordered by Re E."""
import sys
import matplotlib.pyplot as plt
import numpy as np

d = np.genfromtxt("snapshot.csv", delimiter=",", names=True)
states = np.unique(d["state"])
sites = int(d["site"].max()) + 1
grid = d["prob"].reshape(states.size, sites)
fig, ax = plt.subplots()
ax.imshow(grid, aspect="auto", origin="lower", cmap="magma")
ax.set_xlabel("site")
ax.set_ylabel("state (by Re E)")
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "snapshot.png", dpi=150)
'''


# ---------------------------------------------------------------- commands


def cmd_spectrum(args, config, opts) -> int:
    t0 = time.perf_counter()
    _check_keys(config, MODEL_KEYS + OPTION_KEYS + ("dump_matrix",))
    params = _model_from(config)
    H = build_hamiltonian(params)
    eig = eigendecompose(H, tol_eig=float(opts["tol_eig"]))
    edge, bulk = split_edge_bulk(eig)
    rep = aggregate(eig, (edge, bulk), opts["eta_ipr"], opts["eta_npr"])
    out = Outputs(args.out)
    out.add("spectrum.csv", _writer(eig.to_csv))
    out.add("states.csv", _writer(lambda p: write_state_metrics(p, eig, rep)))
    if config.get("dump_matrix") or args.dump_matrix:
        out.add("hamiltonian.csv", _writer(H.to_csv))
    out.add_text("plot_spectrum.py", PLOT_SPECTRUM)
    diag = {
        "method": eig.method,
        "max_residual": eig.max_residual,
        "biorth_error": eig.biorth_error,
        "near_defective_pairs": [list(p) for p in eig.near_defective[:20]],
        "ipr_bulk": rep.ipr_bulk,
        "npr_bulk": rep.npr_bulk,
        "ipr_edge": rep.ipr_edge,
        "npr_edge": rep.npr_edge,
        "abs_E_edge": rep.abs_E_edge,
        "regime": rep.regime.value,
        "thresholds": list(rep.thresholds_used),
    }
    out.commit(_manifest("spectrum", config, opts, t0, diag))
    print(f"regime={rep.regime.value} ipr_bulk={rep.ipr_bulk:.6g} npr_bulk={rep.npr_bulk:.6g} -> {args.out}")
    return 0


def _writer(to_path):
    """Adapt a ``to_csv(path)`` style function to a text-stream writer."""

    def write(buf):
        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / "f.csv"
            to_path(p)
            buf.write(p.read_text())

    return write


def cmd_winding(args, config, opts) -> int:
    t0 = time.perf_counter()
    _check_keys(config, MODEL_KEYS + OPTION_KEYS)
    params = _model_from(config)
    eig = eigendecompose(build_hamiltonian(params), tol_eig=float(opts["tol_eig"]))
    res = winding_number(eig, WindingConfig(float(opts["trim_fraction"])))
    print(f"mu = {res.mu_calibrated:.6f} (raw {res.mu_raw:.6f}, |Im| {res.im_residual:.2e}, valid={res.valid})")
    if args.out is not None:
        out = Outputs(args.out)
        out.commit(_manifest("winding", config, opts, t0, {"winding": res.to_dict(), "method": eig.method}))
    return 0


def cmd_sweep(args, config, opts) -> int:
    t0 = time.perf_counter()
    spec_cfg = {k: v for k, v in config.items() if k not in ("eta_ipr", "eta_npr", "trim_fraction", "tol_eig")}
    try:
        spec = SweepSpec.from_dict(
            dict(spec_cfg, eta_ipr=opts["eta_ipr"], eta_npr=opts["eta_npr"], trim_fraction=float(opts["trim_fraction"]), tol_eig=float(opts["tol_eig"]))
        )
    except InvalidParameterError as exc:
        raise ConfigError(f"base.{exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    table = run_sweep(spec, jobs=args.jobs)
    failed = [r.axis_value for r in table.records if any(f.startswith("solver_error") for f in r.flags)]
    out = Outputs(args.out)
    out.add("sweep.csv", table.write_csv)
    if spec.spectrum_dump:
        out.add("spectra.csv", table.write_spectra_csv)
    for i, (value, profiles) in enumerate(sorted(table.snapshots.items())):
        out.add(f"snapshot_{i:02d}.csv", lambda fh, p=profiles: write_snapshot_csv(fh, p))
    out.add_text("plot_sweep.py", PLOT_SWEEP)
    diag = {
        "thresholds": table.metadata["thresholds"],
        "failed_points": failed,
        "snapshot_values": sorted(table.snapshots),
        "deterministic": table.metadata["deterministic"],
    }
    resolved = spec.to_dict()
    out.commit(_manifest("sweep", resolved, opts, t0, diag))
    print(f"{len(table.records)} points -> {Path(args.out) / 'sweep.csv'}")
    return 1 if len(failed) == len(table.records) else 0


def cmd_fss(args, config, opts) -> int:
    t0 = time.perf_counter()
    _check_keys(config, MODEL_KEYS + OPTION_KEYS + ("sizes",))
    if "sizes" not in config:
        raise ConfigError("sizes: missing required key")
    try:
        sizes = validate_sizes(config["sizes"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = dict(config)
    cfg.setdefault("n_cells", sizes[0] // 2)
    params = _model_from(cfg)
    records = finite_size_scan(params, sizes, jobs=args.jobs, eta_ipr=opts["eta_ipr"], eta_npr=opts["eta_npr"], tol_eig=float(opts["tol_eig"]))

    def write(fh):
        import csv

        w = csv.writer(fh)
        w.writerow(["L", "npr_bulk", "ipr_bulk", "npr_edge", "ipr_edge", "regime", "eta_ipr", "eta_npr", "flags"])
        for r in records:
            eta = default_thresholds(r.L)
            w.writerow([r.L, repr(float(r.npr_bulk)), repr(float(r.ipr_bulk)), repr(float(r.npr_edge)), repr(float(r.ipr_edge)), r.regime,
                        repr(float(opts["eta_ipr"] or eta[0])), repr(float(opts["eta_npr"] or eta[1])), ";".join(r.flags)])

    out = Outputs(args.out)
    out.add("fss.csv", write)
    out.commit(_manifest("fss", cfg, opts, t0, {"sizes": sizes}))
    for r in records:
        print(f"L={r.L} npr_bulk={r.npr_bulk:.6g} ipr_bulk={r.ipr_bulk:.6g} {r.regime}")
    return 0


def cmd_snapshot(args, config, opts) -> int:
    t0 = time.perf_counter()
    _check_keys(config, MODEL_KEYS + OPTION_KEYS + ("selection",))
    selection = config.get("selection", "all_states")
    if selection not in SELECTIONS:
        raise ConfigError(f"selection: must be one of {', '.join(SELECTIONS)}")
    params = _model_from(config)
    profiles = snapshot(params, selection, tol_eig=float(opts["tol_eig"]))
    out = Outputs(args.out)
    out.add("snapshot.csv", lambda fh: write_snapshot_csv(fh, profiles))
    out.add_text("plot_snapshot.py", PLOT_SNAPSHOT)
    cfg = dict(config, selection=selection)
    out.commit(_manifest("snapshot", cfg, opts, t0, {"states": len(profiles)}))
    print(f"{len(profiles)} states -> {Path(args.out) / 'snapshot.csv'}")
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "winding": cmd_winding,
    "fss": cmd_fss,
    "snapshot": cmd_snapshot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key = value file (a manifest.json also works)")
    common.add_argument("--out", help="output directory (default: ./out-<command>)")
    common.add_argument("--jobs", type=int, help="worker processes for sweeps (default: all cores)")
    common.add_argument("--eta-ipr", type=float, dest="eta_ipr", help="IPR zero threshold (default max(5/L, 1e-3))")
    common.add_argument("--eta-npr", type=float, dest="eta_npr", help="NPR zero threshold (default max(8/L, 1e-3))")
    common.add_argument("--trim", type=float, help="boundary trim fraction l/L for the winding trace (default 0.2)")
    common.add_argument("--tol-eig", type=float, dest="tol_eig", help="relative eigen-residual bound (default 1e-8)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry; repeatable")

    parser = argparse.ArgumentParser(prog="qpssh", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qpssh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("spectrum", parents=[common], help="eigenvalues with per-state IPR/NPR")
    p.add_argument("--dump-matrix", action="store_true", help="also write the Hamiltonian as CSV triplets")
    sub.add_parser("sweep", parents=[common], help="one-parameter sweep over w1 or gamma")
    sub.add_parser("winding", parents=[common], help="real-space winding number")
    sub.add_parser("fss", parents=[common], help="finite-size scan at fixed parameters")
    sub.add_parser("snapshot", parents=[common], help="per-site eigenstate profiles")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        args.config = _env("config")
    if args.out is None:
        args.out = _env("out") or (None if args.command == "winding" else f"out-{args.command}")
    if args.jobs is None and _env("jobs") is not None:
        try:
            args.jobs = int(_env("jobs"))
        except ValueError:
            print(f"error: {ENV_PREFIX}JOBS: not an integer", file=sys.stderr)
            return 2
    if not hasattr(args, "dump_matrix"):
        args.dump_matrix = False
    try:
        config = apply_overrides(load_config(args.config), args.set)
        opts = resolve_options(args, config)
        return COMMANDS[args.command](args, config, opts)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EigensolverError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
