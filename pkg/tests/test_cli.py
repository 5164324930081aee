import csv
import json
import math

import numpy as np
import pytest

from qpssh import __version__
from qpssh import cli
from qpssh.localization import default_thresholds

CLEAN = dict(t1=1.0, t2=1.3, w1=0.0, w2=0.0, gamma=0.0, n_cells=50)


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def sweep_cfg(tmp_path):
    text = "\n".join(
        [
            "axis = w1",
            "start = 0",
            "stop = 2",
            "num_points = 4",
            "base.t1 = 1",
            "base.t2 = 1.3",
            "base.w1 = 0",
            "base.w2 = 0",
            "base.gamma = 0.05",
            "base.n_cells = 16",
            "spectrum_dump = true",
            "snapshots = [1.0]",
        ]
    )
    p = tmp_path / "sweep.cfg"
    p.write_text(text + "\n")
    return str(p)


def test_spectrum_outputs(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", dict(CLEAN, gamma=0.0, w1=0.3, w2=0.3))
    out = tmp_path / "out"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--dump-matrix"]) == 0
    states = read_csv(out / "states.csv")
    spectrum = read_csv(out / "spectrum.csv")
    assert len(states) == len(spectrum) == 100
    assert list(spectrum[0]) == ["index", "re_E", "im_E", "abs_E", "residual"]
    # gamma = 0: the spectrum is real
    assert max(abs(float(r["im_E"])) for r in spectrum) == 0.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool_version"] == __version__
    assert sorted(manifest["outputs"]) == ["hamiltonian.csv", "plot_spectrum.py", "spectrum.csv", "states.csv"]
    assert manifest["calibration_constant"] == 2.0
    assert manifest["diagnostics"]["thresholds"] == list(default_thresholds(100))
    assert "regime=" in capsys.readouterr().out


def test_spectrum_fig1_small_imaginary_parts(tmp_path):
    cfg = write_json(tmp_path / "c.json", dict(t1=1, t2=1.3, w1=0, w2=0, gamma=0.05, n_cells=305))
    cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")])
    rows = read_csv(tmp_path / "o" / "spectrum.csv")
    norm = 2 * 1.3  # 1-norm of the clean chain is t1 + t2
    assert max(abs(float(r["im_E"])) for r in rows) < 1e-8 * norm


def test_spectrum_fig2_lowest_imaginary_states_are_extended(tmp_path):
    w1 = 2.02
    cfg = write_json(tmp_path / "c.json", dict(t1=1, t2=2.5, w1=w1, w2=-2 * math.cos(3 * w1) + 2, gamma=0.2, n_cells=500))
    cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")])
    rows = [r for r in read_csv(tmp_path / "o" / "states.csv") if r["is_edge"] == "0"]
    im = np.array([abs(float(r["im_E"])) for r in rows])
    ipr = np.array([float(r["ipr"]) for r in rows])
    n_ext = int((ipr < default_thresholds(1000)[0]).sum())
    assert n_ext > 0
    smallest_ipr = np.argsort(ipr)[:n_ext]
    # the most extended states all sit in the lowest-|Im E| third of the bulk
    assert im[smallest_ipr].max() <= np.quantile(im, 1 / 3)


def test_missing_t1_exit_2(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {k: v for k, v in CLEAN.items() if k != "t1"})
    out = tmp_path / "out"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out)]) == 2
    assert "t1" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "data, key",
    [
        (dict(CLEAN, n_cells=1), "n_cells"),
        (dict(CLEAN, beta=1.5), "beta"),
        (dict(CLEAN, colour=3), "colour"),
    ],
)
def test_invalid_config_names_key(tmp_path, capsys, data, key):
    cfg = write_json(tmp_path / "c.json", data)
    assert cli.main(["winding", "--config", cfg]) == 2
    assert key in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["spectrum", "--config", str(tmp_path / "nope.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["spectrum", "--config", str(tmp_path / "bad.json")]) == 2


def test_winding_prints_mu(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", dict(CLEAN, n_cells=200))
    assert cli.main(["winding", "--config", cfg, "--out", str(tmp_path / "w")]) == 0
    out = capsys.readouterr().out
    mu = float(out.split("mu = ")[1].split()[0])
    assert mu == pytest.approx(1.0, abs=0.05)
    manifest = json.loads((tmp_path / "w" / "manifest.json").read_text())
    assert manifest["diagnostics"]["winding"]["occupied_rule"] == "lower_real_half"


def test_sweep_two_points(tmp_path, sweep_cfg):
    assert cli.main(["sweep", "--config", sweep_cfg, "--out", str(tmp_path / "s"), "--set", "num_points=2", "--jobs", "1"]) == 0
    rows = read_csv(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 2
    assert list(rows[0]) == ["axis", "mu_raw", "mu_calibrated", "absE_edge", "ipr_bulk", "npr_bulk",
                             "ipr_edge", "npr_edge", "dnpr_edge", "regime", "flags"]


def test_manifest_round_trip(tmp_path, sweep_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--config", sweep_cfg, "--out", str(a), "--jobs", "1", "--eta-npr", "0.05"]) == 0
    assert cli.main(["sweep", "--config", str(a / "manifest.json"), "--out", str(b), "--jobs", "1"]) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"sweep.csv", "spectra.csv", "snapshot_00.csv", "plot_sweep.py"}
    for name in manifest["outputs"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_environment_overrides(tmp_path, sweep_cfg, monkeypatch):
    monkeypatch.setenv("QPSSH_ETA_NPR", "0.9")
    monkeypatch.setenv("QPSSH_OUT", str(tmp_path / "env"))
    assert cli.main(["sweep", "--config", sweep_cfg, "--jobs", "1"]) == 0
    manifest = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert manifest["diagnostics"]["thresholds"]["eta_npr"] == 0.9
    # an explicit flag beats the environment
    assert cli.main(["sweep", "--config", sweep_cfg, "--jobs", "1", "--eta-npr", "0.1"]) == 0
    manifest = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert manifest["diagnostics"]["thresholds"]["eta_npr"] == 0.1


def test_bad_sweep_key(tmp_path, sweep_cfg, capsys):
    assert cli.main(["sweep", "--config", sweep_cfg, "--set", "w2_rule.a=1", "--out", str(tmp_path / "x")]) == 2
    assert "w2_rule" in capsys.readouterr().err
    assert cli.main(["sweep", "--config", sweep_cfg, "--set", "base.gamma=abc"]) == 2


def test_fss(tmp_path):
    cfg = write_json(tmp_path / "f.json", dict(CLEAN, sizes=[40, 80]))
    assert cli.main(["fss", "--config", cfg, "--out", str(tmp_path / "f"), "--jobs", "1"]) == 0
    rows = read_csv(tmp_path / "f" / "fss.csv")
    assert [int(r["L"]) for r in rows] == [40, 80]


def test_fss_odd_size_exit_2(tmp_path, capsys):
    cfg = write_json(tmp_path / "f.json", dict(CLEAN, sizes=[40, 81]))
    assert cli.main(["fss", "--config", cfg, "--out", str(tmp_path / "f")]) == 2
    assert "sizes" in capsys.readouterr().err
    assert not (tmp_path / "f").exists()


def test_snapshot(tmp_path):
    cfg = write_json(tmp_path / "s.json", dict(CLEAN, selection="lowest_abs_energy"))
    assert cli.main(["snapshot", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    rows = read_csv(tmp_path / "s" / "snapshot.csv")
    assert len(rows) == 2 * 100
    assert (tmp_path / "s" / "plot_snapshot.py").exists()


def test_numeric_failure_exit_1(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", dict(CLEAN, w1=1.5, w2=1.5, gamma=0.05))
    out = tmp_path / "o"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--tol-eig", "1e-30"]) == 1
    assert "numeric failure" in capsys.readouterr().err
    assert not out.exists()


def test_failed_run_leaves_previous_outputs(tmp_path):
    cfg = write_json(tmp_path / "c.json", CLEAN)
    out = tmp_path / "o"
    cli.main(["spectrum", "--config", cfg, "--out", str(out)])
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--tol-eig", "1e-30"]) == 1
    assert {p.name: p.read_bytes() for p in out.iterdir()} == before


def test_atomic_write_cleans_up(tmp_path, monkeypatch):
    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli._atomic_write(tmp_path / "x.csv", "a,b\n")
    assert list(tmp_path.iterdir()) == []


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out
