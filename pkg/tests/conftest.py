"""Shared figure-protocol sweeps, computed once per session."""
import math
import os

import pytest

from qpssh.model import ModelParams
from qpssh.sweep import SweepSpec, W2Rule, run_sweep

JOBS = os.cpu_count() or 1


def fig1_base(n_cells):
    return ModelParams(t1=1.0, t2=1.3, w1=0.0, w2=0.0, gamma=0.05, n_cells=n_cells)


def fig2_base(n_cells):
    return ModelParams(t1=1.0, t2=2.5, w1=0.0, w2=0.0, gamma=0.2, n_cells=n_cells)


FIG2_RULE = W2Rule("cosine", a=-2.0, b=3.0, c=2.0)


def fig2_w2(w1):
    return -2.0 * math.cos(3.0 * w1) + 2.0


def fig4_base(n_cells):
    return ModelParams(t1=9.0, t2=1.0, w1=0.0039, w2=1.563, gamma=0.0, n_cells=n_cells)


@pytest.fixture(scope="session")
def fig1_sweep_610():
    spec = SweepSpec(axis="w1", start=0.0, stop=4.0, num_points=201, base=fig1_base(305), winding=False)
    return run_sweep(spec, jobs=JOBS)


@pytest.fixture(scope="session")
def fig1_sweep_1220():
    spec = SweepSpec(axis="w1", start=0.0, stop=4.0, num_points=201, base=fig1_base(610), winding=True)
    return run_sweep(spec, jobs=JOBS)


@pytest.fixture(scope="session")
def fig2_sweep_1000():
    spec = SweepSpec(axis="w1", start=0.0, stop=4.0, num_points=201, base=fig2_base(500), w2_rule=FIG2_RULE, winding=False)
    return run_sweep(spec, jobs=JOBS)


@pytest.fixture(scope="session")
def fig4_sweep_2000():
    spec = SweepSpec(
        axis="gamma",
        start=0.0,
        stop=6.0,
        num_points=201,
        base=fig4_base(1000),
        w2_rule=W2Rule("constant", c=1.563),
        winding=False,
    )
    return run_sweep(spec, jobs=JOBS)
