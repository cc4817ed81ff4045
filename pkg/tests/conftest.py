import json
import os

import numpy as np
import pytest

from sprlab import mpr, sced
from sprlab.grid import builtin_case, compute_shift_factors

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def fig1():
    return builtin_case("fig1")


@pytest.fixture(scope="session")
def fig13():
    return builtin_case("fig13")


@pytest.fixture(scope="session")
def fig1_lp(fig1):
    return sced.build_sced(fig1, compute_shift_factors(fig1))


@pytest.fixture(scope="session")
def fig13_lp(fig13):
    return sced.build_sced(fig13, compute_shift_factors(fig13))


@pytest.fixture(scope="session")
def fig1_box():
    return mpr.LoadBox(lower=np.array([-100.0, -100.0]), upper=np.array([200.0, 200.0]))


@pytest.fixture(scope="session")
def fig13_box():
    return mpr.LoadBox(lower=np.array([-150.0, -150.0]), upper=np.array([300.0, 300.0]))


@pytest.fixture(scope="session")
def fig13_regions(fig13, fig13_box, fig13_lp):
    return mpr.enumerate_sprs(fig13, fig13_box, lp=fig13_lp)


@pytest.fixture(scope="session")
def fig1_regions(fig1, fig1_box, fig1_lp):
    return mpr.enumerate_sprs(fig1, fig1_box, lp=fig1_lp)


@pytest.fixture(scope="session")
def appendix_regions():
    with open(os.path.join(FIXTURES, "fig13_regions.json")) as fh:
        doc = json.load(fh)
    out = []
    for entry in doc["regions"]:
        rows = np.asarray(entry["rows"], dtype=float)
        a = rows[:, :2]
        b = rows[:, 2]
        norms = np.linalg.norm(a, axis=1)
        out.append({
            "spr": entry["spr"],
            "pattern": tuple(entry["pattern"]),
            "lmp": np.asarray(entry["lmp"], dtype=float),
            "a": a / norms[:, None],
            "b": b / norms,
        })
    return out
