import json

import numpy as np
import pytest

from sprlab import grid


def test_fig1_loads_and_validates(fig1):
    assert fig1.n_bus == 3
    assert fig1.n_gen == 2
    assert np.allclose(fig1.ratings, [60.0, 60.0, 80.0])
    assert np.allclose(fig1.cost, [20.0, 50.0])
    assert fig1.load_buses == (2, 3)


def test_fig13_loads_and_validates(fig13):
    assert fig13.n_gen == 3
    assert np.allclose(fig13.cost, [20.0, 50.0, 100.0])
    assert np.allclose(fig13.pmax, [100.0, 150.0, 50.0])


def test_bad_generator_bounds_rejected(tmp_path):
    doc = {
        "buses": 2,
        "slack": 1,
        "lines": [{"from": 1, "to": 2, "susceptance": 1.0, "rating": 50.0}],
        "generators": [
            {"bus": 1, "cost": 10.0, "pmin": 30.0, "pmax": 10.0,
             "ramp_up": 1.0, "ramp_down": 1.0}
        ],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(grid.CaseError, match="generator 1"):
        grid.load_case(path)


def test_disconnected_network_rejected(tmp_path):
    doc = {
        "buses": 3,
        "slack": 1,
        "lines": [{"from": 1, "to": 2, "susceptance": 1.0, "rating": 50.0}],
        "generators": [
            {"bus": 1, "cost": 10.0, "pmin": 0.0, "pmax": 10.0,
             "ramp_up": 1.0, "ramp_down": 1.0}
        ],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(grid.CaseError, match="connected"):
        grid.load_case(path)


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"buses": 3,\n  "lines": [')
    with pytest.raises(grid.CaseError, match="line"):
        grid.load_case(path)


def test_shift_factors_match_triangle_values(fig13):
    h = grid.compute_shift_factors(fig13).h
    expected = np.array([
        [0.0, -2.0 / 3.0, -1.0 / 3.0],
        [0.0, -1.0 / 3.0, -2.0 / 3.0],
        [0.0, 1.0 / 3.0, -1.0 / 3.0],
    ])
    assert np.allclose(h, expected, atol=1e-12)


def test_slack_column_is_zero(fig13):
    shift = grid.compute_shift_factors(fig13)
    assert np.all(shift.h[:, shift.slack - 1] == 0.0)


def test_ptdf_matches_dc_power_flow_oracle(fig13):
    shift = grid.compute_shift_factors(fig13)
    rng = np.random.Generator(np.random.Philox(42))
    for _ in range(50):
        inj = rng.normal(size=3) * 100.0
        inj[0] = -(inj[1] + inj[2])  # balanced
        flows = grid.dc_power_flow(fig13, inj)
        assert np.abs(shift.h @ inj - flows).max() <= 1e-9


def test_ptdf_oracle_on_random_meshed_network():
    rng = np.random.Generator(np.random.Philox(7))
    lines = [grid.Line(1, 2, 2.0, 50.0), grid.Line(2, 3, 1.5, 50.0),
             grid.Line(3, 4, 0.7, 50.0), grid.Line(4, 1, 1.1, 50.0),
             grid.Line(1, 3, 0.9, 50.0)]
    gens = (grid.Generator(1, 10.0, 0.0, 100.0, 5.0, 5.0),)
    case = grid.NetworkCase(n_bus=4, lines=tuple(lines), generators=gens,
                            slack=2, load_buses=(1, 2, 3, 4), name="mesh4")
    shift = grid.compute_shift_factors(case)
    for _ in range(20):
        inj = rng.normal(size=4) * 40.0
        inj[1] = -(inj[0] + inj[2] + inj[3])
        flows = grid.dc_power_flow(case, inj)
        assert np.abs(shift.h @ inj - flows).max() <= 1e-9


def test_endpoint_rows_nonzero(fig13):
    h = grid.compute_shift_factors(fig13).h
    for k, ln in enumerate(fig13.lines):
        ends = np.zeros(3)
        ends[ln.from_bus - 1] = 1.0
        ends[ln.to_bus - 1] = 1.0
        val = h[k] @ ends
        assert np.isfinite(val)
        assert np.abs(h[k][[ln.from_bus - 1, ln.to_bus - 1]]).max() > 0.0


def test_with_load_buses(fig1):
    case3 = grid.with_load_buses(fig1, (1, 2, 3))
    assert case3.n_load == 3
    with pytest.raises(grid.CaseError):
        grid.with_load_buses(fig1, (1, 1))
