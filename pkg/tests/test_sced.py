import dataclasses

import numpy as np
import pytest

from sprlab import grid, sced


def test_row_counts(fig1_lp, fig13_lp):
    assert fig1_lp.n_c == 2 + 2 * 3 + 2 * 2 == 12
    assert fig13_lp.n_c == 2 + 2 * 3 + 2 * 3 == 14


def test_block_structure(fig13_lp):
    lp = fig13_lp
    n_g = lp.n_g
    assert np.allclose(lp.a[0], np.ones(n_g))
    assert np.allclose(lp.a[1], -np.ones(n_g))
    assert np.allclose(lp.a[8:11], np.eye(n_g))
    assert np.allclose(lp.a[11:14], -np.eye(n_g))
    assert np.allclose(lp.b, [0, 0, 60, 60, 80, 60, 60, 80, 100, 150, 50, 0, 0, 0])
    assert np.allclose(lp.w[:2], [[1, 1], [-1, -1]])
    assert np.allclose(lp.w[8:], 0.0)
    assert lp.labels[0] == "balance+"
    assert lp.labels[2] == "line+1"
    assert lp.labels[13] == "gen-3"


def test_appendix_constraint_rows(fig13_lp):
    # rows 3..5 written over the generator injections (buses 2, 3)
    rows = fig13_lp.a[2:5][:, 1:]
    assert np.allclose(rows, [[-2 / 3, -1 / 3], [-1 / 3, -2 / 3], [1 / 3, -1 / 3]])


def test_overrides_touch_only_b(fig13, fig13_lp):
    lp2 = fig13_lp.with_b(f=1.1 * fig13.ratings)
    assert np.shares_memory(lp2.a, fig13_lp.a) or np.array_equal(lp2.a, fig13_lp.a)
    assert np.array_equal(lp2.w, fig13_lp.w)
    changed = np.nonzero(lp2.b != fig13_lp.b)[0]
    assert set(changed) <= set(range(2, 8))


def test_single_bus_single_generator():
    case = grid.NetworkCase(
        n_bus=1, lines=(), generators=(grid.Generator(1, 42.0, 0.0, 80.0, 5.0, 5.0),),
        slack=1, load_buses=(1,), name="one-bus",
    )
    # no lines: shift factors are an empty matrix
    shift = grid.ShiftFactorMatrix(h=np.zeros((0, 1)), slack=1)
    lp = sced.build_sced(case, shift)
    sol = sced.solve_lp(lp, np.array([55.0]))
    assert sol.p_g == pytest.approx([55.0])
    assert sol.lambda1 == pytest.approx(42.0)


def test_fig1_spr4_lmp(fig1, fig1_lp):
    shift = grid.compute_shift_factors(fig1)
    sol = sced.solve_lp(fig1_lp, np.array([150.0, -50.0]))
    lam = sced.compute_lmp(sol, shift)
    assert np.allclose(lam.lam, [20.0, 50.0, 35.0], atol=1e-9)


def test_fig13_spr2_lmp(fig13, fig13_lp):
    shift = grid.compute_shift_factors(fig13)
    sol = sced.solve_lp(fig13_lp, np.array([50.0, 110.0]))  # inside SPR 2
    lam = sced.compute_lmp(sol, shift)
    assert np.allclose(lam.lam, [20.0, 50.0, 80.0], atol=1e-9)
    assert sol.binding == (1, 2, 4, 14)


def test_uncongested_lmp_is_flat(fig13, fig13_lp):
    shift = grid.compute_shift_factors(fig13)
    sol = sced.solve_lp(fig13_lp, np.array([30.0, 30.0]))
    assert np.allclose(sol.mu_plus, 0.0) and np.allclose(sol.mu_minus, 0.0)
    lam = sced.compute_lmp(sol, shift)
    assert np.allclose(lam.lam, sol.lambda1)
    assert lam.lam[fig13.slack - 1] == pytest.approx(sol.lambda1)


def test_objective_bounds_random_feasible_dispatch(fig13, fig13_lp):
    """The optimum lower-bounds one million random feasible dispatches."""
    p_d = np.array([60.0, 50.0])
    sol = sced.solve_lp(fig13_lp, p_d)
    rng = np.random.Generator(np.random.Philox(2024))
    total = p_d.sum()
    n = 1_000_000
    pg12 = rng.uniform([0.0, 0.0], [100.0, 150.0], size=(n, 2))
    pg3 = total - pg12.sum(axis=1)
    ok = (pg3 >= 0.0) & (pg3 <= 50.0)
    pg = np.column_stack([pg12, pg3])[ok]
    flows = (fig13_lp.a[2:5] @ pg.T).T - (fig13_lp.w[2:5] @ p_d)
    ok2 = (np.abs(flows) <= fig13.ratings + 1e-12).all(axis=1)
    costs = pg[ok2] @ fig13_lp.c
    assert len(costs) > 1000
    assert costs.min() >= sol.objective - 1e-6


def test_strong_duality_and_complementary_slackness(fig13_lp):
    rng = np.random.Generator(np.random.Philox(31))
    solver = sced.DispatchSolver(fig13_lp)
    checked = 0
    for _ in range(200):
        p_d = rng.uniform(-120, 280, size=2)
        try:
            sol = solver.solve(p_d)
        except sced.InfeasibleDispatch:
            continue
        checked += 1
        q = fig13_lp.rhs(p_d)
        dual_obj = -(q @ sol.y)
        assert abs(dual_obj - sol.objective) <= 1e-6 * (1.0 + abs(sol.objective))
        assert (sol.y * sol.slacks <= 1e-8 * (1.0 + np.abs(q))).all()
        assert (sol.y >= 0.0).all()
        if not sol.degenerate:
            assert len(sol.reduced_binding) == fig13_lp.n_g
    assert checked > 50


def test_lmp_matches_finite_difference(fig13, fig13_lp):
    """Marginal cost of one extra MW equals the published price."""
    shift = grid.compute_shift_factors(fig13)
    solver = sced.DispatchSolver(fig13_lp)
    delta = 1e-4
    for p_d in ([60.0, 50.0], [50.0, 110.0], [110.0, 135.0], [150.0, -50.0]):
        p_d = np.array(p_d)
        sol = solver.solve(p_d)
        lam = sced.compute_lmp(sol, shift)
        for k in range(2):
            bumped = p_d.copy()
            bumped[k] += delta
            fd = (solver.solve(bumped).objective - sol.objective) / delta
            bus = fig13.load_buses[k] - 1
            assert fd == pytest.approx(lam.lam[bus], rel=1e-4, abs=1e-4)


def test_infeasible_and_dimension_errors(fig13_lp):
    with pytest.raises(sced.InfeasibleDispatch):
        sced.solve_lp(fig13_lp, np.array([500.0, 500.0]))
    with pytest.raises(sced.ScedError):
        sced.solve_lp(fig13_lp, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(sced.ScedError):
        sced.solve_lp(fig13_lp, np.array([np.nan, 0.0]))


def test_apply_dlr_values(fig1):
    assert sced.apply_dlr(fig1, 0.0) is fig1
    up = sced.apply_dlr(fig1, 0.1)
    assert np.allclose(up.ratings, [66.0, 66.0, 88.0])
    down = sced.apply_dlr(fig1, -0.1)
    assert np.allclose(down.ratings, [54.0, 54.0, 72.0])
    assert up.generators == fig1.generators
    with pytest.raises(sced.ScedError):
        sced.apply_dlr(fig1, -1.0)


def test_apply_ramp_nonbinding_is_identity(fig1):
    # ramp span beyond the capacity range leaves the bounds unchanged
    fast = dataclasses.replace(
        fig1,
        generators=tuple(dataclasses.replace(g, ramp_up=1e3, ramp_down=1e3)
                         for g in fig1.generators),
    )
    out = sced.apply_ramp(fast, np.array([50.0, 50.0]), 5.0)
    assert np.allclose(out.pmin, fig1.pmin)
    assert np.allclose(out.pmax, fig1.pmax)


def test_ramp_rate_fifteen_minute_rule():
    g = grid.Generator(1, 10.0, 125.0, 200.0, (200.0 - 125.0) / 15.0, 5.0)
    assert g.ramp_up == pytest.approx(5.0)


def test_apply_ramp_elementwise_oracle(fig13):
    rng = np.random.Generator(np.random.Philox(55))
    for _ in range(50):
        prev = rng.uniform(fig13.pmin, fig13.pmax)
        dt = float(rng.uniform(1.0, 20.0))
        out = sced.apply_ramp(fig13, prev, dt)
        for k, g in enumerate(fig13.generators):
            lo = max(g.pmin, prev[k] - g.ramp_down * dt)
            hi = min(g.pmax, prev[k] + g.ramp_up * dt)
            assert out.generators[k].pmin == pytest.approx(lo)
            assert out.generators[k].pmax == pytest.approx(hi)


def test_apply_ramp_empty_interval(fig1):
    slow = dataclasses.replace(
        fig1,
        generators=(
            dataclasses.replace(fig1.generators[0], pmin=90.0, ramp_up=0.1, ramp_down=0.1),
            fig1.generators[1],
        ),
    )
    with pytest.raises(sced.InfeasibleRamp, match="generator 1"):
        sced.apply_ramp(slow, np.array([10.0, 50.0]), 5.0)
