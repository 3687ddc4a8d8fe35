import numpy as np
import pytest

from pumpsched import (ConstraintSpec, ControllerConfig, Controller, ControlProblem, DisturbanceSet, ScenarioSpec,
                       count_violations, daily_cost, diurnal_demand, problem_factory, randers_paper_model,
                       run_closed_loop, run_experiment_matrix, summary_table, synthetic_pressure_model,
                       two_level_tariff)
from pumpsched.controllers import nominal_step, Window
from pumpsched.model import predict_nominal
from pumpsched.sim import ClosedLoopTrace, NonlinearTankPlant, block_rng, read_trace, scenario_disturbance_set

SPEC = ConstraintSpec([1.5, 1.4], [3.0, 2.8], [100.0, 100.0])
E_M = np.diag([0.054, 0.083])
MODEL = randers_paper_model()
PRESSURE = synthetic_pressure_model()


def problem(E=E_M):
    return ControlProblem(MODEL, SPEC, PRESSURE, DisturbanceSet(E))


def series(hours):
    return diurnal_demand(hours), two_level_tariff(hours)


def fake_trace(h, u=None, prices=None):
    h = np.asarray(h, float)
    T = h.shape[0] - 1
    u = np.zeros((T, 2)) if u is None else np.asarray(u, float)
    prices = np.zeros(T) if prices is None else np.asarray(prices, float)
    z = np.zeros((T, 2))
    return ClosedLoopTrace("x", h, u, z, z, np.zeros(T), prices, np.zeros(T), np.zeros((T, 4)),
                           ["optimal"] * T, np.zeros(T), np.zeros(T, int), np.zeros(T))


def test_series_shapes():
    d, e = series(48)
    assert d.shape == e.shape == (48,)
    assert d.argmax() % 24 == 19
    assert e[6] == 0.0025 and e[7] == 0.005 and e[22] == 0.005 and e[23] == 0.0025


def test_replay_reproduces_states():
    d, e = series(30)
    sc = ScenarioSpec("normal", box="normal", days=1, block_days=1, seed=4)
    ctrl = Controller(ControllerConfig("CTMPC", N=6, k=1.0), problem())
    tr = run_closed_loop(MODEL, ctrl, sc, d, e, steps=24)
    h = tr.h[0].copy()
    for t in range(tr.T):
        h = MODEL.A_d @ h + MODEL.B_d1 @ tr.u[t] + MODEL.B_d2[:, 0] * tr.demand[t] + tr.w[t]
        assert np.max(np.abs(h - tr.h[t + 1])) <= 1e-12
    np.testing.assert_array_equal(tr.w, tr.g @ E_M.T)


def test_zero_disturbance_follows_predictions():
    d = np.full(40, 77.0)
    e = two_level_tariff(40)
    prob = problem(np.zeros((2, 2)))
    sc = ScenarioSpec("normal", box="normal", days=1, block_days=1)
    cfg = ControllerConfig("NoMPC", N=8)
    tr = run_closed_loop(MODEL, Controller(cfg, prob), sc, d, e, steps=10)
    for t in range(10):
        dec = nominal_step(tr.h[t], Window.from_series(d, e, t, 8), cfg, prob)
        pred = predict_nominal(MODEL, tr.h[t], dec.v, d[t:t + 8])
        np.testing.assert_allclose(tr.h[t + 1], pred[1], atol=1e-9)


def test_count_violations_examples():
    assert count_violations(fake_trace([[2.0, 2.0]] * 5), SPEC) == 0
    assert count_violations(fake_trace([[2.0, 2.0], [3.01, 2.0]]), SPEC) == 1
    # the initial state is not counted
    assert count_violations(fake_trace([[3.5, 2.0], [2.0, 2.0]]), SPEC) == 0
    assert count_violations(fake_trace([[2.0, 2.0]]), SPEC) == 0


def test_count_violations_brute_force():
    rng = np.random.default_rng(5)
    h = rng.uniform(1.3, 3.1, (200, 2))
    tr = fake_trace(h)
    hand = 0
    for row in h[1:]:
        for i in range(2):
            hand += row[i] > SPEC.h_max[i] + 1e-6
            hand += row[i] < SPEC.h_min[i] - 1e-6
    assert count_violations(tr, SPEC) == hand
    # boundary within tolerance is not a violation
    assert count_violations(fake_trace([[2, 2], [3.0 + 5e-7, 2.8]]), SPEC) == 0


def test_daily_cost_examples():
    tr = fake_trace(np.full((25, 2), 2.0), u=np.full((24, 2), 50.0))
    days, mean = daily_cost(tr, PRESSURE)
    assert days.tolist() == [0.0] and mean == 0.0
    e = np.full(24, 0.004)
    days, mean = daily_cost(tr, PRESSURE, e)
    u, h = np.full(2, 50.0), np.full(2, 2.0)
    stage = 0.004 * u @ (PRESSURE.C @ h + PRESSURE.D @ u - PRESSURE.p_in)
    assert days[0] == pytest.approx(24 * stage, rel=1e-14)
    with pytest.raises(ValueError):
        daily_cost(fake_trace(np.full((10, 2), 2.0)), PRESSURE)


def test_daily_cost_naive_sum():
    rng = np.random.default_rng(6)
    h = rng.uniform(1.5, 2.8, (49, 2))
    u = rng.uniform(0, 100, (48, 2))
    e = rng.uniform(0.002, 0.006, 48)
    days, mean = daily_cost(fake_trace(h, u, e), PRESSURE)
    ref = [0.0, 0.0]
    for t in range(48):
        s = 0.0
        for i in range(2):
            head = sum(PRESSURE.C[i, k] * h[t, k] for k in range(2)) \
                + sum(PRESSURE.D[i, k] * u[t, k] for k in range(2)) - PRESSURE.p_in[i]
            s += u[t, i] * head
        ref[t // 24] += e[t] * s
    np.testing.assert_allclose(days, ref, rtol=1e-12)
    assert mean == pytest.approx(np.mean(ref))


def test_nonlinear_plant_records_effective_disturbance():
    d, e = series(30)
    plant = NonlinearTankPlant(MODEL, kappa=0.01, h_ref=SPEC.midpoint())
    sc = ScenarioSpec("normal", box="normal", days=1, block_days=1, seed=2)
    tr = run_closed_loop(plant, Controller(ControllerConfig("NoMPC", N=4), problem()), sc, d, e, steps=6)
    for t in range(6):
        np.testing.assert_allclose(tr.h[t + 1], MODEL.step(tr.h[t], tr.u[t], tr.demand[t]) + tr.w[t], atol=1e-12)
    assert not np.allclose(tr.w, tr.g @ E_M.T)


def test_trace_csv_roundtrip(tmp_path):
    d, e = series(30)
    sc = ScenarioSpec("normal", box="normal", days=1, block_days=1)
    tr = run_closed_loop(MODEL, Controller(ControllerConfig("NoMPC", N=4), problem()), sc, d, e, steps=5)
    tr.write_csv(tmp_path / "t.csv")
    t, h = read_trace(tmp_path / "t.csv")
    np.testing.assert_array_equal(t, np.arange(5))
    np.testing.assert_array_equal(h, tr.h)
    (tmp_path / "e.csv").write_text(",".join(tr.columns()) + "\n")
    with pytest.raises(ValueError):
        read_trace(tmp_path / "e.csv")


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioSpec("x", box="wild")
    with pytest.raises(ValueError):
        ScenarioSpec("x", days=10, block_days=3)
    with pytest.raises(ValueError):
        ScenarioSpec("x", mode="demand-only")
    assert ScenarioSpec("x", box=[[-1, -0.5], [0.5, 1]]).generator_box.lo == (-1.0, 0.5)


def test_disturbance_set_by_mode():
    d, _ = series(48)
    ms = DisturbanceSet(E_M)
    W = scenario_disturbance_set(MODEL, ms, ScenarioSpec("a"), d)
    np.testing.assert_array_equal(W.E, E_M)
    W2 = scenario_disturbance_set(MODEL, ms, ScenarioSpec("b", mode="model+demand"), d)
    assert W2.l == 2 and np.all(np.abs(W2.E).sum(axis=1) > np.abs(E_M).sum(axis=1))
    with pytest.raises(ValueError):
        scenario_disturbance_set(MODEL, ms, ScenarioSpec("b", mode="model+demand"))


def test_block_streams_independent_of_controller():
    a = block_rng(0, 3, 1).uniform(size=4)
    b = block_rng(0, 3, 1).uniform(size=4)
    c = block_rng(0, 3, 2).uniform(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def _small_matrix(workers):
    d, e = series(2 * 24 + 8)
    make = problem_factory(MODEL, SPEC, PRESSURE, DisturbanceSet(E_M), demand=d)
    ctrls = [ControllerConfig("NoMPC", N=8), ControllerConfig("CTMPC", N=8, k=1.0)]
    scs = [ScenarioSpec("normal", box="normal", days=2, block_days=1, seed=1),
           ScenarioSpec("extreme", box="extreme", days=1, block_days=1, seed=3)]
    return run_experiment_matrix({"linear": (MODEL, make)}, ctrls, scs, d, e, master_seed=7, workers=workers)


def test_matrix_deterministic_across_workers():
    r1 = _small_matrix(1)
    r2 = _small_matrix(2)
    assert summary_table(r1) == summary_table(r2)
    assert len(r1) == 4
    assert summary_table(r1).splitlines()[0].startswith("plant,scenario,controller,mean_daily_cost,violations")
    # blocks restart from the same level and see their own streams
    tr = r1[0].traces
    assert len(tr) == 2 and np.array_equal(tr[0].h[0], tr[1].h[0]) and tr[1].t0 == 24
    assert not np.array_equal(tr[0].g, tr[1].g)


def test_single_cell_matches_closed_loop():
    d, e = series(32)
    make = problem_factory(MODEL, SPEC, PRESSURE, DisturbanceSet(E_M), demand=d)
    sc = ScenarioSpec("normal", box="normal", days=1, block_days=1, seed=5)
    cfg = ControllerConfig("CTMPC", N=8, k=1.5)
    res = run_experiment_matrix({"linear": (MODEL, make)}, [cfg], [sc], d, e, master_seed=2)
    direct = run_closed_loop(MODEL, Controller(cfg, make(sc)), sc, d, e, rng=block_rng(2, 5, 0))
    assert len(res) == 1
    np.testing.assert_array_equal(res[0].traces[0].h, direct.h)
    assert res[0].violations == count_violations(direct, SPEC)


def test_matrix_rejects_empty_lists():
    d, e = series(30)
    make = problem_factory(MODEL, SPEC, PRESSURE, DisturbanceSet(E_M))
    with pytest.raises(ValueError):
        run_experiment_matrix({"linear": (MODEL, make)}, [], [ScenarioSpec("a")], d, e)
    with pytest.raises(ValueError):
        run_experiment_matrix({"linear": (MODEL, make)}, [ControllerConfig("NoMPC")], [], d, e)


def test_extreme_two_days_dfmpc_vs_nominal():
    d, e = series(2 * 24 + 24)
    sc = ScenarioSpec("extreme", box="extreme", days=2, block_days=2, seed=3)
    prob = problem()
    robust = run_closed_loop(MODEL, Controller(ControllerConfig("DFMPC", N=24), prob), sc, d, e)
    nominal = run_closed_loop(MODEL, Controller(ControllerConfig("NoMPC", N=24), prob), sc, d, e)
    assert count_violations(robust, SPEC) == 0
    assert all(s == "optimal" for s in robust.status)
    assert count_violations(nominal, SPEC) >= 1
