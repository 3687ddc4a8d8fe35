"""Closed-loop simulation, scenario generation and experiment matrices."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .controllers import ControlProblem, Controller, Window
from .uncertainty import BOX_PRESETS, DisturbanceSet, GeneratorBox, ScalarDemandSet, combine_sets, sample_generators

STEPS_PER_DAY = 24
MODES = ("model-only", "model+demand")


# ---------------------------------------------------------------------------
# synthetic series


def diurnal_demand(hours, mean=77.0, amplitude=2.0, peak_hour=19.0):
    """Aggregated demand in L/s: a daily sinusoid peaking at ``peak_hour``."""
    t = np.arange(hours, dtype=float)
    return mean + amplitude * np.cos(2 * np.pi * (t - peak_hour) / 24.0)


def two_level_tariff(hours, day=0.005, night=0.0025, day_start=7, day_end=23):
    """Electricity price per step: ``day`` from ``day_start`` to ``day_end``."""
    hod = np.arange(hours) % 24
    return np.where((hod >= day_start) & (hod < day_end), day, night).astype(float)


# ---------------------------------------------------------------------------
# scenarios and traces


@dataclass(frozen=True)
class ScenarioSpec:
    """Disturbance scenario.

    ``box`` is a preset name or a :class:`GeneratorBox`; ``days`` must be a
    multiple of ``block_days``.
    """

    name: str
    box: object = "normal"
    mode: str = "model-only"
    days: int = 10
    block_days: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.box, str):
            if self.box not in BOX_PRESETS:
                raise ValueError(f"unknown generator box {self.box!r}")
        elif not isinstance(self.box, GeneratorBox):
            object.__setattr__(self, "box", GeneratorBox.from_intervals(self.box))
        if self.mode not in MODES:
            raise ValueError(f"uncertainty mode must be one of {MODES}")
        if self.days < 1 or self.block_days < 1 or self.days % self.block_days:
            raise ValueError("days must be a positive multiple of block_days")

    @property
    def generator_box(self):
        return BOX_PRESETS[self.box] if isinstance(self.box, str) else self.box

    @property
    def blocks(self):
        return self.days // self.block_days


def scenario_disturbance_set(model, model_set, scenario, demand=None, demand_fraction=0.1):
    """Set ``W`` for a scenario's uncertainty mode.

    ``model-only`` uses ``B_d3 W_m``. ``model+demand`` adds a forecast error
    of ``demand_fraction`` times the peak demand and boxes the sum, so the
    generator count stays at ``n`` either way.
    """
    B_d3 = model.B_d3
    if scenario.mode == "model-only":
        return DisturbanceSet(B_d3 @ model_set.E)
    if demand is None:
        raise ValueError("model+demand mode needs the demand forecast")
    dset = ScalarDemandSet.from_forecast(demand, demand_fraction)
    return combine_sets(model_set, dset, model.B_d2, B_d3, mode="box")


def problem_factory(model, spec, pressure, model_set, demand=None, solver=None, demand_fraction=0.1):
    """``scenario -> ControlProblem`` for :func:`run_experiment_matrix`."""
    def make(scenario):
        dset = scenario_disturbance_set(model, model_set, scenario, demand, demand_fraction)
        if solver is None:
            return ControlProblem(model, spec, pressure, dset)
        return ControlProblem(model, spec, pressure, dset, solver)
    return make


@dataclass
class ClosedLoopTrace:
    """Per-step record of one closed-loop run.

    ``h`` has ``T + 1`` rows (initial state included); all other per-step
    arrays have ``T`` rows. ``violation[t]`` holds the excess of ``h[t+1]``
    over each level bound (upper bounds first), zero where satisfied.
    """

    controller: str
    h: np.ndarray
    u: np.ndarray
    w: np.ndarray
    g: np.ndarray
    demand: np.ndarray
    prices: np.ndarray
    stage_cost: np.ndarray
    violation: np.ndarray
    status: list
    slack: np.ndarray
    iterations: np.ndarray
    solve_time: np.ndarray
    t0: int = 0

    @property
    def T(self):
        return self.u.shape[0]

    def daily(self):
        """Per-day (cost, violation count) with the default tolerance."""
        days = self.T // STEPS_PER_DAY
        cost = self.stage_cost[:days * STEPS_PER_DAY].reshape(days, -1).sum(axis=1)
        viol = (self.violation[:days * STEPS_PER_DAY] > 1e-6).reshape(days, STEPS_PER_DAY, -1).sum(axis=(1, 2))
        return cost, viol

    def columns(self):
        n, m, l = self.h.shape[1], self.u.shape[1], self.g.shape[1]
        return (["t"] + [f"h{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"w{i + 1}" for i in range(n)] + [f"g{i + 1}" for i in range(l)]
                + ["demand", "price", "stage_cost"]
                + [f"viol_max{i + 1}" for i in range(n)] + [f"viol_min{i + 1}" for i in range(n)]
                + ["status", "slack", "iterations", "solve_time"] + [f"hn{i + 1}" for i in range(n)])

    def write_csv(self, path, timing=True):
        """One row per step; ``hn*`` is the state after the step."""
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(timing))

    def to_csv(self, timing=True):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        if not timing:
            cols = [c for c in cols if c != "solve_time"]
        wr.writerow(cols)
        for t in range(self.T):
            row = ([self.t0 + t] + _fmt(self.h[t]) + _fmt(self.u[t]) + _fmt(self.w[t]) + _fmt(self.g[t])
                   + _fmt([self.demand[t], self.prices[t], self.stage_cost[t]]) + _fmt(self.violation[t])
                   + [self.status[t], repr(float(self.slack[t])), int(self.iterations[t])])
            if timing:
                row.append(f"{self.solve_time[t]:.6f}")
            wr.writerow(row + _fmt(self.h[t + 1]))
        return buf.getvalue()


def _fmt(values):
    return [repr(float(x)) for x in np.ravel(values)]


def read_trace(path):
    """Times and levels of a trace file: ``(t, h)`` with ``h`` of shape ``(T + 1, n)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: trace has no rows")
    n = sum(1 for c in rows[0] if c.startswith("hn"))
    t = np.array([int(r["t"]) for r in rows])
    h = np.array([[float(r[f"h{i + 1}"]) for i in range(n)] for r in rows]
                 + [[float(rows[-1][f"hn{i + 1}"]) for i in range(n)]])
    return t, h


def level_violations(h_next, spec):
    """Excess of each state over ``h <= h_max`` and ``-h <= -h_min`` rows."""
    h_next = np.atleast_2d(h_next)
    return np.maximum(0.0, np.hstack([h_next - spec.h_max, spec.h_min - h_next]))


def count_violations(trace, spec, tol=1e-6):
    """Number of (level row, step) pairs violated by more than ``tol``.

    States after each step, ``h_1 .. h_T``, are checked; the initial state
    is not the controller's doing.
    """
    if trace.T == 0:
        return 0
    return int(np.count_nonzero(level_violations(trace.h[1:], spec) > tol))


def realized_stage_costs(h, u, prices, pressure):
    """``e_t u_t'(C h_t + D u_t - p_in)`` for each step."""
    h = np.atleast_2d(h)
    u = np.atleast_2d(u)
    head = h @ pressure.C.T + u @ pressure.D.T - pressure.p_in
    return np.asarray(prices, dtype=float) * np.einsum("ij,ij->i", u, head)


def daily_cost(trace, pressure, prices=None):
    """Per-day electricity cost from realised states and inputs, and its mean.

    ``prices`` defaults to the prices stored in the trace.
    """
    T = trace.T
    if T == 0 or T % STEPS_PER_DAY:
        raise ValueError(f"trace has {T} steps, not a whole number of days")
    prices = trace.prices if prices is None else np.asarray(prices, dtype=float)[:T]
    stage = realized_stage_costs(trace.h[:-1], trace.u, prices, pressure)
    days = stage.reshape(-1, STEPS_PER_DAY).sum(axis=1)
    return days, float(days.mean())


# ---------------------------------------------------------------------------
# closed loop


class NonlinearTankPlant:
    """Linear surrogate plus a level-dependent outflow correction.

    ``h+ = A_d h + B_d1 u + B_d2 d - kappa * (h - h_ref)**2``; a stand-in
    for hydraulic effects the linear model misses.
    """

    def __init__(self, model, kappa=0.002, h_ref=None):
        self.model = model
        self.kappa = float(kappa)
        self.h_ref = np.zeros(model.n) if h_ref is None else np.asarray(h_ref, dtype=float)

    def step(self, h, u, d, w):
        return self.model.step(h, u, d, w) - self.kappa * (h - self.h_ref) ** 2


def run_closed_loop(plant, controller, scenario, demand, prices, h0=None, rng=None, t0=0, steps=None):
    """Simulate the controller in closed loop for one scenario.

    Parameters
    ----------
    plant : LinearTankModel or NonlinearTankPlant
    controller : Controller
        Its problem's disturbance set maps sampled ``g`` to ``w = E g``.
    scenario : ScenarioSpec
    demand, prices : array_like
        Series indexed by absolute time, covering ``t0 + steps``; past the
        end the forecast window repeats the last value.
    h0 : (n,) array, optional
        Initial level, default the midpoint of the bounds.
    rng : numpy.random.Generator, optional
        Defaults to the stream of block 0 of ``scenario`` under master
        seed 0. Advanced by exactly ``steps`` draws.
    t0, steps : int
        Start time and length, default the whole scenario.

    Returns
    -------
    ClosedLoopTrace
        For a linear plant ``h[t+1] == A_d h[t] + B_d1 u[t] + B_d2 d[t] + w[t]``
        holds bit for bit. A nonlinear plant records the effective ``w``.
    """
    problem = controller.problem
    model, spec, pressure = problem.model, problem.spec, problem.pressure
    steps = scenario.days * STEPS_PER_DAY if steps is None else int(steps)
    h0 = spec.midpoint() if h0 is None else np.asarray(h0, dtype=float)
    rng = block_rng(0, scenario.seed, 0) if rng is None else rng
    box = scenario.generator_box
    E = problem.dset.E
    if box.l != E.shape[1]:
        raise ValueError(f"scenario box has {box.l} generators, disturbance set has {E.shape[1]}")
    demand = np.asarray(demand, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if demand.size < t0 + steps or prices.size < t0 + steps:
        raise ValueError("demand/price series shorter than the simulated period")
    n, m = model.n, model.m
    G = sample_generators(box, rng, steps)
    linear = not hasattr(plant, "kappa")
    H = np.empty((steps + 1, n))
    U = np.empty((steps, m))
    W = np.empty((steps, n))
    H[0] = h0
    status, slack = [], np.zeros(steps)
    iters, stime = np.zeros(steps, dtype=int), np.zeros(steps)
    u_last = np.zeros(m)
    N = controller.cfg.N
    for t in range(steps):
        tt = t0 + t
        dec = controller.step(H[t], Window.from_series(demand, prices, tt, N))
        if dec.ok:
            u = dec.u
        else:
            # keep pumping as before, within limits
            u = np.clip(u_last, 0.0, spec.u_max)
        status.append(dec.status)
        slack[t] = dec.slack
        iters[t] = dec.report.iterations if dec.report is not None else 0
        stime[t] = dec.solve_time
        w = E @ G[t]
        if linear:
            H[t + 1] = model.step(H[t], u, demand[tt], w)
            W[t] = w
        else:
            H[t + 1] = plant.step(H[t], u, demand[tt], w)
            W[t] = H[t + 1] - model.step(H[t], u, demand[tt])
        U[t] = u
        u_last = u
    sl = slice(t0, t0 + steps)
    return ClosedLoopTrace(
        controller=controller.label, h=H, u=U, w=W, g=G, demand=demand[sl].copy(), prices=prices[sl].copy(),
        stage_cost=realized_stage_costs(H[:-1], U, prices[sl], pressure),
        violation=level_violations(H[1:], spec), status=status, slack=slack, iterations=iters,
        solve_time=stime, t0=t0)


# ---------------------------------------------------------------------------
# experiment matrix


@dataclass
class CellResult:
    plant: str
    scenario: str
    controller: str
    daily_costs: np.ndarray
    violations: int
    failures: int
    soft_steps: int
    traces: list = field(default_factory=list)

    @property
    def mean_daily_cost(self):
        return float(np.mean(self.daily_costs))


def block_rng(master_seed, scenario_seed, block_index):
    """Generator stream for one (scenario, block); shared by all controllers."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(scenario_seed, block_index))
    return np.random.default_rng(ss)


def _run_block(task):
    plant, scenario, ctrl_cfg, problem, demand, prices, h0, block, master_seed = task
    with threadpool_limits(limits=1):
        steps = scenario.block_days * STEPS_PER_DAY
        rng = block_rng(master_seed, scenario.seed, block)
        ctrl = Controller(ctrl_cfg, problem)
        return run_closed_loop(plant, ctrl, scenario, demand, prices, h0=h0, rng=rng, t0=block * steps,
                               steps=steps)


def run_experiment_matrix(plants, controllers, scenarios, demand, prices, master_seed=0, workers=1,
                          h0=None, keep_traces=True):
    """Run every (plant, scenario, controller) cell.

    Parameters
    ----------
    plants : dict
        Name -> ``(plant, problem_for_scenario)`` where
        ``problem_for_scenario(scenario)`` returns the :class:`ControlProblem`
        (its ``dset`` also defines ``w = E g``).
    controllers : list of ControllerConfig
    scenarios : list of ScenarioSpec
    demand, prices : array_like
        Series over the longest scenario plus a horizon.
    master_seed : int
    workers : int
        Process count; results do not depend on it.
    h0 : array_like, optional
        Initial level of every block (default: midpoint of the bounds).

    Returns
    -------
    list of CellResult, ordered plant, scenario, controller.
    """
    if not controllers:
        raise ValueError("no controllers configured")
    if not scenarios:
        raise ValueError("no scenarios configured")
    demand = np.asarray(demand, dtype=float)
    prices = np.asarray(prices, dtype=float)
    tasks, keys = [], []
    for plant_name, (plant, make_problem) in plants.items():
        for si, sc in enumerate(scenarios):
            problem = make_problem(sc)
            start = problem.spec.midpoint() if h0 is None else np.asarray(h0, dtype=float)
            for cfg in controllers:
                Controller(cfg, problem)  # validate before launching work
                for b in range(sc.blocks):
                    tasks.append((plant, sc, cfg, problem, demand, prices, start, b, master_seed))
                    keys.append((plant_name, si, cfg.label, b))
    if workers <= 1:
        traces = [_run_block(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks), os.cpu_count() * 4 or 1)) as ex:
            traces = list(ex.map(_run_block, tasks))

    results = []
    by_cell = {}
    for key, tr in zip(keys, traces):
        by_cell.setdefault(key[:3], []).append(tr)
    for plant_name, (plant, make_problem) in plants.items():
        for si, sc in enumerate(scenarios):
            problem = make_problem(sc)
            for cfg in controllers:
                trs = by_cell[(plant_name, si, cfg.label)]
                days = np.concatenate([daily_cost(tr, problem.pressure)[0] for tr in trs])
                viol = sum(count_violations(tr, problem.spec) for tr in trs)
                fails = sum(s in ("infeasible", "failed") for tr in trs for s in tr.status)
                soft = sum(s == "soft" for tr in trs for s in tr.status)
                results.append(CellResult(plant_name, sc.name, cfg.label, days, viol, fails, soft,
                                          trs if keep_traces else []))
    return results


SUMMARY_COLUMNS = ("plant", "scenario", "controller", "mean_daily_cost", "violations", "failed_steps",
                   "soft_steps")


def summary_table(results):
    """Delimited summary, one row per cell, fixed number formatting."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SUMMARY_COLUMNS)
    for r in results:
        wr.writerow([r.plant, r.scenario, r.controller, f"{r.mean_daily_cost:.6f}", r.violations, r.failures,
                     r.soft_steps])
    return buf.getvalue()
