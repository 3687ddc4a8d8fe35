"""Receding-horizon controllers: robust (DFMPC), nominal (NoMPC) and
constraint-tightening (CTMPC).

All three share one sparse program builder and the interior-point solver;
they differ in whether column subsystems are present and in the level
bounds handed to the builder.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .formulation import ConstraintSpec, build_sparse, build_stacked, condensed_cost, extract_policy
from .solver import SolveReport, SolverOptions, convexify, solve_sparse_ipm
from .uncertainty import DisturbanceSet, elementwise_max_disturbance

KINDS = ("DFMPC", "NoMPC", "CTMPC")


class InfeasibleConfiguration(ValueError):
    """Controller settings that can never admit a feasible input."""


@dataclass(frozen=True)
class ControllerConfig:
    """Controller family and tuning.

    Parameters
    ----------
    kind : {"DFMPC", "NoMPC", "CTMPC"}
    N : int
        Prediction horizon in steps.
    k : float
        Tightening multiple of ``w'`` (CTMPC only). ``k = 0`` reproduces NoMPC.
    rho : float, optional
        Linear penalty on level-constraint slacks. ``None`` selects a value
        from the prices and pump limits when the controller is built.
    soft : bool
        Fall back to softened level constraints when the hard problem is
        infeasible.
    """

    kind: str
    N: int = 24
    k: float = 1.0
    rho: Optional[float] = None
    soft: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}; expected one of {KINDS}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"horizon N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if self.kind == "CTMPC" and not self.k >= 0:
            raise ValueError(f"tightening multiple k must be nonnegative, got {self.k}")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")

    @property
    def label(self):
        if self.kind == "CTMPC":
            return f"CTMPC{self.k:g}"
        return self.kind


@dataclass(frozen=True)
class ControlProblem:
    """Everything a controller needs apart from the state and the window.

    ``dset`` is the disturbance set used both by DFMPC and for the CTMPC
    margin ``w'``.
    """

    model: object
    spec: ConstraintSpec
    pressure: object
    dset: DisturbanceSet
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.pressure.check_compatible(self.model)
        if self.spec.n != self.model.n or self.spec.m != self.model.m:
            raise ValueError("constraint dimensions do not match the model")
        if self.dset.n != self.model.n:
            raise ValueError("disturbance set dimension does not match the model")


@dataclass(frozen=True)
class Window:
    """Demand forecast and prices over the horizon."""

    demand: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.demand, dtype=float).ravel()
        e = np.asarray(self.prices, dtype=float).ravel()
        if d.size == 0:
            raise ValueError("empty forecast window")
        if d.shape != e.shape:
            raise ValueError("demand and price windows differ in length")
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "prices", e)

    def __len__(self):
        return self.demand.size

    @classmethod
    def from_series(cls, demand, prices, t, N):
        """Window ``t .. t+N-1``; past the end the last value is repeated."""
        demand = np.asarray(demand, dtype=float).ravel()
        prices = np.asarray(prices, dtype=float).ravel()
        idx = np.minimum(np.arange(t, t + N), min(demand.size, prices.size) - 1)
        return cls(demand[idx], prices[idx])


@dataclass
class ControlDecision:
    """Result of one controller step.

    ``status`` is ``"optimal"``, ``"soft"`` (feasible only with level
    slacks), ``"infeasible"`` or ``"failed"`` (solver did not converge).
    ``u`` is None unless a plan was found.
    """

    kind: str
    status: str
    u: Optional[np.ndarray]
    v: Optional[np.ndarray] = None
    policy: Optional[object] = None
    report: Optional[SolveReport] = None
    objective: float = np.nan
    slack: float = 0.0
    shift: float = 0.0
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status in ("optimal", "soft")


def default_rho(prices, u_max):
    """Slack penalty large enough that slack never pays for itself."""
    return 1e4 * float(np.max(np.abs(prices))) * float(np.max(u_max))


def ct_spec(spec, dset, k):
    """Level bounds tightened by ``k w'``; raises if the box becomes empty."""
    margin = k * elementwise_max_disturbance(dset)
    lo, hi = spec.h_min + margin, spec.h_max - margin
    if np.any(lo >= hi):
        raise InfeasibleConfiguration(
            f"tightening by {k:g} w' empties the level box: lower {lo}, upper {hi}")
    return ConstraintSpec(lo, hi, spec.u_max)


def certify_infeasible(qp):
    """Phase-1 check: True when the linear constraints of ``qp`` admit no point."""
    res = linprog(np.zeros(qp.n), A_ub=sp.csr_matrix(qp.A_in), b_ub=qp.b_in,
                  A_eq=sp.csr_matrix(qp.A_eq) if qp.A_eq.shape[0] else None,
                  b_eq=qp.b_eq if qp.A_eq.shape[0] else None,
                  bounds=[(None, None)] * qp.n, method="highs")
    return res.status == 2


def _solve(h, window, cfg, problem, spec, robust):
    N = cfg.N
    if len(window) != N:
        raise ValueError(f"window has length {len(window)}, horizon is {N}")
    h = np.asarray(h, dtype=float).reshape(problem.model.n)
    if not np.all(np.isfinite(h)):
        raise ValueError("state must be finite")
    dset = problem.dset if robust else DisturbanceSet.singleton(problem.model.n)
    t0 = time.perf_counter()
    stacked = build_stacked(problem.model, spec, dset, N)
    Hv, _ = condensed_cost(stacked, problem.pressure, h, window.demand, window.prices)
    _, lam = convexify(Hv, eps=problem.solver.eps)

    def attempt(penalty):
        prog = build_sparse(stacked, spec, h, window.demand, window.prices, problem.pressure,
                            shift=lam, soft_penalty=penalty, robust=robust)
        x, rep = solve_sparse_ipm(prog.qp, problem.solver)
        return prog, x, rep

    prog, x, rep = attempt(None)
    status = "optimal" if rep.optimal else None
    if status is None and rep.status != "infeasible" and certify_infeasible(prog.qp):
        rep.status = "infeasible"
    if status is None and cfg.soft:
        rho = cfg.rho if cfg.rho is not None else default_rho(window.prices, spec.u_max)
        prog, x, rep = attempt(rho)
        if rep.optimal:
            status = "soft"
    elapsed = time.perf_counter() - t0
    kind = cfg.label
    if status is None:
        fail = "infeasible" if rep.status == "infeasible" else "failed"
        return ControlDecision(kind, fail, None, report=rep, shift=lam, solve_time=elapsed)
    v = x[prog.v]
    # pump limits are hard: remove round-off of the interior-point iterate
    u = np.clip(v[0], 0.0, spec.u_max)
    policy = extract_policy(prog, x) if robust else None
    return ControlDecision(kind, status, u, v=v, policy=policy, report=rep,
                           objective=prog.energy_cost(x, problem.pressure, window.prices),
                           slack=prog.slack_usage(x), shift=lam, solve_time=elapsed)


def dfmpc_step(h, window, cfg, problem):
    """Robust step: optimise an affine disturbance-feedback policy, apply ``v_0``."""
    return _solve(h, window, cfg, problem, problem.spec, robust=True)


def nominal_step(h, window, cfg, problem):
    """Certainty-equivalent step with disturbances set to zero."""
    return _solve(h, window, cfg, problem, problem.spec, robust=False)


def ct_step(h, window, cfg, problem):
    """Nominal step with level bounds tightened by ``cfg.k * w'``."""
    return _solve(h, window, cfg, problem, ct_spec(problem.spec, problem.dset, cfg.k), robust=False)


def apply_policy(decision, g_history):
    """Input for the step after the generators ``g_history`` were realised.

    With an empty history this is ``v_0``.
    """
    if decision.policy is None:
        raise ValueError(f"{decision.kind} decision ({decision.status}) carries no feedback policy")
    g = np.asarray(g_history, dtype=float)
    steps = 0 if g.size == 0 else g.reshape(-1, decision.policy.l).shape[0]
    if steps >= decision.policy.N:
        raise ValueError("generator history longer than the horizon")
    return decision.policy.input_at(steps, g.reshape(-1, decision.policy.l) if g.size else g)


class Controller:
    """A configured controller bound to a problem; ``step(h, window)``."""

    _steps = {"DFMPC": dfmpc_step, "NoMPC": nominal_step, "CTMPC": ct_step}

    def __init__(self, cfg, problem):
        self.cfg = cfg
        self.problem = problem
        if cfg.kind == "CTMPC":
            ct_spec(problem.spec, problem.dset, cfg.k)  # fail now, not mid-simulation

    @property
    def label(self):
        return self.cfg.label

    def step(self, h, window):
        return self._steps[self.cfg.kind](h, window, self.cfg, self.problem)
