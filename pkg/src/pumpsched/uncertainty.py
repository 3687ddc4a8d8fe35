"""Bounded disturbance sets of the form ``W = {E g : ||g||_inf <= 1}``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


@dataclass(frozen=True)
class DisturbanceSet:
    """Zonotope centred at the origin with generator matrix ``E`` (n x l).

    ``l = 0`` encodes the singleton ``{0}``.
    """

    E: np.ndarray

    def __post_init__(self):
        E = np.array(self.E, dtype=float, ndmin=2)
        if E.ndim != 2 or not np.all(np.isfinite(E)):
            raise ValueError("E must be a finite 2-D array")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @classmethod
    def singleton(cls, n):
        return cls(np.zeros((n, 0)))

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def l(self):
        return self.E.shape[1]

    def is_diagonal(self):
        return self.l == self.n and np.count_nonzero(self.E - np.diag(np.diag(self.E))) == 0

    def contains(self, w, tol=1e-9):
        """Membership test. Exact bound check for diagonal ``E``, LP otherwise."""
        w = np.asarray(w, dtype=float).reshape(self.n)
        if self.l == 0 or not np.any(self.E):
            return bool(np.all(np.abs(w) <= tol))
        if self.is_diagonal():
            return bool(np.all(np.abs(w) <= np.abs(np.diag(self.E)) + tol))
        # min t  s.t.  E g = w,  -t <= g_k <= t
        l = self.l
        c = np.zeros(l + 1)
        c[-1] = 1.0
        A_ub = np.block([[np.eye(l), -np.ones((l, 1))], [-np.eye(l), -np.ones((l, 1))]])
        A_eq = np.hstack([self.E, np.zeros((self.n, 1))])
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * l), A_eq=A_eq, b_eq=w,
                      bounds=[(None, None)] * l + [(0, None)], method="highs")
        return bool(res.status == 0 and res.fun <= 1.0 + tol)

    def vertices(self):
        """All ``2**l`` images of the generator-box corners (with repeats)."""
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * self.l, indexing="ij")).reshape(self.l, -1)
        return (self.E @ signs).T


@dataclass(frozen=True)
class ScalarDemandSet:
    """Demand forecast error ``w_d = e_d g`` with ``|g| <= 1``."""

    e_d: float

    def __post_init__(self):
        if not self.e_d >= 0:
            raise ValueError("e_d must be nonnegative")

    @classmethod
    def from_forecast(cls, demand, fraction=0.1):
        """Bound equal to ``fraction`` of the largest forecast demand."""
        return cls(fraction * float(np.max(np.abs(demand))))


@dataclass(frozen=True)
class GeneratorBox:
    """Axis-aligned sub-box of ``[-1, 1]^l`` from which generators are drawn."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have equal length")
        for a, b in zip(lo, hi):
            if not (-1.0 <= a <= b <= 1.0):
                raise ValueError(f"invalid generator interval [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def l(self):
        return len(self.lo)

    @classmethod
    def from_intervals(cls, intervals):
        return cls(tuple(a for a, _ in intervals), tuple(b for _, b in intervals))

    def intervals(self):
        return [[a, b] for a, b in zip(self.lo, self.hi)]


BOX_PRESETS = {
    "normal": GeneratorBox((-1.0, -1.0), (1.0, 1.0)),
    "challenging": GeneratorBox((-1.0, 0.5), (-0.5, 1.0)),
    "extreme": GeneratorBox((-1.0, 1.0), (-1.0, 1.0)),
}


def quantify_from_residuals(samples):
    """Smallest diagonal generator matrix whose box covers every sample."""
    w = np.asarray(samples, dtype=float)
    if w.ndim != 2 or w.shape[0] == 0:
        raise ValueError("need a nonempty (S, n) array of samples")
    return DisturbanceSet(np.diag(np.max(np.abs(w), axis=0)))


def combine_sets(model_set, demand_set, B_d2, B_d3, mode="box"):
    """Set ``W`` containing ``B_d2 W_d + B_d3 W_m``.

    ``mode="exact"`` concatenates generators (Minkowski sum of zonotopes,
    ``l = 1 + l_m``); ``mode="box"`` returns the axis-aligned bounding box
    as a diagonal generator matrix (``l = n``).
    """
    B_d2 = np.asarray(B_d2, dtype=float).reshape(-1, 1)
    B_d3 = np.asarray(B_d3, dtype=float)
    n = B_d2.shape[0]
    if B_d3.shape != (n, model_set.n):
        raise ValueError(f"B_d3 has shape {B_d3.shape}, expected {(n, model_set.n)}")
    demand_gen = B_d2 * demand_set.e_d
    model_gen = B_d3 @ model_set.E
    if mode == "exact":
        return DisturbanceSet(np.hstack([demand_gen, model_gen]))
    if mode == "box":
        radius = np.abs(demand_gen[:, 0]) + np.abs(model_gen).sum(axis=1)
        return DisturbanceSet(np.diag(radius))
    raise ValueError(f"unknown combination mode {mode!r}")


def sample_generator(box, rng_seed):
    """Draw one generator uniformly from ``box``.

    ``rng_seed`` is either an int seed or a :class:`numpy.random.Generator`,
    which is advanced in place. Degenerate intervals return their endpoint.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    return lo + (hi - lo) * rng.random(box.l)


def sample_generators(box, rng, count):
    """``count`` generators, row by row, from a shared stream."""
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    return lo + (hi - lo) * rng.random((count, box.l))


def elementwise_max_disturbance(dset):
    """Largest reachable ``|w_k|`` per coordinate (row sums of ``|E|``)."""
    return np.abs(dset.E).sum(axis=1)
