"""Linear tank-level surrogate models.

Continuous model (levels in m, flows in L/s, time in h)::

    dh/dt = A h + B1 u + B2 d_a + w_m

and its RK4 zero-order-hold discretisation::

    h[i+1] = A_d h[i] + B_d1 u[i] + B_d2 d_a[i] + B_d3 w_m[i]
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import factorial
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg


class IdentificationError(ValueError):
    """Raised when a surrogate cannot be fitted or assembled."""


class DatasetParseError(ValueError):
    """Raised for malformed trajectory tables; carries the offending row."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def _as_matrix(x, rows=None, cols=None, name="matrix"):
    a = np.array(x, dtype=float, ndmin=2)
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContinuousTankModel:
    """Continuous-time surrogate ``dh/dt = A h + B1 u + B2 d_a + w_m``."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B1", _as_matrix(self.B1, rows=n, name="B1"))
        object.__setattr__(self, "B2", _as_matrix(np.reshape(self.B2, (n, -1)), rows=n, cols=1, name="B2"))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]


@dataclass(frozen=True)
class LinearTankModel:
    """Discrete-time tank model.

    Attributes
    ----------
    A_d : (n, n) ndarray
    B_d1 : (n, m) ndarray
        Pump-flow input map.
    B_d2 : (n, 1) ndarray
        Aggregated-demand input map.
    B_d3 : (n, n) ndarray
        Model-error input map.
    dt : float
        Sampling interval in hours.
    source : ContinuousTankModel or None
        The continuous model this was discretised from, if any.
    """

    A_d: np.ndarray
    B_d1: np.ndarray
    B_d2: np.ndarray
    B_d3: Optional[np.ndarray] = None
    dt: float = 1.0
    source: Optional[ContinuousTankModel] = None

    def __post_init__(self):
        A_d = _as_matrix(self.A_d, name="A_d")
        n = A_d.shape[0]
        if A_d.shape != (n, n):
            raise ValueError("A_d must be square")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        B_d3 = np.eye(n) if self.B_d3 is None else self.B_d3
        object.__setattr__(self, "A_d", A_d)
        object.__setattr__(self, "B_d1", _as_matrix(self.B_d1, rows=n, name="B_d1"))
        object.__setattr__(self, "B_d2", _as_matrix(np.reshape(self.B_d2, (n, -1)), rows=n, cols=1, name="B_d2"))
        object.__setattr__(self, "B_d3", _as_matrix(B_d3, rows=n, cols=n, name="B_d3"))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self):
        return self.A_d.shape[0]

    @property
    def m(self):
        return self.B_d1.shape[1]

    def step(self, h, u, d_a, w=None):
        h_next = self.A_d @ h + self.B_d1 @ u + self.B_d2[:, 0] * d_a
        if w is not None:
            h_next = h_next + w
        return h_next


@dataclass(frozen=True)
class PumpPressureModel:
    """Pump outlet pressure ``p_out = C h + D u`` with constant inlet pressure."""

    C: np.ndarray
    D: np.ndarray
    p_in: np.ndarray

    def __post_init__(self):
        D = _as_matrix(self.D, name="D")
        m = D.shape[0]
        if D.shape != (m, m):
            raise ValueError("D must be square")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "C", _as_matrix(self.C, rows=m, name="C"))
        p_in = np.array(self.p_in, dtype=float).reshape(m)
        p_in.setflags(write=False)
        object.__setattr__(self, "p_in", p_in)

    def check_compatible(self, model):
        if self.C.shape != (model.m, model.n):
            raise ValueError(f"C has shape {self.C.shape}, expected {(model.m, model.n)}")


# ---------------------------------------------------------------------------
# identification


@dataclass(frozen=True)
class EdgeSamples:
    """Samples of the flow through one pipe ``neighbor -> tank``."""

    tank: int
    neighbor: int
    h: np.ndarray  # (S, n)
    u: np.ndarray  # (S, m)
    d_a: np.ndarray  # (S,)
    q: np.ndarray  # (S,)
    sample_ids: np.ndarray  # (S,) integer time stamps used to align residuals

    @property
    def key(self):
        return (self.tank, self.neighbor)


@dataclass
class TrajectoryDataset:
    """Edge-flow samples for surrogate identification.

    ``edges`` maps ``(tank, neighbor)`` to :class:`EdgeSamples`; ``areas``
    maps a tank index to its cross-sectional area.
    """

    n: int
    m: int
    edges: dict = field(default_factory=dict)
    areas: dict = field(default_factory=dict)

    def neighbors(self):
        out = {}
        for (j, i) in sorted(self.edges):
            out.setdefault(j, []).append(i)
        return out

    @classmethod
    def from_rows(cls, rows, n, m):
        """Build from an iterable of dicts with keys tank, neighbor, area,
        h1..hn, u1..um, d_a, q and optionally sample."""
        buf = {}
        areas = {}
        for k, r in enumerate(rows):
            j, i = int(r["tank"]), int(r["neighbor"])
            areas.setdefault(j, float(r["area"]))
            b = buf.setdefault((j, i), ([], [], [], [], []))
            b[0].append([float(r[f"h{t + 1}"]) for t in range(n)])
            b[1].append([float(r[f"u{t + 1}"]) for t in range(m)])
            b[2].append(float(r["d_a"]))
            b[3].append(float(r["q"]))
            b[4].append(int(r.get("sample", k)))
        edges = {}
        for key, (h, u, d, q, s) in buf.items():
            edges[key] = EdgeSamples(key[0], key[1], np.array(h).reshape(-1, n),
                                     np.array(u).reshape(-1, m), np.array(d),
                                     np.array(q), np.array(s, dtype=int))
        return cls(n=n, m=m, edges=edges, areas=areas)


def read_dataset(path):
    """Read a comma-separated trajectory table.

    The header must name ``tank, neighbor, area, h1..hn, u1..um, d_a, q``;
    an optional ``sample`` column aligns residuals of different edges in time.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        n = sum(1 for c in header if c.startswith("h") and c[1:].isdigit())
        m = sum(1 for c in header if c.startswith("u") and c[1:].isdigit())
        missing = [c for c in ("tank", "neighbor", "area", "d_a", "q") if c not in header]
        if missing or n == 0 or m == 0:
            raise DatasetParseError(f"{path}: header lacks columns {missing or 'h*/u*'}", row=1)
        rows = []
        for lineno, r in enumerate(reader, start=2):
            if None in r or any(v is None or v == "" for v in r.values()):
                raise DatasetParseError(f"{path}: wrong number of fields", row=lineno)
            try:
                parsed = {k: float(v) for k, v in r.items()}
            except ValueError as exc:
                raise DatasetParseError(f"{path}: {exc}", row=lineno) from None
            rows.append(parsed)
    if not rows:
        raise IdentificationError(f"{path}: dataset is empty")
    return TrajectoryDataset.from_rows(rows, n, m)


@dataclass(frozen=True)
class EdgeFit:
    tank: int
    neighbor: int
    a: np.ndarray  # (n,)
    b1: np.ndarray  # (m,)
    b2: float
    residuals: np.ndarray
    sample_ids: np.ndarray


def fit_edge_surrogate(data, edge):
    """Least-squares fit ``q ~ a h + b1 u + b2 d_a`` for one pipe.

    Parameters
    ----------
    data : TrajectoryDataset
    edge : tuple of int
        ``(tank, neighbor)`` key into ``data.edges``.

    Returns
    -------
    EdgeFit
        Coefficients and the per-row residuals ``q - prediction``.
    """
    if not data.edges or edge not in data.edges:
        raise IdentificationError(f"no samples for edge {edge}")
    e = data.edges[edge]
    X = np.column_stack([e.h, e.u, e.d_a])
    if X.shape[0] == 0:
        raise IdentificationError(f"no samples for edge {edge}")
    p = X.shape[1]
    if X.shape[0] < p + 1:
        raise IdentificationError(
            f"singular fit for edge {edge}: {X.shape[0]} rows for {p} coefficients")
    coef, _, rank, sv = np.linalg.lstsq(X, e.q, rcond=None)
    if rank < p or sv[-1] <= sv[0] * 1e-12:
        raise IdentificationError(f"singular fit for edge {edge}: regressor rank {rank} < {p}")
    n, m = data.n, data.m
    resid = e.q - X @ coef
    return EdgeFit(e.tank, e.neighbor, coef[:n], coef[n:n + m], float(coef[n + m]),
                   resid, e.sample_ids)


def assemble_continuous_model(edge_fits, tank_areas, neighbors=None):
    """Sum edge fits into tank dynamics and compute model-error samples.

    Parameters
    ----------
    edge_fits : mapping ``(tank, neighbor) -> EdgeFit``
    tank_areas : sequence or mapping of float
        Cross-sectional area of each tank, indexed 0..n-1.
    neighbors : mapping ``tank -> list of neighbor``, optional
        Declared pipe incidence. Defaults to the keys of ``edge_fits``.

    Returns
    -------
    model : ContinuousTankModel
    w_m : (S, n) ndarray
        Model-error samples, one row per time stamp shared by every edge.
    """
    if isinstance(tank_areas, Mapping):
        n = len(tank_areas)
        areas = np.array([tank_areas[j] for j in range(n)], dtype=float)
    else:
        areas = np.asarray(tank_areas, dtype=float)
        n = areas.size
    if np.any(areas <= 0):
        raise IdentificationError("tank areas must be positive")
    if neighbors is None:
        neighbors = {}
        for (j, i) in edge_fits:
            neighbors.setdefault(j, []).append(i)
    any_fit = next(iter(edge_fits.values()), None)
    if any_fit is None:
        raise IdentificationError("no edge fits")
    m = any_fit.b1.size
    A = np.zeros((n, n))
    B1 = np.zeros((n, m))
    B2 = np.zeros((n, 1))
    common = None
    for j in range(n):
        nbrs = neighbors.get(j, [])
        if not nbrs:
            raise IdentificationError(f"tank {j} has no neighbours")
        for i in nbrs:
            fit = edge_fits.get((j, i))
            if fit is None:
                raise IdentificationError(f"missing fit for declared edge ({j}, {i})")
            A[j] += fit.a / areas[j]
            B1[j] += fit.b1 / areas[j]
            B2[j, 0] += fit.b2 / areas[j]
            ids = set(fit.sample_ids.tolist())
            common = ids if common is None else common & ids
    stamps = np.array(sorted(common), dtype=int)
    w_m = np.zeros((stamps.size, n))
    for j in range(n):
        for i in neighbors[j]:
            fit = edge_fits[(j, i)]
            lookup = dict(zip(fit.sample_ids.tolist(), fit.residuals))
            w_m[:, j] += np.array([lookup[s] for s in stamps]) / areas[j]
    return ContinuousTankModel(A, B1, B2), w_m


def discretize_rk4(model, dt):
    """One RK4 step with inputs held constant over ``dt``.

    For a linear system the RK4 update is the fourth-order Taylor polynomial
    of the augmented exponential ``expm([[A, B], [0, 0]] dt)``; the input
    columns are ``[B1 | B2 | I]`` so that the last block is the model-error
    channel ``B_d3``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, m = model.n, model.m
    k = m + 1 + n
    M = np.zeros((n + k, n + k))
    M[:n, :n] = model.A
    M[:n, n:] = np.hstack([model.B1, model.B2, np.eye(n)])
    M *= dt
    T = np.eye(n + k)
    P = np.eye(n + k)
    for order in range(1, 5):
        P = P @ M
        T = T + P / factorial(order)
    return LinearTankModel(A_d=T[:n, :n], B_d1=T[:n, n:n + m], B_d2=T[:n, n + m:n + m + 1],
                           B_d3=T[:n, n + m + 1:], dt=dt, source=model)


def predict_nominal(model, h0, v_sequence, d_bar_sequence):
    """Disturbance-free state sequence (N+1 states, starting at ``h0``)."""
    h0 = np.asarray(h0, dtype=float).reshape(model.n)
    v = np.asarray(v_sequence, dtype=float).reshape(-1, model.m)
    d = np.asarray(d_bar_sequence, dtype=float).reshape(-1)
    if v.shape[0] != d.shape[0]:
        raise ValueError(f"input length {v.shape[0]} != demand length {d.shape[0]}")
    out = np.empty((v.shape[0] + 1, model.n))
    out[0] = h0
    for j in range(v.shape[0]):
        out[j + 1] = model.A_d @ out[j] + model.B_d1 @ v[j] + model.B_d2[:, 0] * d[j]
    return out


def stage_cost(e_j, v_j, h_hat_j, pressure):
    """Electricity cost ``e v'(C h + D v - p_in)`` of one step."""
    v_j = np.asarray(v_j, dtype=float)
    head = pressure.C @ np.asarray(h_hat_j, dtype=float) + pressure.D @ v_j - pressure.p_in
    return float(e_j * (v_j @ head))


def total_cost(model, pressure, h0, v_sequence, d_bar_sequence, prices):
    """Sum of stage costs along the nominal prediction."""
    hs = predict_nominal(model, h0, v_sequence, d_bar_sequence)
    v = np.asarray(v_sequence, dtype=float).reshape(-1, model.m)
    return sum(stage_cost(prices[j], v[j], hs[j], pressure) for j in range(v.shape[0]))


def identify(data, dt):
    """Fit every edge, assemble the tank model and discretise it.

    Returns ``(model, E_m, w_m)``: the discrete model (its ``source`` is the
    continuous fit), the smallest diagonal box covering the model-error
    samples, and the samples themselves.
    """
    from .uncertainty import quantify_from_residuals

    fits = {key: fit_edge_surrogate(data, key) for key in sorted(data.edges)}
    cont, w_m = assemble_continuous_model(fits, data.areas, data.neighbors())
    if w_m.shape[0] == 0:
        raise IdentificationError("edges share no sample time stamps; cannot quantify model error")
    return discretize_rk4(cont, dt), quantify_from_residuals(w_m).E, w_m


# ---------------------------------------------------------------------------
# built-in data

# Published discrete-time Randers matrices (dt = 1 h). The model-error set is
# used directly as the per-step disturbance set, so B_d3 is the identity.
RANDERS_A_D = [[0.9867, 0.0134], [0.0417, 0.9577]]
RANDERS_B_D1 = [[0.0013, 0.0005], [0.0008, 0.0035]]
RANDERS_B_D2 = [[-0.0012], [-0.0014]]
RANDERS_E_M = [[0.054, 0.0], [0.0, 0.083]]


def randers_paper_model():
    """The two-tank, two-pump Randers surrogate with its published matrices."""
    return LinearTankModel(A_d=RANDERS_A_D, B_d1=RANDERS_B_D1, B_d2=RANDERS_B_D2,
                           B_d3=np.eye(2), dt=1.0)


def recover_continuous(model):
    """Continuous ``A`` whose exponential over ``dt`` equals ``A_d``.

    ``B1`` and ``B2`` are chosen so that the exact zero-order hold of the
    recovered model reproduces ``B_d1`` and ``B_d2``.
    """
    A = np.real(scipy.linalg.logm(model.A_d)) / model.dt
    n = model.n
    # exact ZOH input gain: int_0^dt expm(A s) ds = Gamma
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A * model.dt
    aug[:n, n:] = np.eye(n) * model.dt
    Gamma = scipy.linalg.expm(aug)[:n, n:]
    B1 = np.linalg.solve(Gamma, model.B_d1)
    B2 = np.linalg.solve(Gamma, model.B_d2)
    return ContinuousTankModel(A, B1, B2)


def synthetic_pressure_model(kind="convex"):
    """Synthetic pump pressure parameters for the two-pump network.

    ``C`` is one metre of head per metre of tank level, ``p_in`` a suction
    head below the tank datum. ``kind="convex"`` has symmetric positive
    definite ``D``; ``kind="nonconvex"`` has an indefinite ``D`` so the
    energy cost is not convex in the pump flows.
    """
    C = np.eye(2)
    p_in = np.array([-30.0, -32.0])
    if kind == "convex":
        D = np.array([[0.10, 0.01], [0.01, 0.08]])
    elif kind == "nonconvex":
        D = np.array([[0.05, 0.12], [0.12, 0.04]])
    else:
        raise ValueError(f"unknown pressure model kind {kind!r}")
    return PumpPressureModel(C=C, D=D, p_in=p_in)


# ---------------------------------------------------------------------------
# model documents


def _tolist(a):
    return None if a is None else np.asarray(a).tolist()


def model_to_document(model, E_m=None, pressure=None):
    """Structured, human-readable representation with explicit dimensions."""
    doc = {
        "format": "pumpsched-model/1",
        "n": model.n,
        "m": model.m,
        "dt": model.dt,
        "discrete": {
            "A_d": _tolist(model.A_d),
            "B_d1": _tolist(model.B_d1),
            "B_d2": _tolist(model.B_d2),
            "B_d3": _tolist(model.B_d3),
        },
        "continuous": None,
        "E_m": _tolist(E_m),
        "pressure": None,
    }
    if model.source is not None:
        doc["continuous"] = {"A": _tolist(model.source.A), "B1": _tolist(model.source.B1),
                             "B2": _tolist(model.source.B2)}
    if pressure is not None:
        doc["pressure"] = {"C": _tolist(pressure.C), "D": _tolist(pressure.D),
                           "p_in": _tolist(pressure.p_in)}
    return doc


def model_from_document(doc):
    """Inverse of :func:`model_to_document`; returns ``(model, E_m, pressure)``."""
    if doc.get("format") != "pumpsched-model/1":
        raise ValueError(f"unsupported model document format {doc.get('format')!r}")
    n, m = int(doc["n"]), int(doc["m"])
    src = None
    if doc.get("continuous"):
        c = doc["continuous"]
        src = ContinuousTankModel(c["A"], c["B1"], c["B2"])
    d = doc["discrete"]
    model = LinearTankModel(d["A_d"], d["B_d1"], d["B_d2"], d.get("B_d3"), dt=doc["dt"], source=src)
    if model.n != n or model.m != m:
        raise ValueError(f"document declares n={n}, m={m} but matrices are {model.n}x{model.m}")
    E_m = None if doc.get("E_m") is None else np.array(doc["E_m"], dtype=float).reshape(n, -1)
    pressure = None
    if doc.get("pressure"):
        p = doc["pressure"]
        pressure = PumpPressureModel(p["C"], p["D"], p["p_in"])
        pressure.check_compatible(model)
    return model, E_m, pressure


def save_model(path, model, E_m=None, pressure=None):
    Path(path).write_text(json.dumps(model_to_document(model, E_m, pressure), indent=2) + "\n")


def load_model(path):
    return model_from_document(json.loads(Path(path).read_text()))
