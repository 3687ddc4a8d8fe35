"""Robust optimal control problems over disturbance-feedback policies.

The current time is taken as stage 0. A policy over ``N`` steps is::

    u_j = v_j + sum_{k<j} U_{j,k} g_k

with generators ``g_k`` in the unit box and ``w_k = E g_k`` (``U = M J``,
``J = I_N kron E``). Two equivalent programs are built:

* :func:`build_dense` -- decision variables ``(v, U, Lambda)`` with the
  worst-case row norms of ``F U + G J`` bounded by ``Lambda``.
* :func:`build_sparse` -- nominal trajectory plus one "column subsystem"
  per generator ``p = 1..lN`` that propagates the response to ``g = e_p``.
  All blocks are chains over stages, which the structured solver exploits.

Row convention for ``F, G, T, c`` (``R = sN + 2n`` rows): stage-major,
``s`` rows per stage ``j = 0..N-1`` ordered as in :class:`ConstraintSpec`,
followed by the ``2n`` terminal rows ``[h_N <= h_max; -h_N <= -h_min]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .solver import QpProblem, QpStructure


@dataclass(frozen=True)
class ConstraintSpec:
    """Box constraints on levels and pump flows in ``K h + L u <= b`` form."""

    h_min: np.ndarray
    h_max: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        h_min = np.array(self.h_min, dtype=float).ravel()
        h_max = np.array(self.h_max, dtype=float).ravel()
        u_max = np.array(self.u_max, dtype=float).ravel()
        if h_min.shape != h_max.shape:
            raise ValueError("h_min and h_max must have the same length")
        if not np.all(h_min < h_max):
            raise ValueError(f"empty level box: h_min={h_min}, h_max={h_max}")
        if not np.all(u_max > 0):
            raise ValueError("u_max must be positive")
        for name, v in (("h_min", h_min), ("h_max", h_max), ("u_max", u_max)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n(self):
        return self.h_min.size

    @property
    def m(self):
        return self.u_max.size

    @property
    def s(self):
        return 2 * self.n + 2 * self.m

    @property
    def K(self):
        n, m = self.n, self.m
        return np.vstack([np.eye(n), -np.eye(n), np.zeros((2 * m, n))])

    @property
    def L(self):
        n, m = self.n, self.m
        return np.vstack([np.zeros((2 * n, m)), np.eye(m), -np.eye(m)])

    @property
    def b(self):
        return np.concatenate([self.h_max, -self.h_min, self.u_max, np.zeros(self.m)])

    @property
    def K_h(self):
        return np.vstack([np.eye(self.n), -np.eye(self.n)])

    @property
    def b_h(self):
        return np.concatenate([self.h_max, -self.h_min])

    def tightened(self, margin):
        """Level bounds shrunk by ``margin`` on both sides; inputs unchanged."""
        margin = np.asarray(margin, dtype=float)
        return ConstraintSpec(self.h_min + margin, self.h_max - margin, self.u_max)

    def midpoint(self):
        return 0.5 * (self.h_min + self.h_max)


@dataclass
class AffinePolicy:
    """Disturbance-feedback policy ``u = v + U g`` (and ``u = v + M w`` if known).

    ``v`` has shape ``(N, m)``; ``U`` is ``(mN, lN)`` strictly block lower
    triangular; ``M`` is ``(mN, nN)`` or None when ``E`` is not invertible.
    """

    v: np.ndarray
    U: np.ndarray
    M: Optional[np.ndarray] = None

    @property
    def N(self):
        return self.v.shape[0]

    @property
    def m(self):
        return self.v.shape[1]

    @property
    def l(self):
        return self.U.shape[1] // max(self.N, 1)

    def input_at(self, j, g_history):
        """``u_j`` given generators ``g_0 .. g_{j-1}`` (rows of ``g_history``)."""
        m, l = self.m, self.l
        u = self.v[j].copy()
        g = np.asarray(g_history, dtype=float).reshape(-1, l)
        for k in range(min(j, g.shape[0])):
            u += self.U[j * m:(j + 1) * m, k * l:(k + 1) * l] @ g[k]
        return u

    def inputs(self, g_sequence):
        """All ``N`` inputs for a full generator sequence, shape ``(N, m)``."""
        g = np.asarray(g_sequence, dtype=float).reshape(-1)
        return (self.v.reshape(-1) + self.U @ g).reshape(self.N, self.m)


@dataclass
class StackedSystem:
    """Prediction matrices over the horizon.

    ``x = AA h + B1s u + B2s d + Bw w`` stacks ``h_0 .. h_N``;
    ``KK x + LL u <= c`` stacks all stage and terminal constraints.
    """

    model: object
    dset: object
    N: int
    AA: np.ndarray
    B1s: np.ndarray
    B2s: np.ndarray
    Bw: np.ndarray
    KK: np.ndarray
    LL: np.ndarray
    J: np.ndarray


def _conv_matrix(A_d, B, N):
    """Block lower-triangular map from inputs 0..N-1 to states 0..N."""
    n, k = B.shape
    out = np.zeros((n * (N + 1), k * N))
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A_d @ powers[-1])
    for j in range(1, N + 1):
        for i in range(j):
            out[j * n:(j + 1) * n, i * k:(i + 1) * k] = powers[j - 1 - i] @ B
    return out


def build_stacked(model, spec, dset, N):
    if N < 1:
        raise ValueError("horizon N must be at least 1")
    n = model.n
    AA = np.vstack([np.linalg.matrix_power(model.A_d, j) for j in range(N + 1)])
    B1s = _conv_matrix(model.A_d, model.B_d1, N)
    B2s = _conv_matrix(model.A_d, model.B_d2, N)
    Bw = _conv_matrix(model.A_d, np.eye(n), N)
    KK = np.zeros((spec.s * N + 2 * n, n * (N + 1)))
    KK[:spec.s * N, :n * N] = np.kron(np.eye(N), spec.K)
    KK[spec.s * N:, n * N:] = spec.K_h
    LL = np.vstack([np.kron(np.eye(N), spec.L), np.zeros((2 * n, model.m * N))])
    J = np.kron(np.eye(N), dset.E)
    return StackedSystem(model, dset, N, AA, B1s, B2s, Bw, KK, LL, J)


def condensed_cost(stacked, pressure, h, d_bar, prices):
    """Energy cost as ``1/2 v'Hv v + qv'v`` over stacked nominal inputs."""
    N, n, m = stacked.N, stacked.model.n, stacked.model.m
    e = np.asarray(prices, dtype=float).reshape(N)
    EC = np.kron(np.diag(e), pressure.C)
    ED = np.kron(np.diag(e), pressure.D)
    Q = EC @ stacked.B1s[:n * N] + ED
    Hv = Q + Q.T
    free = stacked.AA @ np.asarray(h, dtype=float) + stacked.B2s @ np.asarray(d_bar, dtype=float).reshape(N)
    qv = EC @ free[:n * N] - np.kron(e, pressure.p_in)
    return Hv, qv


def cost_terms(stacked, pressure, prices, d_bar, h):
    """Nominal cost as ``(H, g, c)`` with ``J(v) = 1/2 v'Hv + g'v + c``.

    Every stage term is bilinear or quadratic in ``v`` so ``c`` is zero; it
    is returned to keep the form explicit.
    """
    Hv, qv = condensed_cost(stacked, pressure, h, d_bar, prices)
    return Hv, qv, 0.0


@dataclass
class DenseRobustProgram:
    """``F v + Lambda 1 <= rhs`` and ``|F U + G J| <= Lambda`` (elementwise)."""

    stacked: StackedSystem
    F: np.ndarray
    G: np.ndarray
    T: np.ndarray
    c: np.ndarray
    rhs: np.ndarray
    Hv: np.ndarray
    qv: np.ndarray
    u_index: np.ndarray = field(default=None)
    lam_offset: int = 0

    def is_feasible(self, policy, tol=1e-9):
        """Check a policy against the tractable constraints (minimal Lambda)."""
        v = policy.v.reshape(-1)
        Y = self.F @ policy.U + self.G @ self.stacked.J
        lam = np.abs(Y).sum(axis=1)
        return bool(np.all(self.F @ v + lam <= self.rhs + tol))

    def qp_size(self):
        """Variable count of :meth:`to_qp` without building it."""
        st = self.stacked
        N, m, l = st.N, st.model.m, st.dset.l
        strictly_lower = l * m * N * (N - 1) // 2
        return m * N + strictly_lower + self.F.shape[0] * l * N

    def to_qp(self, shift=0.0):
        """Canonical QP in variables ``[v | free entries of U | Lambda]``."""
        st = self.stacked
        N, m, l = st.N, st.model.m, st.dset.l
        R = self.F.shape[0]
        mN, lN = m * N, l * N
        rows_blk = np.arange(mN) // m
        cols_blk = np.arange(lN) // l
        mask = rows_blk[:, None] > cols_blk[None, :]
        uidx = -np.ones((mN, lN), dtype=int)
        uidx[mask] = mN + np.arange(mask.sum())
        nu = int(mask.sum())
        lam0 = mN + nu
        nvar = lam0 + R * lN
        self.u_index = uidx
        self.lam_offset = lam0
        GJ = self.G @ st.J

        H = sp.lil_matrix((nvar, nvar))
        H[:mN, :mN] = self.Hv + shift * np.eye(mN)
        q = np.zeros(nvar)
        q[:mN] = self.qv

        # F v + Lambda 1 <= rhs
        Fs = sp.csr_matrix(self.F)
        lam_sum = sp.csr_matrix((np.ones(R * lN), (np.repeat(np.arange(R), lN), lam0 + np.arange(R * lN))),
                                shape=(R, nvar))
        top = sp.hstack([Fs, sp.csr_matrix((R, nvar - mN))]) + lam_sum

        # +-(F U + G J)[r, p] - Lambda[r, p] <= 0, one block per column p
        blocks_r, blocks_c, blocks_v = [], [], []
        for p in range(lN):
            a = np.flatnonzero(mask[:, p])
            Fp = self.F[:, a]
            rr, cc = np.nonzero(Fp)
            blocks_r.append(p * R + rr)
            blocks_c.append(uidx[a[cc], p])
            blocks_v.append(Fp[rr, cc])
            blocks_r.append(p * R + np.arange(R))
            blocks_c.append(lam0 + np.arange(R) * lN + p)
            blocks_v.append(-np.ones(R))
        r = np.concatenate(blocks_r)
        cidx = np.concatenate(blocks_c)
        val = np.concatenate(blocks_v)
        is_lam = cidx >= lam0
        pos = sp.csr_matrix((val, (r, cidx)), shape=(R * lN, nvar))
        neg = sp.csr_matrix((np.where(is_lam, val, -val), (r, cidx)), shape=(R * lN, nvar))
        gj = GJ.T.reshape(-1)  # column p, row r -> p*R + r
        A_in = sp.vstack([top, pos, neg]).tocsr()
        b_in = np.concatenate([self.rhs, -gj, gj])
        return QpProblem(H.tocsr(), q, sp.csr_matrix((0, nvar)), np.zeros(0), A_in, b_in)

    def policy_from(self, x):
        st = self.stacked
        N, m, l = st.N, st.model.m, st.dset.l
        v = x[:m * N].reshape(N, m)
        U = np.where(self.u_index >= 0, x[np.maximum(self.u_index, 0)], 0.0)
        return AffinePolicy(v=v, U=U, M=_m_from_u(U, st.dset.E, N))


def build_dense(stacked, spec, h, d_bar, prices, pressure):
    """Tractable robust counterpart with decision variables ``(v, U, Lambda)``."""
    st = stacked
    N = st.N
    F = st.KK @ st.B1s + st.LL
    G = st.KK @ st.Bw
    T = -st.KK @ st.AA
    c = np.concatenate([np.tile(spec.b, N), spec.b_h])
    d_bar = np.asarray(d_bar, dtype=float).reshape(N)
    rhs = c - st.KK @ st.B2s @ d_bar + T @ np.asarray(h, dtype=float)
    Hv, qv = condensed_cost(st, pressure, h, d_bar, prices)
    return DenseRobustProgram(st, F, G, T, c, rhs, Hv, qv)


def _m_from_u(U, E, N):
    E = np.asarray(E)
    if E.shape[0] != E.shape[1] or E.size == 0:
        return None
    if np.linalg.cond(E) > 1e12:
        return None
    return U @ np.kron(np.eye(N), np.linalg.inv(E))


# ---------------------------------------------------------------------------
# sparse form


def subsystem_index(p, l):
    """Entry stage ``k`` and generator column ``z`` of column subsystem ``p``.

    ``p`` counts from 1 as in ``p = l k + z``; ``k`` and ``z`` are returned
    0-based, i.e. subsystem ``p`` starts at ``E[:, z]`` in stage ``k + 1``.
    """
    return (p - 1) // l, (p - 1) % l


class _Builder:
    def __init__(self):
        self.nvar = 0
        self.vgroup, self.vstage = [], []
        self.eq = []  # (cols, vals, rhs, group, stage)
        self.ineq = []  # (cols, vals, rhs)

    def var(self, size, group, stage):
        idx = np.arange(self.nvar, self.nvar + size)
        self.nvar += size
        self.vgroup.append(np.full(size, group))
        self.vstage.append(np.full(size, float(stage)))
        return idx

    def eq_rows(self, blocks, rhs, group, stage):
        """Rows ``sum_b M_b x[idx_b] = rhs`` for a list of (idx, M) blocks."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.eq.append((blocks, rhs, group, stage))

    def ineq_rows(self, blocks, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.ineq.append((blocks, rhs))

    @staticmethod
    def _assemble(entries, nvar):
        rows, cols, vals, rhs = [], [], [], []
        off = 0
        for blocks, b in entries:
            for idx, M in blocks:
                M = np.atleast_2d(M)
                rr, cc = np.nonzero(M)
                rows.append(off + rr)
                cols.append(np.asarray(idx)[cc])
                vals.append(M[rr, cc])
            rhs.append(b)
            off += b.size
        if not rows:
            return sp.csr_matrix((0, nvar)), np.zeros(0)
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(off, nvar))
        return A, np.concatenate(rhs)

    def finish(self, H_entries, q):
        nvar = self.nvar
        A_eq, b_eq = self._assemble([(bl, b) for bl, b, _, _ in self.eq], nvar)
        A_in, b_in = self._assemble(self.ineq, nvar)
        eg = np.concatenate([np.full(b.size, g) for _, b, g, _ in self.eq]) if self.eq else np.zeros(0, int)
        es = np.concatenate([np.full(b.size, float(s)) for _, b, _, s in self.eq]) if self.eq else np.zeros(0)
        hr, hc, hv = (np.concatenate(x) if x else np.zeros(0) for x in zip(*H_entries)) if H_entries else (
            np.zeros(0, int), np.zeros(0, int), np.zeros(0))
        H = sp.csr_matrix((hv, (hr.astype(int), hc.astype(int))), shape=(nvar, nvar))
        structure = QpStructure(np.concatenate(self.vgroup), np.concatenate(self.vstage), eg, es)
        return QpProblem(H, q, A_eq, b_eq, A_in, b_in, structure)


@dataclass
class SparseRobustProgram:
    """Stage-structured robust program and the index maps into its solution.

    ``h_hat`` is ``(N+1, n)``, ``v`` is ``(N, m)``; ``dc[j]`` holds the
    indices of the constraint back-off ``delta c_j`` (absent at stage 0);
    ``sub_u[p-1]`` is an ``(N, m)`` array of input indices of column
    subsystem ``p`` (``-1`` where the subsystem is identically zero).
    """

    qp: QpProblem
    N: int
    n: int
    m: int
    l: int
    h_hat: np.ndarray
    v: np.ndarray
    dc: dict
    sigma: Optional[dict]
    sub_u: list
    sub_h: list
    E: np.ndarray
    shift: float = 0.0

    def energy_cost(self, x, pressure, prices):
        total = 0.0
        for j in range(self.N):
            vj = x[self.v[j]]
            head = pressure.C @ x[self.h_hat[j]] + pressure.D @ vj - pressure.p_in
            total += prices[j] * (vj @ head)
        return float(total)

    def slack_usage(self, x):
        if not self.sigma:
            return 0.0
        return float(max(np.max(x[idx], initial=0.0) for idx in self.sigma.values()))


def build_sparse(stacked, spec, h, d_bar, prices, pressure, shift=0.0, soft_penalty=None,
                 robust=True, prune_zero_generators=True):
    """Sparse robust program with nominal and per-generator subsystems.

    Parameters
    ----------
    stacked : StackedSystem
        Supplies the model, disturbance set and horizon.
    spec : ConstraintSpec
    h, d_bar, prices : array_like
        Measured levels, demand forecast (N,) and prices (N,).
    pressure : PumpPressureModel
    shift : float
        Added to the Hessian of the nominal inputs (convexification).
    soft_penalty : float, optional
        If given, level rows (stages 1..N) get nonnegative slacks with this
        linear penalty.
    robust : bool
        If False, no column subsystems are built (nominal MPC).
    prune_zero_generators : bool
        Skip subsystems whose generator column is zero; they contribute
        nothing to the constraint back-offs.

    Notes
    -----
    Level rows at stage 0 only involve the measured state and are omitted.
    """
    model, E, N = stacked.model, stacked.dset.E, stacked.N
    n, m = model.n, model.m
    l = E.shape[1]
    s = spec.s
    K, L, b, Kh, bh = spec.K, spec.L, spec.b, spec.K_h, spec.b_h
    A, B1, B2 = model.A_d, model.B_d1, model.B_d2[:, 0]
    d_bar = np.asarray(d_bar, dtype=float).reshape(N)
    prices = np.asarray(prices, dtype=float).reshape(N)
    h = np.asarray(h, dtype=float).reshape(n)

    cols = [z for z in range(l) if not (prune_zero_generators and not np.any(E[:, z]))] if robust else []
    robust = bool(cols)
    bld = _Builder()
    soft = soft_penalty is not None

    # nominal chain (group 0)
    hh = np.empty((N + 1, n), dtype=int)
    vv = np.empty((N, m), dtype=int)
    dc = {}
    sigma = {} if soft else None
    for j in range(N + 1):
        hh[j] = bld.var(n, 0, j)
        if j < N:
            vv[j] = bld.var(m, 0, j)
        if robust and j >= 1:
            dc[j] = bld.var(s if j < N else 2 * n, 0, j)
        if soft and j >= 1:
            sigma[j] = bld.var(2 * n, 0, j)
    bld.eq_rows([(hh[0], np.eye(n))], h, 0, -0.5)
    for j in range(N):
        bld.eq_rows([(hh[j + 1], np.eye(n)), (hh[j], -A), (vv[j], -B1)], B2 * d_bar[j], 0, j + 0.5)
    in_rows = slice(2 * n, s)
    bld.ineq_rows([(vv[0], L[in_rows])], b[in_rows])
    for j in range(1, N):
        blocks = [(hh[j], K), (vv[j], L)]
        if robust:
            blocks.append((dc[j], np.eye(s)))
        if soft:
            blocks.append((sigma[j], -np.vstack([np.eye(2 * n), np.zeros((2 * m, 2 * n))])))
        bld.ineq_rows(blocks, b)
    blocks = [(hh[N], Kh)]
    if robust:
        blocks.append((dc[N], np.eye(2 * n)))
    if soft:
        blocks.append((sigma[N], -np.eye(2 * n)))
    bld.ineq_rows(blocks, bh)
    if soft:
        for j in range(1, N + 1):
            bld.ineq_rows([(sigma[j], -np.eye(2 * n))], np.zeros(2 * n))

    # column subsystems (groups 1..)
    sub_u, sub_h = [], []
    contrib = {j: [] for j in range(1, N + 1)}
    group = 0
    for p in range(1, l * N + 1):
        k, z = subsystem_index(p, l)
        uidx = -np.ones((N, m), dtype=int)
        hidx = -np.ones((N + 1, n), dtype=int)
        if robust and z in cols:
            group += 1
            dcp = {}
            for j in range(k + 1, N + 1):
                hidx[j] = bld.var(n, group, j)
                if j < N:
                    uidx[j] = bld.var(m, group, j)
                dcp[j] = bld.var(s if j < N else 2 * n, group, j)
                contrib[j].append(dcp[j])
            bld.eq_rows([(hidx[k + 1], np.eye(n))], E[:, z], group, k + 0.5)
            for j in range(k + 1, N):
                bld.eq_rows([(hidx[j + 1], np.eye(n)), (hidx[j], -A), (uidx[j], -B1)], np.zeros(n),
                            group, j + 0.5)
            for j in range(k + 1, N):
                for sign in (1.0, -1.0):
                    bld.ineq_rows([(hidx[j], sign * K), (uidx[j], sign * L), (dcp[j], -np.eye(s))],
                                  np.zeros(s))
            for sign in (1.0, -1.0):
                bld.ineq_rows([(hidx[N], sign * Kh), (dcp[N], -np.eye(2 * n))], np.zeros(2 * n))
        sub_u.append(uidx)
        sub_h.append(hidx)

    # coupling: delta c_j = sum_p delta c^p_j
    if robust:
        for j in range(1, N + 1):
            size = dc[j].size
            blocks = [(dc[j], np.eye(size))] + [(idx, -np.eye(size)) for idx in contrib[j]]
            bld.eq_rows(blocks, np.zeros(size), -1, j)

    q = np.zeros(bld.nvar)
    H_entries = []
    Dsym = pressure.D + pressure.D.T
    for j in range(N):
        e = prices[j]
        blk = e * Dsym + shift * np.eye(m)
        r, c_ = np.meshgrid(vv[j], vv[j], indexing="ij")
        H_entries.append((r.ravel(), c_.ravel(), blk.ravel()))
        r, c_ = np.meshgrid(vv[j], hh[j], indexing="ij")
        H_entries.append((r.ravel(), c_.ravel(), (e * pressure.C).ravel()))
        H_entries.append((c_.ravel(), r.ravel(), (e * pressure.C).ravel()))
        q[vv[j]] = -e * pressure.p_in
    if soft:
        for idx in sigma.values():
            q[idx] = soft_penalty
    qp = bld.finish(H_entries, q)
    return SparseRobustProgram(qp=qp, N=N, n=n, m=m, l=l, h_hat=hh, v=vv, dc=dc, sigma=sigma,
                               sub_u=sub_u, sub_h=sub_h, E=np.array(E), shift=shift)


def extract_policy(program, x):
    """U-form policy from a solved :class:`SparseRobustProgram`.

    ``M`` is filled in as ``U (I kron E^-1)`` when ``E`` is square and
    invertible.
    """
    N, m, l = program.N, program.m, program.l
    v = x[program.v].copy()
    U = np.zeros((m * N, l * N))
    for p, uidx in enumerate(program.sub_u):
        for j in range(N):
            if uidx[j, 0] >= 0:
                U[j * m:(j + 1) * m, p] = x[uidx[j]]
    return AffinePolicy(v=v, U=U, M=_m_from_u(U, program.E, N))


def export_triplets(qp, directory):
    """Write ``H, A_eq, A_in`` as ``row col value`` lines and the vectors
    ``q, b_eq, b_in`` one value per line."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, M in (("H", qp.H), ("A_eq", qp.A_eq), ("A_in", qp.A_in)):
        C = sp.coo_matrix(M)
        with open(d / f"{name}.txt", "w") as fh:
            fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
            for r, c, v in zip(C.row, C.col, C.data):
                fh.write(f"{r} {c} {v:.17g}\n")
    for name, v in (("q", qp.q), ("b_eq", qp.b_eq), ("b_in", qp.b_in)):
        np.savetxt(d / f"{name}.txt", v, fmt="%.17g")
