"""Primal-dual interior-point solver for convex quadratic programs.

Problems are posed as::

    minimize    1/2 x'Hx + q'x
    subject to  A_eq x  = b_eq
                A_in x <= b_in

Two linear-algebra back ends share one Mehrotra predictor-corrector loop.

``solve_sparse_ipm`` needs a :class:`QpStructure`: variables and equality
rows are partitioned into groups, each group being a chain over prediction
stages. Every group's KKT block is permuted by stage and factored as a band
matrix (LAPACK ``gbtrf``), so its cost is linear in the horizon. Equality
rows that span several groups ("coupling rows") are handled by a Schur
complement whose size is also linear in the horizon.

``solve_dense_reference`` forms and factors the full KKT matrix densely.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack


class SolverError(RuntimeError):
    pass


class ProblemTooLarge(SolverError):
    pass


@dataclass
class QpStructure:
    """Stage-chain partition used by the structured back end.

    ``var_group[i]`` is the group of variable ``i`` (``>= 0``);
    ``eq_group[r]`` is the group of equality row ``r`` or ``-1`` for a
    coupling row. Within a group, variables and rows are ordered by their
    ``*_stage`` key (variables before rows on ties).
    """

    var_group: np.ndarray
    var_stage: np.ndarray
    eq_group: np.ndarray
    eq_stage: np.ndarray


@dataclass
class QpProblem:
    H: sp.spmatrix
    q: np.ndarray
    A_eq: sp.spmatrix
    b_eq: np.ndarray
    A_in: sp.spmatrix
    b_in: np.ndarray
    structure: Optional[QpStructure] = None

    def __post_init__(self):
        n = np.size(self.q)
        self.q = np.asarray(self.q, dtype=float).reshape(n)
        self.H = sp.csr_matrix(self.H, shape=(n, n))
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(np.size(self.b_eq), n))
        self.A_in = sp.csr_matrix(self.A_in, shape=(np.size(self.b_in), n))
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.b_in = np.asarray(self.b_in, dtype=float).reshape(-1)
        asym = abs(self.H - self.H.T)
        if asym.nnz and asym.max() > 1e-12 * (1 + abs(self.H).max()):
            raise ValueError("H must be symmetric")

    @property
    def n(self):
        return self.q.size

    def objective(self, x):
        return float(0.5 * x @ (self.H @ x) + self.q @ x)


@dataclass
class SolverOptions:
    tol: float = 1e-8
    abs_tol: float = 1e-8
    max_iter: int = 100
    eps: float = 1e-8
    verbose: bool = False
    dense_max_vars: int = 6000
    refine_steps: int = 8
    reduced_tol: float = 1e-5
    static_reg: float = 1e-10


@dataclass
class SolveReport:
    """Outcome of one solve.

    Residuals are infinity norms of the final primal (equality and
    inequality), dual (stationarity) and complementarity (``s'z/m``)
    residuals. ``status == "optimal"`` means each is below
    ``abs_tol + tol * scale`` for its natural scale, or, when progress
    stalls at the accuracy floor of the linear algebra, below
    ``reduced_tol * (1 + scale)``; ``accuracy`` says which.
    """

    status: str
    objective: float
    iterations: int
    iter_times: list = field(default_factory=list)
    primal_res: float = np.inf
    dual_res: float = np.inf
    comp_res: float = np.inf
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    factor_nnz: int = 0
    accuracy: str = "full"

    @property
    def optimal(self):
        return self.status == "optimal"


def convexify(H, eps=1e-8, max_doublings=80):
    """Shift ``H`` by a multiple of the identity until it is positive definite.

    Tries ``lam`` in ``0, eps, 2 eps, 4 eps, ...`` and returns the first
    ``(H + lam I, lam)`` whose Cholesky pivots are all at least ``eps``.
    """
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    I = np.eye(H.shape[0])
    lam = 0.0
    for k in range(max_doublings + 1):
        try:
            L = scipy.linalg.cholesky(H + lam * I, lower=True, check_finite=False)
            if np.all(np.diag(L) ** 2 >= eps * (1 - 1e-12)):
                return H + lam * I, lam
        except np.linalg.LinAlgError:
            pass
        lam = eps * 2.0 ** k
    raise SolverError(f"could not convexify: shift exceeded {lam:g}")


# ---------------------------------------------------------------------------
# KKT back ends


class _DenseKKT:
    def __init__(self, prob, opts):
        n = prob.n
        if n > opts.dense_max_vars:
            raise ProblemTooLarge(f"{n} variables exceeds dense limit {opts.dense_max_vars}")
        self.n = n
        self.me = prob.A_eq.shape[0]
        self.H = prob.H.toarray()
        self.A = prob.A_eq.toarray()
        self.G = prob.A_in.tocsc()
        self.reg = 0.0
        self.nnz = 0

    def factor(self, w):
        Phi = self.H + (self.G.T @ sp.diags(w) @ self.G).toarray()
        n, me = self.n, self.me
        K = np.zeros((n + me, n + me))
        K[:n, :n] = Phi + self.reg * np.eye(n)
        K[:n, n:] = self.A.T
        K[n:, :n] = self.A
        lu, piv = scipy.linalg.lu_factor(K, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(d)) or d.min(initial=np.inf) == 0.0:
            return False
        self.nnz = K.size
        self._lu = (lu, piv)
        return True

    def solve(self, rx, ry):
        sol = scipy.linalg.lu_solve(self._lu, np.concatenate([rx, ry]), check_finite=False)
        return sol[:self.n], sol[self.n:]


class _StructuredKKT:
    """Band LU of the group-ordered KKT matrix plus a Schur complement.

    Groups are laid out one after another along the diagonal. No entry
    couples two groups, so the whole local system is one band matrix whose
    half bandwidth is that of the widest group, and a single ``gbtrf`` call
    factors every group at once.
    """

    def __init__(self, prob, opts):
        st = prob.structure
        if st is None:
            st = QpStructure(np.zeros(prob.n, int), np.zeros(prob.n), np.zeros(prob.A_eq.shape[0], int),
                             np.zeros(prob.A_eq.shape[0]))
        n = prob.n
        var_group = np.asarray(st.var_group, dtype=int)
        eq_group = np.asarray(st.eq_group, dtype=int)
        ngroups = int(var_group.max(initial=-1)) + 1
        self.n, self.me, self.ngroups = n, prob.A_eq.shape[0], ngroups
        self.reg = 0.0

        # slots: group-major, then (stage, variables before rows, id)
        var_stage = np.asarray(st.var_stage, dtype=float)
        eq_stage = np.asarray(st.eq_stage, dtype=float)
        local_eqs = np.flatnonzero(eq_group >= 0)
        grp = np.concatenate([var_group, eq_group[local_eqs]])
        stage = np.concatenate([var_stage, eq_stage[local_eqs]])
        kind = np.concatenate([np.zeros(n), np.ones(local_eqs.size)])
        ids = np.concatenate([np.arange(n), local_eqs])
        order = np.lexsort((ids, kind, stage, grp))
        slot = np.empty(order.size, dtype=int)
        slot[order] = np.arange(order.size)
        nslots = order.size
        self.nslots = nslots
        self.slot_of_var = slot[:n]
        self.local_eqs = local_eqs
        self.slot_of_local_eq = slot[n:]
        self.coupling = np.flatnonzero(eq_group < 0)
        is_var_slot = np.zeros(nslots, dtype=bool)
        is_var_slot[self.slot_of_var] = True
        self.is_var_slot = is_var_slot

        # entries of the local KKT matrix as (slot_i, slot_j) pairs
        H = prob.H.tocoo()
        Aeq = prob.A_eq.tocsr()
        Aloc = Aeq[local_eqs].tocoo()
        hi, hj = self.slot_of_var[H.row], self.slot_of_var[H.col]
        ai, aj = self.slot_of_local_eq[Aloc.row], self.slot_of_var[Aloc.col]
        G = prob.A_in.tocsr()
        # pairs (a, b) of nonzeros sharing an inequality row
        cols, vals = G.indices, G.data
        counts = np.diff(G.indptr)
        pa, pb, pr, pc = [], [], [], []
        for k in range(1, counts.max(initial=0) + 1):
            sel = np.flatnonzero(counts == k)
            if sel.size == 0:
                continue
            base = G.indptr[sel][:, None] + np.arange(k)[None, :]
            ia = np.repeat(base, k, axis=1).ravel()
            ib = np.tile(base, (1, k)).ravel()
            pa.append(cols[ia])
            pb.append(cols[ib])
            pr.append(np.repeat(sel, k * k))
            pc.append(vals[ia] * vals[ib])
        if pa:
            pa, pb, pr, pc = (np.concatenate(x) for x in (pa, pb, pr, pc))
        else:
            pa = pb = pr = np.zeros(0, dtype=int)
            pc = np.zeros(0)
        di, dj = self.slot_of_var[pa], self.slot_of_var[pb]

        slot_group = np.empty(nslots, dtype=int)
        slot_group[slot] = grp
        self.group_start = np.searchsorted(slot_group, np.arange(ngroups + 1))
        all_i = np.concatenate([hi, ai, di])
        all_j = np.concatenate([hj, aj, dj])
        if np.any(slot_group[all_i] != slot_group[all_j]):
            raise SolverError("structure violation: H, local equalities or inequalities couple groups")
        kl = int(np.abs(all_i - all_j).max(initial=0))
        self.kl = kl
        self.ldab = 3 * kl + 1
        ld = self.ldab

        def flatpos(i, j):
            # column-major (ldab, nslots) band storage, row 2kl + i - j
            return j * ld + (2 * kl + i - j)

        self.total = nslots * ld
        static = np.zeros(self.total)
        np.add.at(static, flatpos(hi, hj), H.data)
        np.add.at(static, flatpos(ai, aj), Aloc.data)
        np.add.at(static, flatpos(aj, ai), Aloc.data)
        self.static = static
        self.dyn_pos = flatpos(di, dj)
        self.dyn_row = pr
        self.dyn_coef = pc
        self.diag_pos = flatpos(np.arange(nslots), np.arange(nslots))
        idx = np.arange(self.total)
        self.flat_col = idx // ld
        self.flat_row = np.clip(idx % ld - 2 * kl + self.flat_col, 0, nslots - 1)

        # coupling rows as a sparse map from slots
        self.nc = self.coupling.size
        Cc = Aeq[self.coupling].tocoo()
        self.C = sp.csr_matrix((Cc.data, (Cc.row, self.slot_of_var[Cc.col])), shape=(self.nc, nslots))
        # per group: the coupling rows it touches
        CT = self.C.T.tocsr()
        self.cblocks = []
        for g in range(ngroups):
            a, b = self.group_start[g], self.group_start[g + 1]
            rows_g = np.unique(CT[a:b].indices)
            if rows_g.size:
                Cg = CT[a:b][:, rows_g].tocoo()
                self.cblocks.append((a, b, rows_g, Cg.row, Cg.col, Cg.data))
        self.nnz = int(self.total + self.nc * self.nc)

    def factor(self, w):
        flat = self.static + np.bincount(self.dyn_pos, weights=self.dyn_coef * w[self.dyn_row],
                                         minlength=self.total)
        # equilibrate: unit diagonal on the primal block
        diag = flat[self.diag_pos]
        d = np.ones(self.nslots)
        pos = self.is_var_slot & (diag > 0)
        d[pos] = 1.0 / np.sqrt(diag[pos])
        self.d = d
        flat *= d[self.flat_row] * d[self.flat_col]
        if self.reg:
            flat[self.diag_pos] += self.reg * self.is_var_slot
        ab = flat.reshape(self.nslots, self.ldab).T
        lu, piv, info = lapack.dgbtrf(ab, self.kl, self.kl, overwrite_ab=1)
        if info != 0:
            return False
        self.lu = (lu, piv)
        if self.nc:
            Cs = self.C @ sp.diags(d)
            self.Cs = Cs.tocsr()
            self.CsT = Cs.T.tocsr()
            # the band LU is block diagonal by group, so each group's
            # contribution C_g K_g^-1 C_g' comes from a slice of the factors
            S = np.zeros((self.nc, self.nc))
            for a, b, rows_g, ci, cj, cv in self.cblocks:
                r = rows_g.size
                vals = cv * d[a + ci]
                B = np.zeros((b - a, r))
                B[ci, cj] = vals
                X, info = lapack.dgbtrs(lu[:, a:b], self.kl, self.kl, B, piv[a:b] - a)
                # B' X using the sparsity of B
                Sg = np.zeros((r, r))
                np.add.at(Sg, cj, vals[:, None] * X[ci])
                S[np.ix_(rows_g, rows_g)] += Sg
            if not np.all(np.isfinite(S)):
                return False
            self.S = scipy.linalg.lu_factor(S, check_finite=False)
            dS = np.abs(np.diag(self.S[0]))
            if not np.all(np.isfinite(dS)) or dS.min() == 0.0:
                return False
        return True

    def _band_solve(self, b):
        lu, piv = self.lu
        x, info = lapack.dgbtrs(lu, self.kl, self.kl, b, piv)
        return x

    def solve(self, rx, ry):
        L = np.zeros(self.nslots)
        L[self.slot_of_var] = rx
        L[self.slot_of_local_eq] = ry[self.local_eqs]
        L *= self.d
        t = self._band_solve(L)
        if self.nc:
            r_nu = self.Cs @ t - ry[self.coupling]
            nu = scipy.linalg.lu_solve(self.S, r_nu, check_finite=False)
            t = self._band_solve(L - self.CsT @ nu)
        t = t * self.d
        dx = t[self.slot_of_var]
        dy = np.empty(self.me)
        dy[self.local_eqs] = t[self.slot_of_local_eq]
        if self.nc:
            dy[self.coupling] = nu
        return dx, dy


class _ElasticKKT:
    """Eliminates elastic variables before handing the system to ``inner``.

    A variable is elastic when it has no quadratic or equality entries and
    appears in exactly two inequality rows: its own bound row and one other
    row it relaxes. Eliminating it by hand gives that row the weight
    ``w_r a^2 w_b / (c^2 w_r + a^2 w_b)``, which a pivoting LU would form
    as a difference of two huge numbers once both rows are active.
    """

    def __init__(self, prob, make_inner, opts):
        n = prob.n
        H = prob.H.tocsc()
        A = prob.A_eq.tocsc()
        G = prob.A_in.tocsc()
        Gr = prob.A_in.tocsr()
        row_nnz = np.diff(Gr.indptr)
        cand = (np.diff(H.indptr) == 0) & (np.diff(A.indptr) == 0) & (np.diff(G.indptr) == 2)
        el, soft, bound, c, a = [], [], [], [], []
        for j in np.flatnonzero(cand):
            rows = G.indices[G.indptr[j]:G.indptr[j + 1]]
            vals = G.data[G.indptr[j]:G.indptr[j + 1]]
            single = row_nnz[rows] == 1
            if single.sum() != 1 or np.any(vals == 0):
                continue
            k = int(np.flatnonzero(single)[0])
            el.append(j)
            bound.append(rows[k])
            a.append(vals[k])
            soft.append(rows[1 - k])
            c.append(vals[1 - k])
        el = np.array(el, dtype=int)
        # one elastic variable per relaxed row keeps the reduction exact and simple
        if el.size and np.unique(soft).size != el.size:
            el = el[:0]
        keep = np.setdiff1d(np.arange(n), el)
        self.n, self.el, self.keep = n, el, keep
        self.soft = np.asarray(soft[:el.size], dtype=int)
        self.bound = np.asarray(bound[:el.size], dtype=int)
        self.c = np.asarray(c[:el.size], dtype=float)
        self.a = np.asarray(a[:el.size], dtype=float)
        if el.size == 0:
            self.inner = make_inner(prob)
        else:
            st = prob.structure
            if st is not None:
                st = QpStructure(np.asarray(st.var_group)[keep], np.asarray(st.var_stage)[keep],
                                 st.eq_group, st.eq_stage)
            self.Gk = Gr[:, keep].tocsr()
            red = QpProblem(prob.H[keep][:, keep], prob.q[keep], prob.A_eq[:, keep], prob.b_eq,
                            self.Gk, prob.b_in, structure=st)
            self.GkT = self.Gk.T.tocsr()
            self.inner = make_inner(red)
        self.nnz = getattr(self.inner, "nnz", 0)

    @property
    def reg(self):
        return self.inner.reg

    @reg.setter
    def reg(self, value):
        self.inner.reg = value

    def factor(self, w):
        if self.el.size == 0:
            return self.inner.factor(w)
        wr, wb = w[self.soft], w[self.bound]
        self.wr = wr
        self.D = self.c ** 2 * wr + self.a ** 2 * wb
        self.cw = self.c * wr / self.D
        wm = w.copy()
        wm[self.soft] = wr * (self.a ** 2 * wb) / self.D
        ok = self.inner.factor(wm)
        self.nnz = getattr(self.inner, "nnz", 0)
        return ok

    def solve(self, rx, ry):
        if self.el.size == 0:
            return self.inner.solve(rx, ry)
        re = rx[self.el]
        u = np.zeros(self.Gk.shape[0])
        u[self.soft] = self.cw * re
        dk, dy = self.inner.solve(rx[self.keep] - self.GkT @ u, ry)
        dx = np.empty(self.n)
        dx[self.keep] = dk
        dx[self.el] = (re - self.c * self.wr * (self.Gk @ dk)[self.soft]) / self.D
        return dx, dy


# ---------------------------------------------------------------------------
# Mehrotra predictor-corrector


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _factor_with_retries(kkt, w, opts):
    # small static shift always; refinement against the exact system removes its bias
    for k in range(7):
        kkt.reg = opts.static_reg * 100.0 ** k
        if kkt.factor(w):
            return True
    return False


def _ipm(prob, kkt, opts):
    H, q = prob.H, prob.q
    A, b = prob.A_eq, prob.b_eq
    G, h = prob.A_in, prob.b_in
    AT, GT = A.T.tocsr(), G.T.tocsr()
    mi = h.size
    times = []

    def report(status, x, y, z, s, it, res, accuracy="full"):
        rp, rd, mu = res
        return SolveReport(status=status, objective=prob.objective(x), iterations=it, iter_times=times,
                           primal_res=rp, dual_res=rd, comp_res=mu, y=y, z=z, s=s,
                           factor_nnz=getattr(kkt, "nnz", 0), accuracy=accuracy)

    # initial point: minimiser of 1/2 x'Hx + q'x + 1/2 ||Gx - h||^2 on Ax = b
    if not _factor_with_retries(kkt, np.ones(mi), opts):
        x = np.zeros(prob.n)
        return x, report("numerical", x, np.zeros(b.size), np.zeros(mi), np.ones(mi), 0,
                         (np.inf, np.inf, np.inf))
    x, y = kkt.solve(-q + GT @ h, b)
    s = np.maximum(1.0, h - G @ x)
    z = np.ones(mi)

    b_scale = np.abs(b).max(initial=0.0)
    h_scale = np.abs(h).max(initial=0.0)
    q_scale = np.abs(q).max(initial=0.0)
    res = (np.inf, np.inf, np.inf)
    best = closest = None
    stall = 0

    def inf_norm(v):
        return np.abs(v).max(initial=0.0)

    for it in range(opts.max_iter + 1):
        Hx, ATy, GTz = H @ x, AT @ y, GT @ z
        Ax, Gx = A @ x, G @ x
        rd = Hx + q + ATy + GTz
        rp = Ax - b
        ri = Gx + s - h
        mu = float(s @ z) / max(mi, 1)
        pobj = prob.objective(x)
        rp_n = max(inf_norm(rp), inf_norm(ri))
        rd_n = inf_norm(rd)
        res = (rp_n, rd_n, mu)
        if opts.verbose:
            print(f"{it:3d}  obj {pobj: .8e}  pres {rp_n:.2e}  dres {rd_n:.2e}  mu {mu:.2e}")
        # residuals relative to their tolerances; <= 1 everywhere means converged
        scales = (max(b_scale, h_scale, inf_norm(Ax), inf_norm(Gx)),
                  max(q_scale, inf_norm(Hx), inf_norm(ATy), inf_norm(GTz)), abs(pobj))
        merit = max(rp_n / (opts.abs_tol + opts.tol * scales[0]),
                    rd_n / (opts.abs_tol + opts.tol * scales[1]),
                    mu * mi / (opts.abs_tol + opts.tol * scales[2]))
        if merit <= 1.0:
            return x, report("optimal", x, y, z, s, it, res)
        loose = max(rp_n / (1 + scales[0]), rd_n / (1 + scales[1]), mu * mi / (1 + scales[2]))
        if closest is None or loose < closest[-1]:
            closest = (x, y, z, s, it, res, loose)
        if best is None or merit < 0.5 * best[0]:
            best = (merit, x, y, z, s, it, res, loose)
            stall = 0
        elif mu * mi <= opts.abs_tol + opts.tol * abs(pobj):
            # gap closed but residuals stuck at the accuracy floor
            stall += 1
        if it == opts.max_iter or stall >= 3:
            break
        zn = np.abs(z).sum() + np.abs(y).sum()
        if zn > 1e10 * (1 + q_scale) and rp_n > opts.abs_tol + opts.tol * max(b_scale, h_scale):
            cert = (b @ y + h @ z) / zn
            if cert < -1e-12 and np.abs(ATy + GTz).max(initial=0.0) / zn < 1e-6:
                return x, report("infeasible", x, y, z, s, it, res)

        t0 = time.perf_counter()
        w = z / s
        if not _factor_with_retries(kkt, w, opts):
            times.append(time.perf_counter() - t0)
            return x, report("numerical", x, y, z, s, it, res)

        def core(r1, r2, r3, r4):
            # H dx + A'dy + G'dz = r1, A dx = r2, G dx + ds = r3, Z ds + S dz = r4
            dx, dy = kkt.solve(r1 - GT @ ((r4 - z * r3) / s), r2)
            ds = r3 - G @ dx
            dz = (r4 - z * ds) / s
            return dx, dy, ds, dz

        def newton(rsz):
            r = (-rd, -rp, -ri, -rsz)
            d = core(*r)
            scale = max(np.abs(v).max(initial=0.0) for v in r) or 1.0
            err_prev = np.inf
            for _ in range(opts.refine_steps):
                dx, dy, ds, dz = d
                e = (r[0] - (H @ dx + AT @ dy + GT @ dz), r[1] - A @ dx,
                     r[2] - (G @ dx + ds), r[3] - (z * ds + s * dz))
                err = max(np.abs(v).max(initial=0.0) for v in e)
                if err <= 1e-14 * scale or err >= 0.5 * err_prev:
                    break
                err_prev = err
                c = core(*e)
                d = tuple(a + b for a, b in zip(d, c))
            return d

        dx, dy, ds, dz = newton(s * z)
        a_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / max(mi, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds, dz = newton(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        times.append(time.perf_counter() - t0)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            return x, report("numerical", x, y, z, s, it + 1, res)
    # no convergence: hand back the most accurate iterate seen
    _, x, y, z, s, it, res, loose = best
    if loose > opts.reduced_tol and closest[-1] <= opts.reduced_tol:
        x, y, z, s, it, res, loose = closest
    if loose <= opts.reduced_tol:
        return x, report("optimal", x, y, z, s, it, res, accuracy="reduced")
    return x, report("max_iter", x, y, z, s, it, res)


def solve_sparse_ipm(p, opts=None):
    """Solve ``p`` with the structured band/Schur KKT factorisation.

    Returns ``(x, SolveReport)``; the report carries the multipliers.
    """
    opts = opts or SolverOptions()
    return _ipm(p, _ElasticKKT(p, lambda r: _StructuredKKT(r, opts), opts), opts)


def solve_dense_reference(p, opts=None):
    """Same algorithm with a dense LU of the whole KKT matrix.

    Raises :class:`ProblemTooLarge` above ``opts.dense_max_vars`` variables.
    """
    opts = opts or SolverOptions()
    return _ipm(p, _ElasticKKT(p, lambda r: _DenseKKT(r, opts), opts), opts)
