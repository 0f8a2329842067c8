"""Dense primal-dual interior-point solver for standard-form conic programs.

Problem form::

    minimize    sum_j <C_j, X_j>
    subject to  sum_j <A_{r,j}, X_j> = b_r      r = 1..m
                X_j PSD (symmetric block) or X_j >= 0 (nonnegative block)

Dual::

    maximize b^T y   subject to   S_j = C_j - sum_r y_r A_{r,j}  in the cone.

The iteration is Mehrotra predictor-corrector with the HKM direction, run
inside the simplified homogeneous self-dual embedding so that infeasible
programs end with a Farkas certificate instead of diverging.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

PSD = "psd"
NONNEG = "nonneg"


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class ConicProgram:
    """Standard-form program.

    ``blocks`` lists ``(kind, n)`` pairs. For a PSD block ``c[j]`` is ``n x n``
    and ``a[j]`` is ``m x n x n``; for a nonnegative block they are ``(n,)``
    and ``(m, n)``. ``meta`` is free-form bookkeeping for the modeling layer.
    """

    blocks: list
    c: list
    a: list
    b: np.ndarray
    meta: dict = field(default_factory=dict)
    row_map: np.ndarray | None = None  # original row indices, set by presolve
    n_rows_original: int | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        m = self.b.shape[0]
        if not (len(self.blocks) == len(self.c) == len(self.a)):
            raise ValueError("blocks, c and a must have one entry per block")
        for j, (kind, n) in enumerate(self.blocks):
            c = np.asarray(self.c[j], dtype=float)
            a = np.asarray(self.a[j], dtype=float)
            if kind == PSD:
                if c.shape != (n, n) or a.shape != (m, n, n):
                    raise ValueError(f"block {j}: expected C {(n, n)} and A {(m, n, n)}, "
                                     f"got {c.shape} and {a.shape}")
                scale = 1e-12 * (1 + np.abs(c).max(initial=0) + np.abs(a).max(initial=0))
                if (np.abs(c - c.T).max(initial=0) > scale
                        or np.abs(a - a.transpose(0, 2, 1)).max(initial=0) > scale):
                    raise ValueError(f"block {j}: coefficient matrices must be symmetric")
                c = 0.5 * (c + c.T)
                a = 0.5 * (a + a.transpose(0, 2, 1))
            elif kind == NONNEG:
                if c.shape != (n,) or a.shape != (m, n):
                    raise ValueError(f"block {j}: expected c {(n,)} and A {(m, n)}, "
                                     f"got {c.shape} and {a.shape}")
            else:
                raise ValueError(f"unknown block kind {kind!r}")
            self.c[j] = c
            self.a[j] = a

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def degree(self) -> int:
        return sum(n for _, n in self.blocks)

    # linear maps -------------------------------------------------------
    def apply(self, X) -> np.ndarray:
        """``A(X)``: the m-vector of constraint inner products."""
        out = np.zeros(self.m)
        for (kind, _), a, x in zip(self.blocks, self.a, X):
            if kind == PSD:
                out += np.tensordot(a, x, axes=([1, 2], [0, 1]))
            else:
                out += a @ x
        return out

    def adjoint(self, y) -> list:
        """``A^T y`` blockwise."""
        out = []
        for (kind, _), a in zip(self.blocks, self.a):
            if kind == PSD:
                out.append(np.tensordot(y, a, axes=1))
            else:
                out.append(y @ a)
        return out

    def objective(self, X) -> float:
        return inner(self.c, X)

    def dense_rows(self) -> np.ndarray:
        """Constraint rows flattened into an ``m x N`` matrix."""
        parts = [a.reshape(self.m, -1) for a in self.a]
        return np.hstack(parts) if parts else np.zeros((self.m, 0))

    def subset_rows(self, rows) -> "ConicProgram":
        rows = np.asarray(rows, dtype=int)
        return ConicProgram(list(self.blocks), [c.copy() for c in self.c],
                            [a[rows] for a in self.a], self.b[rows], dict(self.meta))


def inner(U, V) -> float:
    return float(sum(np.vdot(u, v).real for u, v in zip(U, V)))


@dataclass
class ConicSolution:
    status: Status
    primal: list
    dual_y: np.ndarray
    dual_slack: list
    primal_obj: float
    dual_obj: float
    gap: float
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    certificate: object = None  # Farkas ray: y (primal infeasible) or X blocks (dual infeasible)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-9
    feas_tol: float = 1e-9
    infeas_tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98
    pivot_tol: float = 1e-10
    accept_tol: float = 1e-8  # fallback residual bound when progress stalls
    stall_iters: int = 15
    start: str = "norm"
    center_steps: int = 30


class InconsistentConstraints(Exception):
    """Presolve found ``b`` outside the range of the constraint rows."""

    def __init__(self, y):
        super().__init__("equality constraints are inconsistent")
        self.y = y


def presolve(prog: ConicProgram, pivot_tol: float = 1e-10) -> ConicProgram:
    """Drop linearly dependent equality rows.

    Uses column-pivoted QR on the row matrix. The returned program carries
    ``row_map`` (kept original row indices) so :func:`lift_dual` can restore a
    full-length ``y``. Inconsistent rows raise :class:`InconsistentConstraints`
    carrying a Farkas vector ``y`` with ``A^T y = 0`` and ``b^T y = 1``.
    """
    m = prog.m
    if m == 0:
        out = prog.subset_rows([])
        out.row_map = np.zeros(0, dtype=int)
        out.n_rows_original = 0
        return out
    rows = prog.dense_rows()
    row_scale = np.linalg.norm(rows, axis=1)
    zero = row_scale == 0
    if np.any(zero & (np.abs(prog.b) > 0)):
        y = np.zeros(m)
        r = int(np.flatnonzero(zero & (np.abs(prog.b) > 0))[0])
        y[r] = 1.0 / prog.b[r]
        raise InconsistentConstraints(y)
    _, R, piv = sla.qr(rows.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > pivot_tol * max(diag[0], 1.0))) if diag.size else 0
    kept = np.sort(piv[:rank])
    dropped = np.setdiff1d(np.arange(m), kept)
    if dropped.size:
        # express each dropped row through the kept ones and compare right-hand sides
        coef, *_ = np.linalg.lstsq(rows[kept].T, rows[dropped].T, rcond=None)
        b_pred = coef.T @ prog.b[kept]
        bad = np.abs(b_pred - prog.b[dropped]) > 1e-9 * (1 + np.abs(prog.b).max())
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            y = np.zeros(m)
            y[dropped[j]] = 1.0
            y[kept] = -coef[:, j]
            y /= prog.b @ y
            raise InconsistentConstraints(y)
    out = prog.subset_rows(kept)
    out.row_map = kept
    out.n_rows_original = m
    return out


def lift_dual(reduced: ConicProgram, y) -> np.ndarray:
    """Map a dual vector of a presolved program back to the original rows."""
    if reduced.row_map is None:
        return np.asarray(y, dtype=float)
    full = np.zeros(reduced.n_rows_original)
    full[reduced.row_map] = y
    return full


# --- interior-point internals -------------------------------------------
#
# Iterates are packed: PSD blocks of equal size are stacked into one
# ``(g, n, n)`` array so the linear algebra runs batched; all nonnegative
# blocks share one vector.

class _Vec:
    __slots__ = ("mats", "lp")

    def __init__(self, mats, lp):
        self.mats, self.lp = mats, lp

    def __add__(self, o):
        return _Vec([a + b for a, b in zip(self.mats, o.mats)], self.lp + o.lp)

    def __sub__(self, o):
        return _Vec([a - b for a, b in zip(self.mats, o.mats)], self.lp - o.lp)

    def __mul__(self, t):
        return _Vec([a * t for a in self.mats], self.lp * t)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dot(self, o) -> float:
        return float(sum(np.vdot(a, b) for a, b in zip(self.mats, o.mats)) + self.lp @ o.lp)

    def sym(self):
        return _Vec([0.5 * (a + a.transpose(0, 2, 1)) for a in self.mats], self.lp)


def _bsym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


class _Packed:
    """A ConicProgram regrouped for batched linear algebra."""

    def __init__(self, prog: ConicProgram):
        self.prog = prog
        self.m = prog.m
        sizes = sorted({n for kind, n in prog.blocks if kind == PSD})
        self.groups = []  # (n, block indices)
        self.A, self.C = [], []
        for n in sizes:
            idx = [j for j, (kind, nj) in enumerate(prog.blocks) if kind == PSD and nj == n]
            self.groups.append((n, idx))
            self.A.append(np.stack([prog.a[j] for j in idx]))  # (g, m, n, n)
            self.C.append(np.stack([prog.c[j] for j in idx]))
        self.Aflat = [a.reshape(a.shape[0], self.m, -1) for a in self.A]
        self.lp_idx = [j for j, (kind, _) in enumerate(prog.blocks) if kind == NONNEG]
        self.lp_sizes = [prog.blocks[j][1] for j in self.lp_idx]
        if self.lp_idx:
            self.Alp = np.hstack([prog.a[j] for j in self.lp_idx])
            clp = np.concatenate([prog.c[j] for j in self.lp_idx])
        else:
            self.Alp = np.zeros((self.m, 0))
            clp = np.zeros(0)
        self.c = _Vec(self.C, clp)
        self.b = prog.b
        self.degree = prog.degree

    def apply(self, X: _Vec) -> np.ndarray:
        out = self.Alp @ X.lp
        for a, x in zip(self.Aflat, X.mats):
            out = out + (a @ x.reshape(x.shape[0], -1, 1)).sum(axis=0)[:, 0]
        return out

    def adjoint(self, y) -> _Vec:
        return _Vec([(y @ a).reshape(x.shape) for a, x in zip(self.Aflat, self.C)],
                    y @ self.Alp)

    def identity(self, rho) -> _Vec:
        return _Vec([rho * np.broadcast_to(np.eye(n), (len(idx), n, n)).copy()
                     for n, idx in self.groups], np.full(self.Alp.shape[1], float(rho)))

    def unpack(self, X: _Vec) -> list:
        out = [None] * len(self.prog.blocks)
        for (n, idx), mats in zip(self.groups, X.mats):
            for j, mat in zip(idx, mats):
                out[j] = mat.copy()
        pos = 0
        for j, n in zip(self.lp_idx, self.lp_sizes):
            out[j] = X.lp[pos:pos + n].copy()
            pos += n
        return out

    def pack(self, blocks) -> _Vec:
        mats = [np.stack([blocks[j] for j in idx]) for _, idx in self.groups]
        lp = (np.concatenate([blocks[j] for j in self.lp_idx]) if self.lp_idx else np.zeros(0))
        return _Vec(mats, lp)


def _inv_factor(x):
    """``F`` with ``F x F^T = I``; near-singular blocks fall back to a floored eigensolve."""
    try:
        return np.linalg.inv(np.linalg.cholesky(x))
    except np.linalg.LinAlgError:
        d, U = np.linalg.eigh(x)
        floor = 1e-15 * np.abs(d).max(axis=-1, keepdims=True)
        return np.swapaxes(U, -1, -2) / np.sqrt(np.maximum(d, floor))[..., None]


def _max_step(X: _Vec, dX: _Vec) -> float:
    """Largest alpha with ``X + alpha dX`` in the cone (``inf`` if unbounded)."""
    alpha = np.inf
    for x, dx in zip(X.mats, dX.mats):
        Li = _inv_factor(x)
        lam = np.linalg.eigvalsh(_bsym(Li @ dx @ np.swapaxes(Li, -1, -2)))[:, 0].min()
        if lam < 0:
            alpha = min(alpha, -1.0 / lam)
    neg = dX.lp < 0
    if np.any(neg):
        alpha = min(alpha, float(np.min(-X.lp[neg] / dX.lp[neg])))
    return alpha


class _Newton:
    """Factorized HKM Newton system at one iterate.

    With ``tau=None`` the homogenizing variables are dropped and the system is
    the plain infeasible-start one.
    """

    def __init__(self, pk: _Packed, X: _Vec, S: _Vec, tau=None, kappa=None):
        self.pk, self.X, self.tau, self.kappa = pk, X, tau, kappa
        sinv = [_bsym(np.linalg.inv(s)) for s in S.mats]
        self.Sinv = _Vec(sinv, 1.0 / S.lp)
        M = (pk.Alp * (X.lp / S.lp)) @ pk.Alp.T
        for a, af, x, si in zip(pk.A, pk.Aflat, X.mats, sinv):
            t = (x[:, None] @ a @ si[:, None]).reshape(af.shape)
            M += (af @ np.swapaxes(t, 1, 2)).sum(axis=0)
        M = 0.5 * (M + M.T)
        self.chol = None
        self.M = M
        if pk.m:
            try:
                self.chol = sla.cho_factor(M)
            except np.linalg.LinAlgError:
                pass
        if tau is None:
            return
        # sensitivity of the direction to dtau: H = sym(X C S^-1)
        self.H = self.xvs(pk.c)
        self.u = pk.apply(self.H)
        self.cH = pk.c.dot(self.H)
        self.q = self._msolve(self.u + pk.b)
        self.denom = (pk.b - self.u) @ self.q + self.cH + kappa / tau

    def xvs(self, V: _Vec) -> _Vec:
        """``sym(X V S^-1)``."""
        return _Vec([_bsym(x @ v @ si) for x, v, si in zip(self.X.mats, V.mats, self.Sinv.mats)],
                    self.X.lp * V.lp * self.Sinv.lp)

    def _msolve(self, r):
        if not self.pk.m:
            return np.zeros(0)
        if self.chol is not None:
            return sla.cho_solve(self.chol, r)
        return np.linalg.lstsq(self.M, r, rcond=None)[0]

    def solve(self, rp, rd: _Vec, rg, Rc: _Vec, Rt):
        """Solve the linearized system for ``(dX, dy, dS, dtau, dkappa)``.

        Equations::

            A dX - b dtau = rp
            A^T dy + dS - C dtau = rd
            b^T dy - <C, dX> - dkappa = rg
            dX + sym(X dS S^-1) = Rc
            kappa dtau + tau dkappa = Rt
        """
        pk = self.pk
        G = Rc - self.xvs(rd)
        r = rp - pk.apply(G)
        p = self._msolve(r)
        # refine against the unfactored operator; M is badly conditioned near the end
        for _ in range(REFINE_STEPS if pk.m else 0):
            p = p + self._msolve(r - pk.apply(self.xvs(pk.adjoint(p))))
        if self.tau is None:
            aty = pk.adjoint(p)
            return G + self.xvs(aty), p, rd - aty, 0.0, 0.0
        rhs = rg + pk.c.dot(G) + Rt / self.tau - (pk.b - self.u) @ p
        dtau = rhs / self.denom
        dy = p + dtau * self.q
        aty = pk.adjoint(dy)
        dS = rd - aty + dtau * pk.c
        dX = G + self.xvs(aty) - dtau * self.H
        dkappa = (Rt - self.kappa * dtau) / self.tau
        return dX, dy, dS, dtau, dkappa


def _check_primal_ray(prog, y, tol=1e-7):
    """True if ``b^T y = 1`` and every block of ``A^T y`` is <= tol (cone sense)."""
    for (kind, _), t in zip(prog.blocks, prog.adjoint(y)):
        top = np.linalg.eigvalsh(_sym(t))[-1] if kind == PSD else t.max(initial=-np.inf)
        if top > tol:
            return False
    return abs(prog.b @ y - 1.0) <= tol


def _check_dual_ray(prog, X, tol=1e-7):
    """True if ``<C, X> = -1``, ``A(X) ~ 0`` and ``X`` in the cone."""
    for (kind, _), x in zip(prog.blocks, X):
        low = np.linalg.eigvalsh(_sym(x))[0] if kind == PSD else x.min(initial=np.inf)
        if low < -tol:
            return False
    return (np.linalg.norm(prog.apply(X), np.inf) <= tol
            and abs(prog.objective(X) + 1.0) <= tol)


def _sym(M):
    return 0.5 * (M + M.T)


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution:
    """Solve ``prog``; see :class:`ConicSolution` for what comes back.

    The infeasible-start iteration runs first. If it neither converges nor
    certifies infeasibility, the homogeneous embedding is tried and the
    better of the two answers is returned.
    """
    opts = opts or SolverOptions()
    try:
        red = presolve(prog, opts.pivot_tol)
    except InconsistentConstraints as exc:
        zeros = _zero_blocks(prog)
        return ConicSolution(Status.PRIMAL_INFEASIBLE, zeros, np.zeros(prog.m), zeros,
                             np.nan, np.nan, np.nan, certificate=exc.y,
                             message="inconsistent equality rows")
    sol = _ipm(red, opts)
    if sol.status in (Status.MAX_ITERATIONS, Status.NUMERICAL_FAILURE):
        alt = _hsd(red, opts)
        if alt.status != Status.MAX_ITERATIONS and (
                alt.status != Status.NUMERICAL_FAILURE
                or max(alt.primal_residual, alt.dual_residual)
                < max(sol.primal_residual, sol.dual_residual)):
            alt.iterations += sol.iterations
            sol = alt
    sol.dual_y = lift_dual(red, sol.dual_y)
    if sol.status == Status.PRIMAL_INFEASIBLE:
        sol.certificate = lift_dual(red, sol.certificate)
    return sol


def _measures(pk, X, y, S, bnorm, cnorm):
    pres = np.linalg.norm(pk.apply(X) - pk.b) / (1 + bnorm)
    dr = pk.c - pk.adjoint(y) - S
    dres = np.sqrt(dr.dot(dr)) / (1 + cnorm)
    pobj, dobj = pk.c.dot(X), float(pk.b @ y)
    relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return pres, dres, pobj, dobj, relgap


def _acceptable(opts, pres, dres, pobj, dobj, relgap=None) -> bool:
    """Inside the documented optimality bounds (looser than the stopping rule)."""
    return (pres <= opts.accept_tol and dres <= opts.accept_tol
            and abs(pobj - dobj) <= 10 * opts.accept_tol * (1 + abs(pobj)))


def _finish(pk, opts, status, message, best, it):
    _, X, y, S, pobj, dobj, pres, dres = best
    if status != Status.OPTIMAL:
        if _acceptable(opts, pres, dres, pobj, dobj):
            # stalled short of the target but inside the documented optimality bounds
            message = f"accepted at relaxed tolerance after: {message or status.value}"
            status = Status.OPTIMAL
        elif status == Status.MAX_ITERATIONS:
            message = f"iteration cap {opts.max_iter} reached; best iterate attached"
    log.debug("solve: %s after %d iterations (pobj %.10g, dobj %.10g)", status.value, it, pobj, dobj)
    return ConicSolution(status, pk.unpack(X), y, pk.unpack(S), pobj, dobj,
                         abs(pobj - dobj), it, pres, dres, message=message)


def _start(pk, opts):
    b = pk.b
    cnorm = np.sqrt(pk.c.dot(pk.c))
    if opts.start == "norm":
        rho = 1.0 + max(np.abs(b).max(initial=0.0), cnorm)
        return pk.identity(rho), pk.identity(rho)
    # row-norm scaled start
    n = pk.degree
    rows = np.sqrt(sum((a ** 2).sum(axis=(0, 2, 3)) for a in pk.A) + (pk.Alp ** 2).sum(axis=1))
    xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(b)) / (1 + rows), initial=0.0))
    eta = max(10.0, np.sqrt(n), rows.max(initial=0.0), cnorm)
    return pk.identity(xi), pk.identity(eta)


def _ipm(prog: ConicProgram, opts: SolverOptions) -> ConicSolution:
    """Infeasible-start path following with separate primal and dual steps."""
    pk = _Packed(prog)
    n = pk.degree
    b, C = pk.b, pk.c
    bnorm = np.linalg.norm(b)
    cnorm = np.sqrt(C.dot(C))
    X, S = _start(pk, opts)
    y = np.zeros(pk.m)

    best, best_it = None, 0
    status, message = Status.MAX_ITERATIONS, ""
    it = 0
    for it in range(opts.max_iter + 1):
        pres, dres, pobj, dobj, relgap = _measures(pk, X, y, S, bnorm, cnorm)
        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            best, best_it = (merit, X, y, S, pobj, dobj, pres, dres), it
        elif it - best_it > opts.stall_iters:
            status, message = Status.NUMERICAL_FAILURE, "no progress"
            break
        if pres <= opts.feas_tol and dres <= opts.feas_tol and relgap <= opts.gap_tol:
            status = Status.OPTIMAL
            break
        if dobj > 0 and dobj > 1e3 * (1 + abs(pobj)):
            cert = y / dobj
            if _check_primal_ray(prog, cert):
                return _infeasible(pk, Status.PRIMAL_INFEASIBLE, cert, it, X, y, S)
        if pobj < 0 and -pobj > 1e3 * (1 + abs(dobj)):
            cert = pk.unpack(X * (-1 / pobj))
            if _check_dual_ray(prog, cert):
                return _infeasible(pk, Status.DUAL_INFEASIBLE, cert, it, X, y, S)
        if max(np.abs(y).max(initial=0), abs(pobj)) > 1e14:
            status, message = Status.NUMERICAL_FAILURE, "iterates diverged"
            break
        if it == opts.max_iter:
            break

        mu = X.dot(S) / n
        rp = b - pk.apply(X)
        rd = C - pk.adjoint(y) - S
        try:
            newton = _Newton(pk, X, S)
            dXa, _, dSa, _, _ = newton.solve(rp, rd, 0.0, -X, 0.0)
            ap = min(1.0, _max_step(X, dXa))
            ad = min(1.0, _max_step(S, dSa))
            mu_aff = (X + ap * dXa).dot(S + ad * dSa) / n
            sigma = min(1.0, (mu_aff / mu) ** 3)
            second = _Vec([_bsym(dx @ ds @ si) for dx, ds, si
                           in zip(dXa.mats, dSa.mats, newton.Sinv.mats)],
                          dXa.lp * dSa.lp * newton.Sinv.lp)
            Rc = sigma * mu * newton.Sinv - X - second
            dX, dy, dS, _, _ = newton.solve(rp, rd, 0.0, Rc, 0.0)
            ap = min(1.0, opts.step_fraction * _max_step(X, dX))
            ad = min(1.0, opts.step_fraction * _max_step(S, dS))
        except np.linalg.LinAlgError as exc:
            status, message = Status.NUMERICAL_FAILURE, f"linear algebra failure: {exc}"
            break
        if min(ap, ad) < 1e-12:
            status, message = Status.NUMERICAL_FAILURE, "step length collapsed"
            break
        X = (X + ap * dX).sym()
        y = y + ad * dy
        S = (S + ad * dS).sym()
    if status != Status.OPTIMAL:
        X, y, S = best[1:4]
    if opts.center_steps and _acceptable(opts, *_measures(pk, X, y, S, bnorm, cnorm)):
        X, y, S = _recenter(pk, opts, X, y, S, bnorm, cnorm)
        pres, dres, pobj, dobj, _ = _measures(pk, X, y, S, bnorm, cnorm)
        best = (0.0, X, y, S, pobj, dobj, pres, dres)
    return _finish(pk, opts, status, message, best, it)


def _comp(X: _Vec, S: _Vec) -> float:
    """``||X S||_F`` summed over blocks."""
    return float(sum(np.linalg.norm(x @ s) for x, s in zip(X.mats, S.mats))
                 + np.linalg.norm(X.lp * S.lp))


CENTER_SIGMA = 0.5
CENTER_STOP = 1e-9  # relative ||X S|| at which the polish stops
REFINE_STEPS = 2


def _recenter(pk, opts, X, y, S, bnorm, cnorm):
    """Short-step polish after convergence.

    The predictor-corrector leaves ``X`` and ``S`` only loosely aligned, so
    ``||X S||`` can sit near ``sqrt(mu)`` although ``<X, S>`` is tiny. Each
    step targets ``X S = sigma mu I``: pure centering (``sigma = 1``) after a
    short step, ``CENTER_SIGMA`` after a long one. The product is not monotone
    along these steps, so the loop runs while the iterate stays acceptable and
    returns the smallest-product iterate that also meets the stopping bounds
    of the starting point.
    """
    n = pk.degree
    start = _measures(pk, X, y, S, bnorm, cnorm)
    p_cap = max(opts.feas_tol, start[0])
    d_cap = max(opts.feas_tol, start[1])
    g_cap = max(opts.gap_tol, start[4])
    best = (_comp(X, S), X, y, S)
    sigma = 1.0
    for _ in range(opts.center_steps):
        if best[0] <= CENTER_STOP * (1.0 + abs(pk.c.dot(best[1]))):
            break
        mu = X.dot(S) / n
        try:
            newton = _Newton(pk, X, S)
            Rc = sigma * mu * newton.Sinv - X
            dX, dy, dS, _, _ = newton.solve(pk.b - pk.apply(X), pk.c - pk.adjoint(y) - S,
                                            0.0, Rc, 0.0)
            ap = min(1.0, opts.step_fraction * _max_step(X, dX))
            ad = min(1.0, opts.step_fraction * _max_step(S, dS))
        except np.linalg.LinAlgError:
            break
        X, y, S = (X + ap * dX).sym(), y + ad * dy, (S + ad * dS).sym()
        sigma = CENTER_SIGMA if min(ap, ad) > 0.9 else 1.0
        new = _measures(pk, X, y, S, bnorm, cnorm)
        if not _acceptable(opts, *new[:4]):
            break
        if new[0] > p_cap or new[1] > d_cap or new[4] > g_cap:
            continue
        comp = _comp(X, S)
        if comp < best[0]:
            best = (comp, X, y, S)
    return best[1:]


def _zero_blocks(prog):
    return [np.zeros((n, n)) if kind == PSD else np.zeros(n) for kind, n in prog.blocks]


def _hsd(prog: ConicProgram, opts: SolverOptions) -> ConicSolution:
    """Homogeneous self-dual variant; common primal/dual step."""
    pk = _Packed(prog)
    nu = pk.degree + 1
    b, C = pk.b, pk.c
    bnorm = np.linalg.norm(b)
    cnorm = np.sqrt(C.dot(C))
    rho = 1.0 + max(np.abs(b).max(initial=0.0), cnorm)
    X = pk.identity(rho)
    S = pk.identity(rho)
    y = np.zeros(pk.m)
    tau, kappa = 1.0, 1.0

    best, best_it = None, 0
    status, message = Status.MAX_ITERATIONS, ""
    it = 0
    for it in range(opts.max_iter + 1):
        # convergence is judged on the de-homogenized iterate
        Xh, yh, Sh = X * (1 / tau), y / tau, S * (1 / tau)
        pres, dres, pobj, dobj, relgap = _measures(pk, Xh, yh, Sh, bnorm, cnorm)
        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            best = (merit, Xh, yh, Sh, pobj, dobj, pres, dres)
            best_it = it
        elif it - best_it > opts.stall_iters:
            status, message = Status.NUMERICAL_FAILURE, "no progress"
            break
        if pres <= opts.feas_tol and dres <= opts.feas_tol and relgap <= opts.gap_tol:
            status = Status.OPTIMAL
            break
        if tau < kappa:
            by = float(b @ y)
            if by > 0:
                cert = y / by
                if _check_primal_ray(prog, cert):
                    return _infeasible(pk, Status.PRIMAL_INFEASIBLE, cert, it, Xh, yh, Sh)
            cx = C.dot(X)
            if cx < 0:
                cert = pk.unpack(X * (-1 / cx))
                if _check_dual_ray(prog, cert):
                    return _infeasible(pk, Status.DUAL_INFEASIBLE, cert, it, Xh, yh, Sh)
        if it == opts.max_iter:
            break

        mu = (X.dot(S) + tau * kappa) / nu
        rp = b * tau - pk.apply(X)
        rd = C * tau - pk.adjoint(y) - S
        rg = -(float(b @ y) - C.dot(X) - kappa)
        try:
            newton = _Newton(pk, X, S, tau, kappa)
            # predictor
            dXa, dya, dSa, dta, dka = newton.solve(rp, rd, rg, -X, -tau * kappa)
            alpha = _step(X, S, tau, kappa, dXa, dSa, dta, dka, 1.0)
            mu_aff = ((X + alpha * dXa).dot(S + alpha * dSa)
                      + (tau + alpha * dta) * (kappa + alpha * dka)) / nu
            sigma = min(1.0, (mu_aff / mu) ** 3)
            eta = 1.0 - sigma
            # corrector
            second = _Vec([_bsym(dx @ ds @ si) for dx, ds, si
                           in zip(dXa.mats, dSa.mats, newton.Sinv.mats)],
                          dXa.lp * dSa.lp * newton.Sinv.lp)
            Rc = sigma * mu * newton.Sinv - X - second
            Rt = sigma * mu - tau * kappa - dta * dka
            dX, dy, dS, dt, dk = newton.solve(eta * rp, eta * rd, eta * rg, Rc, Rt)
            alpha = _step(X, S, tau, kappa, dX, dS, dt, dk, opts.step_fraction)
        except np.linalg.LinAlgError as exc:
            status, message = Status.NUMERICAL_FAILURE, f"linear algebra failure: {exc}"
            break
        if not np.isfinite(alpha) or alpha < 1e-12:
            status, message = Status.NUMERICAL_FAILURE, "step length collapsed"
            break
        X = (X + alpha * dX).sym()
        S = (S + alpha * dS).sym()
        y = y + alpha * dy
        tau += alpha * dt
        kappa += alpha * dk

    return _finish(pk, opts, status, message, best, it)


def _step(X, S, tau, kappa, dX, dS, dt, dk, frac):
    a = min(_max_step(X, dX), _max_step(S, dS))
    if dt < 0:
        a = min(a, -tau / dt)
    if dk < 0:
        a = min(a, -kappa / dk)
    return min(1.0, frac * a)


def _infeasible(pk, status, cert, it, X, y, S):
    return ConicSolution(status, pk.unpack(X), y, pk.unpack(S), np.nan, np.nan, np.nan, it,
                         certificate=cert, message="Farkas certificate verified to 1e-7")


def dump_program(prog: ConicProgram, path) -> None:
    """Write nonzeros as ``constraint block row col value`` lines.

    Constraint index 0 is the objective; rows are 1-based; right-hand sides
    use block 0. Nonnegative blocks use ``row == col``. Only the upper
    triangle of PSD blocks is written.
    """
    lines = [f"# m={prog.m} blocks=" + ",".join(f"{k}:{n}" for k, n in prog.blocks)]

    def emit(r, j, mat, kind):
        if kind == PSD:
            iu, ju = np.nonzero(np.triu(mat))
            for p, q in zip(iu, ju):
                lines.append(f"{r} {j + 1} {p + 1} {q + 1} {mat[p, q]:.17g}")
        else:
            for p in np.flatnonzero(mat):
                lines.append(f"{r} {j + 1} {p + 1} {p + 1} {mat[p]:.17g}")

    for j, (kind, _) in enumerate(prog.blocks):
        emit(0, j, prog.c[j], kind)
    for r in range(prog.m):
        if prog.b[r] != 0:
            lines.append(f"{r + 1} 0 1 1 {prog.b[r]:.17g}")
        for j, (kind, _) in enumerate(prog.blocks):
            emit(r + 1, j, prog.a[j][r], kind)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
