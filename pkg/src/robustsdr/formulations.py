"""Conic programs built from a :class:`ProblemInstance`.

* robust SDR: minimize total power subject to ``Psi_i(W, lambda_i) >= 0``
* its dual, written out by hand in the ``A_i`` / ``Y_i`` variables
* inner power minimization for fixed channel covariances ``R_i``
* the same inner problem with covariances taken from a dual certificate
* the per-user worst-case-error SDR over the set ``{V >= 0, tr V <= 1 + r^2, V[-1,-1] = 1}``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProblemInstance, as_hermitian, min_eig
from .model import ProgramBuilder, dual_value, hermitian_basis, objective_value, value
from .sdp_solver import ConicProgram, ConicSolution, SolverOptions, Status, solve

PSD_TOL = 1e-7


class SolveError(RuntimeError):
    """A solve ended without an optimal status."""

    def __init__(self, what: str, sol: ConicSolution):
        super().__init__(f"{what}: solver status {sol.status.value}"
                         + (f" ({sol.message})" if sol.message else ""))
        self.solution = sol
        self.status = sol.status


def _check_dims(inst: ProblemInstance, mats, n: int, what: str):
    mats = [np.asarray(m, dtype=complex) for m in mats]
    if len(mats) != inst.k:
        raise ValueError(f"{what}: expected {inst.k} matrices, got {len(mats)}")
    for m in mats:
        if m.shape != (n, n):
            raise ValueError(f"{what}: expected {n}x{n} matrices, got {m.shape}")
    return mats


def interference_matrix(inst: ProblemInstance, W, i: int) -> np.ndarray:
    """``W_i / gamma_i - sum_{k != i} W_k``."""
    W = _check_dims(inst, W, inst.nt, "W")
    total = sum(W)
    return (1.0 + 1.0 / inst.sinr_target[i]) * W[i] - total


def build_psi(inst: ProblemInstance, W, i: int, lam: float) -> np.ndarray:
    L = inst.lift(i)
    Q = interference_matrix(inst, W, i)
    corner = np.zeros((inst.nt + 1, inst.nt + 1))
    corner[:inst.nt, :inst.nt] = lam * np.eye(inst.nt)
    corner[-1, -1] = -inst.noise[i] - lam * inst.radius[i] ** 2
    return as_hermitian(L.conj().T @ Q @ L + corner, check=False)


def robust_slack(inst: ProblemInstance, W, i: int) -> float:
    """``hbar_i^H Q_i hbar_i - sigma_i^2``, the whole constraint when ``r_i = 0``."""
    h = inst.hbar[i]
    return float(np.vdot(h, interference_matrix(inst, W, i) @ h).real) - inst.noise[i]


def psi_violation(inst: ProblemInstance, W, i: int, lam: float) -> float:
    """Amount by which user ``i``'s robust constraint fails (0 when it holds).

    With ``r_i = 0`` no finite ``lambda`` makes ``Psi_i`` PSD on the boundary,
    so the exact scalar constraint is checked instead.
    """
    if inst.radius[i] == 0:
        return max(0.0, -robust_slack(inst, W, i))
    return max(0.0, -min_eig(build_psi(inst, W, i, lam)))


def build_y(inst: ProblemInstance, A, i: int) -> np.ndarray:
    A = _check_dims(inst, A, inst.nt + 1, "A")
    Y = np.eye(inst.nt, dtype=complex)
    for k in range(inst.k):
        L = inst.lift(k)
        term = L @ A[k] @ L.conj().T
        Y += -term / inst.sinr_target[i] if k == i else term
    return as_hermitian(Y, check=False)


def _corner(n: int) -> np.ndarray:
    e = np.zeros((n, n))
    e[-1, -1] = 1.0
    return e


# --- result types ---------------------------------------------------------

@dataclass
class RobustDesign:
    W: list
    lam: np.ndarray

    @property
    def objective(self) -> float:
        return float(sum(np.trace(w).real for w in self.W))

    def violations(self, inst: ProblemInstance) -> dict:
        return {
            "W_psd": max(0.0, *(-min_eig(w) for w in self.W)),
            "lambda_nonneg": max(0.0, float(-self.lam.min())),
            "psi_psd": max(0.0, *(psi_violation(inst, self.W, i, self.lam[i])
                                  for i in range(inst.k))),
        }


@dataclass
class DualCertificate:
    A: list

    @property
    def corners(self) -> np.ndarray:
        return np.array([a[-1, -1].real for a in self.A])

    def objective(self, inst: ProblemInstance) -> float:
        return float(inst.noise @ self.corners)

    def violations(self, inst: ProblemInstance) -> dict:
        r2 = inst.radius ** 2
        return {
            "A_psd": max(0.0, *(-min_eig(a) for a in self.A)),
            "trace": max(0.0, *(np.trace(a).real - (1 + r2[i]) * a[-1, -1].real
                                for i, a in enumerate(self.A))),
            "Y_psd": max(0.0, *(-min_eig(build_y(inst, self.A, i)) for i in range(inst.k))),
            "corner_positive": max(0.0, float(-self.corners.min())),
        }


@dataclass
class MaxMinSolution:
    V: list
    mu: np.ndarray
    W: list | None = None


# --- builders ---------------------------------------------------------------

def build_wsp_sdr(inst: ProblemInstance) -> ConicProgram:
    """Robust SDR. Users with ``r_i = 0`` get the scalar constraint
    ``hbar_i^H Q_i hbar_i - s_i = sigma_i^2`` and no multiplier, since their
    LMI form only holds in the limit ``lambda_i -> inf``.
    """
    nt, k = inst.nt, inst.k
    pb = ProgramBuilder()
    W = [pb.herm(nt) for _ in range(k)]
    P = [pb.herm(nt + 1) if inst.radius[i] > 0 else pb.scalar() for i in range(k)]
    lam = [pb.scalar() if inst.radius[i] > 0 else None for i in range(k)]
    shape = np.zeros((nt + 1, nt + 1))
    shape[:nt, :nt] = np.eye(nt)
    basis = hermitian_basis(nt + 1)
    for i in range(k):
        L = inst.lift(i)
        shape[-1, -1] = -inst.radius[i] ** 2
        if lam[i] is None:
            rows = [(_corner(nt + 1), [(P[i], 1.0)])]
        else:
            rows = [(E, [(P[i], E), (lam[i], -np.vdot(E, shape).real)]) for E in basis]
        for E, terms in rows:
            back = L @ E @ L.conj().T
            for j in range(k):
                terms.append((W[j], -back / inst.sinr_target[i] if j == i else back))
            pb.add_row(terms, -inst.noise[i] * E[-1, -1].real)
    pb.minimize([(w, np.eye(nt)) for w in W])
    return pb.build(kind="wsp_sdr", W=W, P=P, lam=lam)


def build_dual_sdp(inst: ProblemInstance) -> ConicProgram:
    """Hand-built dual. For ``r_i = 0`` the trace bound forces ``A_i`` onto its
    corner, so ``A_i = a_i e e^T`` with a scalar ``a_i >= 0``.
    """
    nt, k = inst.nt, inst.k
    pb = ProgramBuilder()
    A = [pb.herm(nt + 1) if inst.radius[i] > 0 else pb.scalar() for i in range(k)]
    Y = [pb.herm(nt) for _ in range(k)]
    slack = [pb.scalar() if inst.radius[i] > 0 else None for i in range(k)]
    for i in range(k):
        for E in hermitian_basis(nt):
            terms = [(Y[i], E)]
            for j in range(k):
                L = inst.lift(j)
                fwd = L.conj().T @ E @ L
                if slack[j] is None:
                    fwd = fwd[-1, -1].real
                terms.append((A[j], fwd / inst.sinr_target[i] if j == i else -fwd))
            pb.add_row(terms, np.trace(E).real)
        if slack[i] is not None:
            shape = (1 + inst.radius[i] ** 2) * _corner(nt + 1) - np.eye(nt + 1)
            pb.add_row([(A[i], shape), (slack[i], -1.0)], 0.0)
    pb.maximize([(A[i], inst.noise[i] * (_corner(nt + 1) if slack[i] is not None else 1.0))
                 for i in range(k)])
    return pb.build(kind="dual_sdp", A=A, Y=Y, slack=slack)


def build_inner_sdp(inst: ProblemInstance, R, rhs=None, objective=None) -> ConicProgram:
    """Power minimization with ``tr((W_i/gamma_i - sum_{k!=i} W_k) R_i) >= rhs_i``.

    ``rhs`` defaults to the noise powers; ``objective`` optionally replaces the
    identity weight on each ``W_i`` (used by the uniqueness probe).
    """
    R = _check_dims(inst, R, inst.nt, "R")
    rhs = inst.noise if rhs is None else np.asarray(rhs, dtype=float)
    nt, k = inst.nt, inst.k
    pb = ProgramBuilder()
    W = [pb.herm(nt) for _ in range(k)]
    s = [pb.scalar() for _ in range(k)]
    for i in range(k):
        Ri = as_hermitian(R[i], check=False)
        terms = [(W[j], Ri / inst.sinr_target[i] if j == i else -Ri) for j in range(k)]
        terms.append((s[i], -1.0))
        pb.add_row(terms, rhs[i])
    weights = objective if objective is not None else [np.eye(nt)] * k
    pb.minimize(list(zip(W, weights)))
    return pb.build(kind="inner_sdp", W=W, slack=s)


def covariance_from_certificate(inst: ProblemInstance, A, i: int) -> np.ndarray:
    L = inst.lift(i)
    return as_hermitian(L @ A[i] @ L.conj().T, check=False)


def build_fixed_certificate_inner(inst: ProblemInstance, cert: DualCertificate) -> ConicProgram:
    A = _check_dims(inst, cert.A, inst.nt + 1, "A")
    corners = cert.corners
    if np.any(corners <= 1e-10):
        raise ValueError("certificate has a nonpositive corner entry")
    R = [covariance_from_certificate(inst, A, i) for i in range(inst.k)]
    return build_inner_sdp(inst, R, rhs=inst.noise * corners)


def build_error_sdr(inst: ProblemInstance, W, i: int) -> ConicProgram:
    nt = inst.nt
    L = inst.lift(i)
    Q = interference_matrix(inst, W, i)
    pb = ProgramBuilder()
    V = pb.herm(nt + 1)
    t = pb.scalar()
    pb.add_row([(V, np.eye(nt + 1)), (t, 1.0)], 1 + inst.radius[i] ** 2)
    pb.add_row([(V, _corner(nt + 1))], 1.0)
    pb.minimize([(V, as_hermitian(L.conj().T @ Q @ L, check=False))])
    return pb.build(kind="error_sdr", V=V, slack=t)


# --- solve-and-decode helpers ------------------------------------------------

def _as_block(v, nt: int) -> np.ndarray:
    """Scalar corner variables become ``v e e^T``."""
    if np.ndim(v) == 0:
        return v * _corner(nt + 1).astype(complex)
    return v


def _run(prog, opts, what):
    sol = solve(prog, opts)
    if sol.status != Status.OPTIMAL:
        raise SolveError(what, sol)
    return sol


def solve_wsp_sdr(inst: ProblemInstance, opts: SolverOptions | None = None):
    """Solve the robust SDR.

    Returns ``(design, certificate, solution)``; the certificate is read off the
    solver's dual slack on the ``Psi_i`` blocks.
    """
    prog = build_wsp_sdr(inst)
    sol = _run(prog, opts, "robust SDR")
    meta = prog.meta
    design = RobustDesign([value(sol, w) for w in meta["W"]],
                          np.array([0.0 if l is None else value(sol, l) for l in meta["lam"]]))
    cert = DualCertificate([_as_block(dual_value(sol, p), inst.nt) for p in meta["P"]])
    return design, cert, sol


def solve_dual_sdp(inst: ProblemInstance, opts: SolverOptions | None = None):
    """Solve the hand-built dual. Returns ``(certificate, objective, solution)``."""
    prog = build_dual_sdp(inst)
    sol = _run(prog, opts, "dual SDP")
    cert = DualCertificate([_as_block(value(sol, a), inst.nt) for a in prog.meta["A"]])
    return cert, objective_value(prog, sol)[0], sol


def solve_inner_sdp(inst: ProblemInstance, R, rhs=None, objective=None,
                    opts: SolverOptions | None = None):
    """Returns ``(W, objective, mu, solution)``; ``mu`` are the constraint multipliers."""
    prog = build_inner_sdp(inst, R, rhs=rhs, objective=objective)
    sol = _run(prog, opts, "inner SDP")
    W = [value(sol, w) for w in prog.meta["W"]]
    return W, sol.primal_obj, sol.dual_y.copy(), sol


def solve_fixed_certificate_inner(inst: ProblemInstance, cert: DualCertificate, W_star=None,
                                  opts: SolverOptions | None = None):
    """Solve the inner problem at a fixed certificate.

    Returns ``(objective, lhs, rhs)``; ``lhs`` holds the constraint values at
    ``W_star`` (NaN when not given) and ``rhs`` the right-hand sides
    ``sigma_i^2 [A_i]_corner``.
    """
    prog = build_fixed_certificate_inner(inst, cert)
    sol = _run(prog, opts, "fixed-certificate inner problem")
    rhs = inst.noise * cert.corners
    lhs = np.full(inst.k, np.nan)
    if W_star is not None:
        for i in range(inst.k):
            R = covariance_from_certificate(inst, cert.A, i)
            lhs[i] = np.trace(interference_matrix(inst, W_star, i) @ R).real
    return sol.primal_obj, lhs, rhs


def solve_error_sdr(inst: ProblemInstance, W, i: int, opts: SolverOptions | None = None):
    """Returns ``(value, V)`` for user ``i``."""
    prog = build_error_sdr(inst, W, i)
    sol = _run(prog, opts, f"error SDR (user {i})")
    return sol.primal_obj, value(sol, prog.meta["V"])
