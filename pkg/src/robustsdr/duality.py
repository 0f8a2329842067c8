"""Zero-gap certification between the robust SDR and its hand-built dual.

The certificate ``A_i`` maps to a max-min pair by ``mu_i = [A_i]_corner`` and
``V_i = A_i / mu_i``. :func:`verify_proposition1` solves both programs, checks
the KKT system, re-solves the inner problem at the recovered certificate,
confirms that every worst-case constraint is active, and probes uniqueness of
the inner minimizer.
"""
from __future__ import annotations

import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, fields

import numpy as np

from .core import ProblemInstance, min_eig, real_compress
from .formulations import (DualCertificate, MaxMinSolution, RobustDesign, SolveError,
                           build_psi, build_wsp_sdr, build_y, covariance_from_certificate,
                           interference_matrix, psi_violation, robust_slack, solve_dual_sdp, solve_error_sdr,
                           solve_fixed_certificate_inner, solve_inner_sdp, solve_wsp_sdr)
from .model import Scalar
from .oracle import ExtractionError, extract_beamformers, worst_case_margins
from .sdp_solver import SolverOptions, Status

log = logging.getLogger(__name__)

CORNER_TOL = 1e-10
GAP_TOL = 1e-6
KKT_TOL = 1e-6
ACTIVE_TOL = 1e-6

UNIQUE, AMBIGUOUS, FAILED = "Unique", "Ambiguous", "Failed"


# --- certificate <-> max-min map --------------------------------------------

def map_certificate_to_maxmin(cert: DualCertificate):
    """``(V, mu)`` with ``mu_i = [A_i]_corner`` and ``V_i = A_i / mu_i``."""
    A = [np.asarray(a, dtype=complex) for a in cert.A]
    mu = np.array([a[-1, -1].real for a in A])
    if np.any(mu <= CORNER_TOL):
        raise ValueError(f"degenerate certificate: corner entries {mu}")
    V = [a / m for a, m in zip(A, mu)]
    for v in V:
        v[-1, -1] = 1.0
    return V, mu


def map_maxmin_to_certificate(V, mu) -> DualCertificate:
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("multipliers must be nonnegative")
    return DualCertificate([m * np.asarray(v, dtype=complex) for v, m in zip(V, mu)])


# --- KKT residuals -------------------------------------------------------------

def _psd_violation(H) -> float:
    return max(0.0, -min_eig(H))


@dataclass
class KktResidual:
    """Worst value over users of each line of the robust SDR's KKT system."""

    primal_cone: float = 0.0   # W_i, A_i PSD and lambda_i >= 0
    psi_psd: float = 0.0
    y_psd: float = 0.0
    psi_a: float = 0.0         # ||Psi_i A_i||_F
    y_w: float = 0.0           # ||Y_i W_i||_F
    trace_ineq: float = 0.0    # tr A_i - (1 + r_i^2) [A_i]_corner
    trace_slack: float = 0.0   # |(tr A_i - (1 + r_i^2)[A_i]_corner) lambda_i|
    objective: float = 0.0

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @property
    def max(self) -> float:
        return max(v for k, v in self.as_dict().items() if k != "objective")

    @property
    def passed(self) -> bool:
        return self.max <= KKT_TOL * (1.0 + abs(self.objective))


def check_kkt_15(inst: ProblemInstance, design: RobustDesign, cert: DualCertificate) -> KktResidual:
    res = KktResidual(objective=design.objective)
    lam = np.asarray(design.lam, dtype=float)
    r2 = inst.radius ** 2
    cone = [_psd_violation(w) for w in design.W] + [_psd_violation(a) for a in cert.A]
    res.primal_cone = max(cone + [max(0.0, float(-lam.min()))])
    for i in range(inst.k):
        Y = build_y(inst, cert.A, i)
        A = cert.A[i]
        slack = np.trace(A).real - (1 + r2[i]) * A[-1, -1].real
        if inst.radius[i] > 0:
            comp = float(np.linalg.norm(build_psi(inst, design.W, i, lam[i]) @ A))
        else:
            # scalar constraint; the trace line already forces A_i onto its corner
            comp = abs(robust_slack(inst, design.W, i) * A[-1, -1].real)
        res.psi_psd = max(res.psi_psd, psi_violation(inst, design.W, i, lam[i]))
        res.y_psd = max(res.y_psd, _psd_violation(Y))
        res.psi_a = max(res.psi_a, comp)
        res.y_w = max(res.y_w, float(np.linalg.norm(Y @ design.W[i])))
        res.trace_ineq = max(res.trace_ineq, max(0.0, slack))
        res.trace_slack = max(res.trace_slack, abs(slack * lam[i]))
    return res


def psi_tilde(inst: ProblemInstance, W, i: int, xi: float, tau: float) -> np.ndarray:
    L = inst.lift(i)
    M = L.conj().T @ interference_matrix(inst, W, i) @ L
    M[:inst.nt, :inst.nt] += xi * np.eye(inst.nt)
    M[-1, -1] += xi + tau
    return 0.5 * (M + M.conj().T)


def canonical_subproblem_multipliers(inst: ProblemInstance, lam, i: int):
    """``(xi_i, tau_i) = (lambda_i, -sigma_i^2 - (1 + r_i^2) lambda_i)``."""
    lam_i = float(lam[i])
    return lam_i, -inst.noise[i] - (1 + inst.radius[i] ** 2) * lam_i


def check_kkt_21(inst: ProblemInstance, W, i: int, V, xi: float, tau: float) -> dict:
    """Residuals of the error subproblem's KKT system at ``(V, xi, tau)``."""
    V = np.asarray(V, dtype=complex)
    bound = 1 + inst.radius[i] ** 2
    tr_gap = np.trace(V).real - bound
    corner_gap = V[-1, -1].real - 1.0
    P = psi_tilde(inst, W, i, xi, tau)
    res = OrderedDict(
        feasibility=max(max(0.0, tr_gap), abs(corner_gap), _psd_violation(V), max(0.0, -xi)),
        psi_psd=_psd_violation(P),
        complementarity=float(np.linalg.norm(P @ V)),
        slackness=max(abs(xi * tr_gap), abs(tau * corner_gap)),
    )
    return res


# --- uniqueness probe ---------------------------------------------------------

def probe_condition1(inst: ProblemInstance, cert: DualCertificate, n_probes: int = 16,
                     size: float = 1e-7, threshold: float = 1e-5, seed: int = 0,
                     opts: SolverOptions | None = None):
    """Perturb the inner problem's objective and see whether the minimizer moves.

    Returns ``(verdict, witness)`` where ``witness`` is the largest relative
    Frobenius displacement seen.
    """
    try:
        V, mu = map_certificate_to_maxmin(cert)
        R = [covariance_from_certificate(inst, V, i) for i in range(inst.k)]
        W0, _, _, _ = solve_inner_sdp(inst, R, opts=opts)
    except (ValueError, SolveError) as exc:
        log.info("condition-1 probe failed: %s", exc)
        return FAILED, float("nan")
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.sqrt(sum(np.linalg.norm(w) ** 2 for w in W0))))
    witness = 0.0
    for _ in range(n_probes):
        weights = []
        for _ in range(inst.k):
            G = rng.standard_normal((inst.nt, inst.nt)) + 1j * rng.standard_normal((inst.nt, inst.nt))
            E = G + G.conj().T
            weights.append(np.eye(inst.nt) + size * np.sqrt(inst.nt) * E / np.linalg.norm(E))
        try:
            W, _, _, _ = solve_inner_sdp(inst, R, objective=weights, opts=opts)
        except SolveError as exc:
            log.info("condition-1 probe failed: %s", exc)
            return FAILED, float("nan")
        dist = float(np.sqrt(sum(np.linalg.norm(a - b) ** 2 for a, b in zip(W, W0))))
        witness = max(witness, dist / scale)
    return (UNIQUE if witness <= threshold else AMBIGUOUS), witness


# --- the per-instance report -----------------------------------------------------

REPORT_KEYS = (
    "status", "primal_status", "dual_status", "primal_obj", "dual_obj", "rel_gap",
    "mechanical_dual_gap", "max_rank_ratio", "rank_profile", "fallback",
    "min_margin", "worst_case_margins",
    "kkt_primal_cone", "kkt_psi_psd", "kkt_y_psd", "kkt_psi_a", "kkt_y_w",
    "kkt_trace_ineq", "kkt_trace_slack", "kkt_max", "kkt_pass", "kkt_cross_max",
    "fixed_cert_obj", "fixed_cert_gap", "fixed_cert_wstar_violation", "fixed_cert_pass",
    "active_values", "active_max_dev", "active_pass",
    "kkt21_max", "condition1", "condition1_witness",
    "ray_objective", "ray_violation", "message", "wall_time_ms",
)


@dataclass
class DualityReport:
    status: str
    values: dict
    design: RobustDesign | None = None
    certificate: DualCertificate | None = None
    maxmin: MaxMinSolution | None = None
    beamformers: object = None

    @property
    def rel_gap(self) -> float:
        return self.values.get("rel_gap", float("nan"))

    def to_dict(self) -> OrderedDict:
        out = OrderedDict()
        for key in REPORT_KEYS:
            v = self.values.get(key)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, (np.floating, np.integer, np.bool_)):
                v = v.item()
            if isinstance(v, float) and not np.isfinite(v):
                v = None
            out[key] = v
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def rel_gap(p: float, d: float) -> float:
    return abs(p - d) / (1.0 + abs(p))


def _ray_from_farkas(inst, prog, y):
    """Improving ray of the dual read off a Farkas vector of the robust SDR.

    Returns ``(objective, violation)`` where violation collects the ray
    conditions: ``A_i >= 0``, trace bound and the homogeneous ``Y_i`` map.
    """
    aty = prog.adjoint(y)
    A = []
    for p in prog.meta["P"]:
        if isinstance(p, Scalar):
            a = np.zeros((inst.nt + 1, inst.nt + 1), dtype=complex)
            a[-1, -1] = -aty[-1][p.index]
            A.append(a)
        else:
            A.append(-2.0 * real_compress(aty[p.block]))
    obj = float(sum(inst.noise[i] * A[i][-1, -1].real for i in range(inst.k)))
    viol = max(_psd_violation(a) for a in A)
    for i in range(inst.k):
        viol = max(viol, np.trace(A[i]).real - (1 + inst.radius[i] ** 2) * A[i][-1, -1].real)
        Yh = build_y(inst, A, i) - np.eye(inst.nt)
        viol = max(viol, _psd_violation(Yh))
    return obj, float(viol)


def verify_proposition1(inst: ProblemInstance, opts: SolverOptions | None = None,
                        probe: bool = True, probe_seed: int = 0) -> DualityReport:
    """Solve the robust SDR and its dual and cross-check every link between them.

    Never raises on solver trouble: the report's ``status`` carries the primal
    status (``Optimal``, ``PrimalInfeasible``, ...) and ``message`` the context.
    """
    t0 = time.perf_counter()
    v: dict = {}
    # primal
    try:
        design, slack_cert, psol = solve_wsp_sdr(inst, opts)
    except SolveError as exc:
        v.update(status=exc.status.value, primal_status=exc.status.value,
                 message=str(exc))
        sol = exc.solution
        if exc.status == Status.PRIMAL_INFEASIBLE and sol.certificate is not None:
            v["ray_objective"], v["ray_violation"] = _ray_from_farkas(
                inst, build_wsp_sdr(inst), sol.certificate)
            try:
                solve_dual_sdp(inst, opts)
                v["dual_status"] = Status.OPTIMAL.value
            except SolveError as dexc:
                v["dual_status"] = dexc.status.value
        v["wall_time_ms"] = 1e3 * (time.perf_counter() - t0)
        return DualityReport(v["status"], v)

    v["primal_status"] = Status.OPTIMAL.value
    p = design.objective
    v["primal_obj"] = p
    v["mechanical_dual_gap"] = rel_gap(p, slack_cert.objective(inst))

    # hand-built dual
    try:
        cert, d, dsol = solve_dual_sdp(inst, opts)
    except SolveError as exc:
        v.update(status=exc.status.value, dual_status=exc.status.value,
                 message=str(exc))
        v["wall_time_ms"] = 1e3 * (time.perf_counter() - t0)
        return DualityReport(v["status"], v, design=design)
    v["dual_status"] = Status.OPTIMAL.value
    v["dual_obj"] = d
    v["rel_gap"] = rel_gap(p, d)

    # rank profile and worst-case margins
    messages = []
    try:
        ext = extract_beamformers(design, inst)
        v["rank_profile"], v["fallback"] = ext.rank_profile, ext.fallback
        bf = ext.beamformers
    except ExtractionError as exc:
        v["rank_profile"], v["fallback"] = exc.rank_profile, True
        messages.append(str(exc))
        bf = None
    v["max_rank_ratio"] = float(np.max(v["rank_profile"]))
    if bf is not None:
        margins = worst_case_margins(inst, bf)
        v["worst_case_margins"] = margins
        v["min_margin"] = float(margins.min())

    # KKT system at the solver's own primal-dual pair; the pairing with the
    # separately solved dual is reported alongside
    kkt = check_kkt_15(inst, design, slack_cert)
    for key, val in kkt.as_dict().items():
        if key != "objective":
            v[f"kkt_{key}"] = val
    v["kkt_max"], v["kkt_pass"] = kkt.max, kkt.passed
    v["kkt_cross_max"] = check_kkt_15(inst, design, cert).max

    # inner problem at the recovered certificate
    maxmin = None
    try:
        V, mu = map_certificate_to_maxmin(cert)
        maxmin = MaxMinSolution(V, mu, design.W)
        fixed_obj, lhs, rhs = solve_fixed_certificate_inner(inst, cert, design.W, opts)
        v["fixed_cert_obj"] = fixed_obj
        v["fixed_cert_gap"] = rel_gap(p, fixed_obj)
        v["fixed_cert_wstar_violation"] = float(np.max(np.maximum(rhs - lhs, 0.0) / (1 + rhs)))
        v["fixed_cert_pass"] = bool(v["fixed_cert_gap"] <= GAP_TOL
                                    and v["fixed_cert_wstar_violation"] <= GAP_TOL)
    except (ValueError, SolveError) as exc:
        messages.append(f"fixed-certificate problem: {exc}")
        v["fixed_cert_pass"] = False

    # active worst-case constraints at W*
    try:
        active = np.array([solve_error_sdr(inst, design.W, i, opts)[0] for i in range(inst.k)])
        v["active_values"] = active
        v["active_max_dev"] = float(np.max(np.abs(active - inst.noise)))
        v["active_pass"] = bool(v["active_max_dev"] <= ACTIVE_TOL)
    except SolveError as exc:
        messages.append(str(exc))
        v["active_pass"] = False

    try:
        V_own, _ = map_certificate_to_maxmin(slack_cert)
        k21 = 0.0
        # a zero-radius user's error set is a single point, nothing to check
        for i in np.flatnonzero(inst.radius > 0):
            xi, tau = canonical_subproblem_multipliers(inst, design.lam, i)
            k21 = max(k21, max(check_kkt_21(inst, design.W, i, V_own[i], xi, tau).values()))
        v["kkt21_max"] = k21
    except ValueError as exc:
        messages.append(str(exc))

    if probe:
        v["condition1"], v["condition1_witness"] = probe_condition1(inst, cert, seed=probe_seed,
                                                                    opts=opts)
    v["status"] = Status.OPTIMAL.value
    v["message"] = "; ".join(messages)
    v["wall_time_ms"] = 1e3 * (time.perf_counter() - t0)
    return DualityReport(Status.OPTIMAL.value, v, design=design, certificate=cert,
                         maxmin=maxmin, beamformers=bf)
