"""Checks that do not go through the SDP solver.

* :func:`trs_min`: exact minimum of ``(hbar+e)^H Q (hbar+e)`` over ``||e|| <= r``
  (a trust-region subproblem; ``Q`` may be indefinite)
* :func:`slemma_check`: search for a multiplier making ``Psi_i`` PSD
* :func:`worst_case_sinr` and :func:`extract_beamformers` for rank-one designs
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ProblemInstance, as_hermitian, herm_eig
from .formulations import RobustDesign, interference_matrix

log = logging.getLogger(__name__)

RANK_TOL = 1e-6
HARD_CASE_TOL = 1e-10
SECULAR_TOL = 1e-12


class TrsResult(NamedTuple):
    value: float
    argmin: np.ndarray
    multiplier: float
    hard_case: bool


def _canonical_phase(u: np.ndarray) -> np.ndarray:
    """Rotate ``u`` so its first non-negligible entry is real and positive."""
    k = int(np.argmax(np.abs(u) > 1e-8 * np.abs(u).max()))
    return u * (abs(u[k]) / u[k])


def trs_min(Q, hbar, r: float) -> TrsResult:
    """Global minimum of ``f(e) = (hbar+e)^H Q (hbar+e)`` subject to ``||e|| <= r``.

    Written as ``e^H Q e + 2 Re(g^H e) + c`` with ``g = Q hbar``; optimal ``e``
    satisfies ``(Q + nu I) e = -g`` with ``Q + nu I >= 0`` and ``nu (r - ||e||) = 0``.
    The multiplier is found by safeguarded Newton on ``1/||e(nu)|| - 1/r``.
    """
    Q = as_hermitian(Q)
    hbar = np.asarray(hbar, dtype=complex).reshape(-1)
    if r < 0:
        raise ValueError("radius must be nonnegative")
    f = lambda e: float(np.real(np.vdot(hbar + e, Q @ (hbar + e))))
    n = hbar.size
    if r == 0:
        return TrsResult(f(np.zeros(n, complex)), np.zeros(n, complex), 0.0, False)

    d, U = herm_eig(Q)
    gt = U.conj().T @ (Q @ hbar)  # gradient in the eigenbasis
    scale = 1.0 + np.abs(d).max() * (np.linalg.norm(hbar) + r)
    dmin = d[0]
    bottom = d <= dmin + 1e-12 * (1.0 + np.abs(d).max())
    norm_at = lambda nu: np.linalg.norm(gt / (d + nu))

    def point(nu):
        return -U @ (gt / (d + nu))

    # interior solution
    if dmin > 0 and norm_at(0.0) <= r:
        e = point(0.0)
        return TrsResult(f(e), e, 0.0, False)

    lo = max(0.0, -dmin)
    if dmin <= 0 and np.linalg.norm(gt[bottom]) <= HARD_CASE_TOL * scale:
        rest = ~bottom
        coef = np.zeros(n, complex)
        coef[rest] = -gt[rest] / (d[rest] + lo)
        if np.linalg.norm(coef) <= r:
            # fill the remaining budget along the first bottom eigenvector
            u = _canonical_phase(U[:, np.flatnonzero(bottom)[0]])
            t = np.sqrt(max(r * r - np.linalg.norm(coef) ** 2, 0.0))
            e = U @ coef + t * u if lo > 0 else U @ coef
            return TrsResult(f(e), e, lo, True)

    # boundary solution: nu > lo with ||e(nu)|| = r
    hi = lo + np.linalg.norm(gt) / r + 1.0
    while norm_at(hi) > r:
        hi = 2.0 * hi + 1.0
    nu = hi
    for _ in range(200):
        w = gt / (d + nu)
        nrm = np.linalg.norm(w)
        if abs(nrm - r) <= SECULAR_TOL * r:
            break
        if nrm > r:
            lo = nu
        else:
            hi = nu
        # Newton on phi(nu) = 1/||w|| - 1/r
        dnrm = -np.sum(np.abs(gt) ** 2 / (d + nu) ** 3) / nrm
        step = (1.0 / nrm - 1.0 / r) / (dnrm / nrm ** 2)
        cand = nu + step
        nu = cand if lo < cand < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    e = point(nu)
    return TrsResult(f(e), e, float(nu), False)


def _psi_min_eig(inst, Q, i, lam):
    L = inst.lift(i)
    M = L.conj().T @ Q @ L
    M[:inst.nt, :inst.nt] += lam * np.eye(inst.nt)
    M[-1, -1] -= inst.noise[i] + lam * inst.radius[i] ** 2
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])


def slemma_check(inst: ProblemInstance, W, i: int, tol: float | None = None):
    """Return ``lambda >= 0`` with ``Psi_i(W, lambda) >= 0``, or ``None``.

    ``lambda_min(Psi_i(lambda))`` is concave in ``lambda``, and any feasible
    multiplier must make the top-left block ``Q + lambda I`` PSD and keep the
    corner ``hbar^H Q hbar - sigma^2 - lambda r^2`` nonnegative. That bracket is
    searched by golden section.
    """
    Q = interference_matrix(inst, W, i)
    h = inst.hbar[i]
    sigma2, r = inst.noise[i], inst.radius[i]
    if tol is None:
        tol = 1e-10 * (1.0 + np.abs(Q).sum() * (1 + np.linalg.norm(h)) ** 2 + sigma2)
    qmin = float(np.linalg.eigvalsh(Q)[0])
    lo = max(0.0, -qmin)
    corner = float(np.real(np.vdot(h, Q @ h))) - sigma2
    g = lambda lam: _psi_min_eig(inst, Q, i, lam)
    if r > 0:
        hi = corner / r ** 2
        if hi < lo - tol:
            return None
        hi = max(hi, lo)
    else:
        if corner < -tol:
            return None
        hi = 2.0 * lo + 1.0
        for _ in range(200):
            if g(hi) >= -tol or g(2 * hi) <= g(hi):
                break
            hi *= 2.0
    a, b = lo, hi
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    g1, g2 = g(x1), g(x2)
    for _ in range(200):
        if b - a <= 1e-14 * max(1.0, b):
            break
        if g1 < g2:
            a, x1, g1 = x1, x2, g2
            x2 = a + phi * (b - a)
            g2 = g(x2)
        else:
            b, x2, g2 = x2, x1, g1
            x1 = b - phi * (b - a)
            g1 = g(x1)
    cands = [(g(lo), lo), (g(hi), hi), (g1, x1), (g2, x2)]
    best, lam = max(cands)
    return float(lam) if best >= -tol else None


# --- beamformers --------------------------------------------------------------

@dataclass
class BeamformerSet:
    w: np.ndarray  # (k, nt)

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=complex))

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))

    def scaled(self, t: float) -> "BeamformerSet":
        return BeamformerSet(self.w * t)


def _robust_slack(inst, w, i, gamma):
    """``min_e (h+e)^H (w_i w_i^H / gamma - sum_{k!=i} w_k w_k^H) (h+e) - sigma^2``."""
    outer = [np.outer(v, v.conj()) for v in w]
    total = sum(outer)
    Q = (1.0 + 1.0 / gamma) * outer[i] - total
    return trs_min(Q, inst.hbar[i], inst.radius[i]).value - inst.noise[i]


def worst_case_sinr(inst: ProblemInstance, w, i: int, iters: int = 30,
                    bracket=(1e-6, 1e6)) -> float:
    """Largest target ``gamma`` that user ``i`` meets for every error in its ball.

    Bisection on ``log(gamma)``; returns 0 if even the lower bracket fails and
    the upper bracket if it is met there.
    """
    w = w.w if isinstance(w, BeamformerSet) else np.atleast_2d(np.asarray(w, dtype=complex))
    lo, hi = bracket
    if _robust_slack(inst, w, i, lo) < 0:
        return 0.0
    if _robust_slack(inst, w, i, hi) >= 0:
        return float(hi)
    a, b = np.log(lo), np.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if _robust_slack(inst, w, i, np.exp(mid)) >= 0:
            a = mid
        else:
            b = mid
    return float(np.exp(a))


def worst_case_margins(inst: ProblemInstance, w) -> np.ndarray:
    """``worst_case_sinr(i) - gamma_i`` for every user."""
    return np.array([worst_case_sinr(inst, w, i) - inst.sinr_target[i] for i in range(inst.k)])


class ExtractionError(RuntimeError):
    def __init__(self, msg, rank_profile):
        super().__init__(msg)
        self.rank_profile = rank_profile


class Extraction(NamedTuple):
    beamformers: BeamformerSet
    rank_profile: np.ndarray
    fallback: bool
    scale: float = 1.0


def rank_ratio(W) -> float:
    """``lambda_2 / lambda_1`` of a PSD matrix (0 for rank <= 1 or zero input)."""
    ev = np.linalg.eigvalsh(as_hermitian(W, check=False))[::-1]
    if ev[0] <= 0 or ev.size < 2:
        return 0.0
    return float(max(ev[1], 0.0) / ev[0])


def extract_beamformers(design: RobustDesign, inst: ProblemInstance,
                        rank_tol: float = RANK_TOL, max_scale: float = 1e3) -> Extraction:
    """Principal-eigenvector beamformers from an SDR design.

    When some ``W_i`` is not numerically rank one, the dominant directions are
    kept and all beamformers are scaled by one common ``t >= 1``, found by
    40 steps of bisection, until every worst-case SINR meets its target.
    """
    w = np.zeros((inst.k, inst.nt), dtype=complex)
    profile = np.zeros(inst.k)
    for i, Wi in enumerate(design.W):
        d, U = herm_eig(Wi)
        profile[i] = rank_ratio(Wi)
        if d[-1] > 0:
            w[i] = np.sqrt(d[-1]) * _canonical_phase(U[:, -1])
    bf = BeamformerSet(w)
    if profile.max(initial=0.0) <= rank_tol:
        return Extraction(bf, profile, False)

    log.warning("rank-one extraction fallback: rank profile %s", profile)

    def ok(t):
        m = worst_case_margins(inst, bf.scaled(t))
        return bool(np.all(m >= -1e-6 * inst.sinr_target))

    if ok(1.0):
        return Extraction(bf, profile, True, 1.0)
    if not ok(max_scale):
        raise ExtractionError("fallback rescaling cannot meet the targets", profile)
    a, b = 1.0, max_scale
    for _ in range(40):
        mid = np.sqrt(a * b)
        a, b = (a, mid) if ok(mid) else (mid, b)
    return Extraction(bf.scaled(b), profile, True, float(b))
