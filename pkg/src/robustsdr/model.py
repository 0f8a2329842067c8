"""Small modeling layer: Hermitian PSD variables on top of the real-cone solver.

A Hermitian ``n x n`` variable occupies a ``2n x 2n`` real PSD block. A complex
coefficient ``E`` enters as ``real_embed(E) / 2`` so that
``<real_embed(E)/2, X> = Re tr(E H)`` with ``H = real_compress(X)``; reported
values are therefore in the original complex units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import real_compress
from .sdp_solver import NONNEG, PSD, ConicProgram, ConicSolution


@dataclass(frozen=True)
class HermVar:
    block: int
    n: int


@dataclass(frozen=True)
class Scalar:
    index: int


def hermitian_basis(n: int) -> list:
    """Orthonormal basis of ``n x n`` Hermitian matrices under ``Re tr(A B)``."""
    basis = []
    for j in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[j, j] = 1
        basis.append(E)
    s = 1 / np.sqrt(2)
    for j in range(n):
        for k in range(j + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[j, k] = E[k, j] = s
            basis.append(E)
            E = np.zeros((n, n), dtype=complex)
            E[j, k], E[k, j] = 1j * s, -1j * s
            basis.append(E)
    return basis


class ProgramBuilder:
    """Collects variables, equality rows and an objective, then emits a ConicProgram.

    Row terms are ``(var, coef)`` pairs: a Hermitian matrix for :class:`HermVar`
    (meaning ``Re tr(coef V)``), a float for :class:`Scalar`.
    """

    def __init__(self):
        self._herm: list[int] = []
        self._n_scalars = 0
        self._rows: list[tuple[list, float]] = []
        self._obj: list = []
        self.sense = 1.0

    def herm(self, n: int) -> HermVar:
        self._herm.append(n)
        return HermVar(len(self._herm) - 1, n)

    def scalar(self) -> Scalar:
        self._n_scalars += 1
        return Scalar(self._n_scalars - 1)

    def add_row(self, terms, rhs: float) -> None:
        self._rows.append((list(terms), float(rhs)))

    def minimize(self, terms) -> None:
        self._obj, self.sense = list(terms), 1.0

    def maximize(self, terms) -> None:
        self._obj = [(v, -c) for v, c in terms]
        self.sense = -1.0

    def build(self, **meta) -> ConicProgram:
        m = len(self._rows)
        # accumulate complex coefficients, embed every block once at the end
        cc = [np.zeros((1, n, n), dtype=complex) for n in self._herm]
        ca = [np.zeros((m, n, n), dtype=complex) for n in self._herm]
        clp = np.zeros(self._n_scalars)
        alp = np.zeros((m, self._n_scalars))
        for v, coef in self._obj:
            if isinstance(v, HermVar):
                cc[v.block][0] += coef
            else:
                clp[v.index] += coef
        b = np.zeros(m)
        for r, (terms, rhs) in enumerate(self._rows):
            b[r] = rhs
            for v, coef in terms:
                if isinstance(v, HermVar):
                    ca[v.block][r] += coef
                else:
                    alp[r, v.index] += coef
        blocks = [(PSD, 2 * n) for n in self._herm]
        c = [0.5 * _embed_stack(x)[0] for x in cc]
        a = [0.5 * _embed_stack(x) for x in ca]
        if self._n_scalars:
            blocks.append((NONNEG, self._n_scalars))
            c.append(clp)
            a.append(alp)
        meta.setdefault("sense", self.sense)
        return ConicProgram(blocks, c, a, b, meta)


def _embed_stack(H):
    """:func:`real_embed` applied to a stack of matrices."""
    re, im = H.real, H.imag
    return np.concatenate([np.concatenate([re, -im], axis=2),
                           np.concatenate([im, re], axis=2)], axis=1)


def value(sol: ConicSolution, var):
    """Primal value of a variable in complex units."""
    if isinstance(var, HermVar):
        return real_compress(sol.primal[var.block])
    return float(sol.primal[-1][var.index])


def dual_value(sol: ConicSolution, var):
    """Dual slack of a variable's cone, in the same units as the Hermitian coefficients."""
    if isinstance(var, HermVar):
        return 2.0 * real_compress(sol.dual_slack[var.block])
    return float(sol.dual_slack[-1][var.index])


def objective_value(prog: ConicProgram, sol: ConicSolution) -> tuple[float, float]:
    """``(primal, dual)`` objective in the modeled sense (max problems un-negated)."""
    sense = prog.meta.get("sense", 1.0)
    return sense * sol.primal_obj, sense * sol.dual_obj
