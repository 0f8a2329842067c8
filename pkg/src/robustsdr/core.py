"""Hermitian linear algebra, the real-symmetric embedding, and instance data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

HERM_TOL = 1e-12


class NotHermitianError(ValueError):
    pass


def as_hermitian(H, check: bool = True) -> np.ndarray:
    """Return ``(H + H^H) / 2`` as a complex array.

    With ``check`` the input must already be Hermitian up to
    ``1e-12 * (1 + max|H|)``; the average only removes rounding noise.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {H.shape}")
    if check:
        scale = HERM_TOL * (1.0 + (np.abs(H).max() if H.size else 0.0))
        if np.abs(H - H.conj().T).max(initial=0.0) > scale:
            raise NotHermitianError("matrix is not Hermitian")
        if np.abs(np.diag(H).imag).max(initial=0.0) > scale:
            raise NotHermitianError("diagonal has an imaginary part")
    return 0.5 * (H + H.conj().T)


class EigDecomp(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns, unitary


def herm_eig(H) -> EigDecomp:
    H = as_hermitian(H)
    w, U = np.linalg.eigh(H)
    return EigDecomp(w, U)


def min_eig(H) -> float:
    """Smallest eigenvalue of a Hermitian (or real symmetric) matrix."""
    H = np.asarray(H)
    if H.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (H + H.conj().T))[0])


def real_embed(H) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``; PSD iff ``H`` is, every eigenvalue doubled."""
    H = np.asarray(H, dtype=complex)
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def real_compress(X) -> np.ndarray:
    """Hermitian ``n x n`` matrix ``T^H X T / 2`` with ``T = [I; -iI]``.

    Left inverse of :func:`real_embed`. It maps any PSD ``2n x 2n`` matrix to a
    PSD Hermitian one, and ``<real_embed(E), X> = 2 Re tr(E real_compress(X))``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0] // 2
    x11, x12 = X[:n, :n], X[:n, n:]
    x21, x22 = X[n:, :n], X[n:, n:]
    H = 0.5 * ((x11 + x22) + 1j * (x21 - x12))
    return 0.5 * (H + H.conj().T)


def evaluate_sinr(w: Sequence, h, i: int, noise: float) -> float:
    """SINR of user ``i`` for beamformers ``w`` (K vectors) and channel ``h``."""
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    if not 0 <= i < w.shape[0]:
        raise IndexError(f"user index {i} out of range for K={w.shape[0]}")
    if noise <= 0:
        raise ValueError("noise power must be positive")
    gains = np.abs(w.conj() @ np.asarray(h, dtype=complex)) ** 2
    return float(gains[i] / (gains.sum() - gains[i] + noise))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Robust design input: channel estimates, error radii, noise powers, SINR targets.

    ``hbar`` has shape ``(k, nt)``; row ``i`` is user ``i``'s estimate.
    Targets are linear scale. A zero radius is accepted (perfect CSI).
    """

    hbar: np.ndarray
    radius: np.ndarray
    noise: np.ndarray
    sinr_target: np.ndarray

    def __post_init__(self):
        hbar = np.atleast_2d(np.asarray(self.hbar, dtype=complex))
        k = hbar.shape[0]
        arrays = {}
        for name in ("radius", "noise", "sinr_target"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 1 and k > 1:
                v = np.full(k, v[0])
            if v.shape != (k,):
                raise ValueError(f"{name} must have one entry per user ({k}), got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            arrays[name] = v
        if k < 1 or hbar.shape[1] < 1:
            raise ValueError("need at least one user and one antenna")
        if np.any(arrays["radius"] < 0):
            raise ValueError("radii must be nonnegative")
        if np.any(arrays["noise"] <= 0) or np.any(arrays["sinr_target"] <= 0):
            raise ValueError("noise powers and SINR targets must be positive")
        for name, v in arrays.items():
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        hbar.setflags(write=False)
        object.__setattr__(self, "hbar", hbar)

    @property
    def nt(self) -> int:
        return self.hbar.shape[1]

    @property
    def k(self) -> int:
        return self.hbar.shape[0]

    @property
    def sinr_db(self) -> np.ndarray:
        return linear_to_db(self.sinr_target)

    def replace(self, **changes) -> "ProblemInstance":
        fields = dict(hbar=self.hbar, radius=self.radius, noise=self.noise,
                      sinr_target=self.sinr_target)
        fields.update(changes)
        return ProblemInstance(**fields)

    def lift(self, i: int) -> np.ndarray:
        """The ``nt x (nt+1)`` matrix ``[I  hbar_i]``."""
        return np.hstack([np.eye(self.nt), self.hbar[i][:, None]])

    def to_dict(self) -> dict:
        return {
            "nt": self.nt,
            "k": self.k,
            "hbar": [[[float(z.real), float(z.imag)] for z in row] for row in self.hbar],
            "radius": self.radius.tolist(),
            "noise": self.noise.tolist(),
            "sinr_db": self.sinr_db.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        for key in ("nt", "k", "hbar", "radius", "noise", "sinr_db"):
            if key not in d:
                raise ValueError(f"missing field '{key}'")
        nt, k = int(d["nt"]), int(d["k"])
        try:
            hbar = np.array([[complex(re, im) for re, im in row] for row in d["hbar"]])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"field 'hbar': expected k lists of [re, im] pairs ({exc})") from None
        if hbar.shape != (k, nt):
            raise ValueError(f"field 'hbar': shape {hbar.shape} does not match (k, nt) = ({k}, {nt})")
        for key in ("radius", "noise", "sinr_db"):
            if len(d[key]) != k:
                raise ValueError(f"field '{key}': expected {k} entries, got {len(d[key])}")
        return cls(hbar=hbar, radius=d["radius"], noise=d["noise"],
                   sinr_target=db_to_linear(d["sinr_db"]))
