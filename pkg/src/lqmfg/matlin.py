"""Dense matrix utilities used by every solver.

All functions take array-likes, never modify their inputs and return fresh
``numpy`` arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonSymmetric, NotSPD, Unstable

SYM_RTOL = 1e-9
SPD_RTOL = 1e-9
RANK_RTOL = 1e-8
STABILITY_TOL = 1e-10


def as_matrix(M, name="matrix"):
    M = np.array(M, dtype=float, ndmin=2)
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def as_square(M, name="matrix"):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def _maxabs(M):
    return float(np.max(np.abs(M))) if M.size else 0.0


def is_symmetric(M, rtol=SYM_RTOL):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    return _maxabs(M - M.T) <= rtol * (1.0 + _maxabs(M))


def sym(M):
    """Symmetric part ``(M + M.T) / 2``."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def is_spd(M, rtol=SPD_RTOL):
    M = np.asarray(M, dtype=float)
    if not is_symmetric(M):
        return False
    return float(np.linalg.eigvalsh(sym(M))[0]) > rtol * (1.0 + _maxabs(M))


def is_psd(M, rtol=SPD_RTOL):
    M = np.asarray(M, dtype=float)
    if not is_symmetric(M):
        return False
    return float(np.linalg.eigvalsh(sym(M))[0]) >= -rtol * (1.0 + _maxabs(M))


def is_stable(M, tol=STABILITY_TOL):
    """True when every eigenvalue of ``M`` has real part below ``-tol * (1 + |M|)``."""
    M = as_square(M)
    return float(np.max(np.linalg.eigvals(M).real)) < -tol * (1.0 + _maxabs(M))


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    min_real_part: float
    max_abs: float
    is_symmetric: bool
    is_spd: bool


def spectral_report(M):
    M = as_square(M)
    ev = np.linalg.eigvals(M)
    return SpectralReport(
        eigenvalues=ev,
        min_real_part=float(ev.real.min()),
        max_abs=float(np.abs(ev).max()),
        is_symmetric=is_symmetric(M),
        is_spd=is_spd(M),
    )


def spectral_norm(M):
    """Largest eigenvalue modulus of a symmetric matrix.

    For positive semidefinite ``M`` this is its largest eigenvalue.
    """
    M = as_square(M)
    if not is_symmetric(M):
        raise NonSymmetric(f"spectral_norm needs a symmetric matrix (asymmetry {_maxabs(M - M.T):.3g})")
    return float(np.max(np.abs(np.linalg.eigvalsh(sym(M)))))


def spd_sqrt(M):
    """The unique SPD square root ``E`` with ``E @ E == M``."""
    M = as_square(M)
    if not is_symmetric(M):
        raise NotSPD("matrix is not symmetric")
    w, U = np.linalg.eigh(sym(M))
    if w[0] <= SPD_RTOL * (1.0 + _maxabs(M)):
        raise NotSPD(f"smallest eigenvalue {w[0]:.3g} is not positive")
    return sym((U * np.sqrt(w)) @ U.T)


def spd_inv(M):
    M = as_square(M)
    return sym(np.linalg.inv(M))


def solve_lyapunov(M, C):
    """Solve ``M V + V M^T + C = 0`` for stable ``M``.

    The equation is vectorised into a ``d^2 x d^2`` linear system, which is
    exact and cheap at the dimensions these games use.
    """
    M = as_square(M, "M")
    C = as_square(C, "C")
    d = M.shape[0]
    if C.shape != (d, d):
        raise DimensionMismatch(f"C has shape {C.shape}, expected {(d, d)}")
    if not is_stable(M):
        ev = np.linalg.eigvals(M)
        raise Unstable(f"drift has eigenvalue with real part {ev.real.max():.3g}")
    eye = np.eye(d)
    K = np.kron(eye, M) + np.kron(M, eye)
    v = np.linalg.solve(K, -C.reshape(-1, order="F"))
    V = v.reshape(d, d, order="F")
    return sym(V) if is_symmetric(C) else V


def numerical_rank(M, rtol=RANK_RTOL):
    M = as_matrix(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0] * max(M.shape)))


@dataclass(frozen=True)
class RankReport:
    rank_B: int
    rank_BP: int

    @property
    def consistent(self):
        return self.rank_B == self.rank_BP


def rank_consistent(B, P):
    """Compare ``rank(B)`` with ``rank([B, P])`` (solvability of ``B x = P``)."""
    B = as_matrix(B, "B")
    P = np.asarray(P, dtype=float).reshape(-1)
    if B.shape[0] != B.shape[1] or P.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"B {B.shape} and P {P.shape} are incompatible")
    return RankReport(numerical_rank(B), numerical_rank(np.column_stack([B, P])))


def null_space(B, rtol=RANK_RTOL):
    """Orthonormal basis of ker(B) as the rows of the returned array."""
    B = as_matrix(B)
    _, s, Vt = np.linalg.svd(B)
    cutoff = rtol * (s[0] if s.size else 0.0) * max(B.shape)
    rank = int(np.sum(s > cutoff)) if s.size and s[0] > 0 else 0
    return Vt[rank:].copy()


def min_norm_solve(B, P, rtol=RANK_RTOL):
    """Minimum-norm least-squares solution of ``B x = P``."""
    B = as_matrix(B)
    P = np.asarray(P, dtype=float).reshape(-1)
    s = np.linalg.svd(B, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(B.shape[1])
    x, *_ = np.linalg.lstsq(B, P, rcond=rtol * max(B.shape))
    return x
