"""Algebraic Riccati equation ``Y Rcal Y = Qcal`` via its Hamiltonian matrix.

The equation has no linear term.  Under ``Rcal, Qcal`` SPD the block matrix
``[[0, Rcal], [Qcal, 0]]`` has a real spectrum symmetric about zero and the
graph subspace spanned by its positive eigenvectors yields the unique SPD
solution.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur, solve_continuous_lyapunov

from . import matlin
from .errors import DimensionMismatch, IllConditioned, NotPD

X1_COND_MAX = 1e12
IMAG_TOL = 1e-9
RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class AREProblem:
    """Coefficients of ``Y @ Rcal @ Y = Qcal``."""

    Rcal: np.ndarray
    Qcal: np.ndarray

    def __post_init__(self):
        R = matlin.as_square(self.Rcal, "Rcal")
        Q = matlin.as_square(self.Qcal, "Qcal")
        if R.shape != Q.shape:
            raise DimensionMismatch(f"Rcal {R.shape} and Qcal {Q.shape} differ")
        object.__setattr__(self, "Rcal", R)
        object.__setattr__(self, "Qcal", Q)

    @property
    def d(self):
        return self.Rcal.shape[0]

    @classmethod
    def from_game_data(cls, A, nu, R, Q):
        """The ARE whose SPD root is the precision matrix of a player.

        ``Rcal = nu R nu / 2`` and ``Qcal = A^T R A / 2 + Q``.
        """
        A, nu, R, Q = (np.asarray(x, dtype=float) for x in (A, nu, R, Q))
        return cls(matlin.sym(nu @ R @ nu) / 2.0, matlin.sym(A.T @ R @ A) / 2.0 + Q)

    def residual(self, Y):
        return np.asarray(Y) @ self.Rcal @ np.asarray(Y) - self.Qcal


def build_hamiltonian(p):
    d = p.d
    H = np.zeros((2 * d, 2 * d))
    H[:d, d:] = p.Rcal
    H[d:, :d] = p.Qcal
    return H


def _positive_subspace(H, d):
    """Basis ``[X1; X2]`` of the invariant subspace for the positive eigenvalues."""
    w, V = np.linalg.eig(H)
    scale = 1.0 + np.max(np.abs(w))
    if np.max(np.abs(w.imag)) > IMAG_TOL * scale:
        raise NotPD("Hamiltonian matrix has complex eigenvalues; Qcal is not positive definite")
    w = w.real
    V = V.real if np.iscomplexobj(V) else V
    order = np.argsort(-w)
    pos = order[:d]
    if np.any(w[pos] <= 0):
        raise NotPD("Hamiltonian matrix has fewer than d positive eigenvalues")
    X = V[:, pos]
    # Repeated eigenvalues may come back with nearly parallel eigenvectors.
    # An orthonormal Schur basis of the same subspace is then used instead.
    if np.linalg.cond(X) > 1e8:
        T, Zs, sdim = schur(H, output="real", sort="rhp")
        X = Zs[:, :d]
    return X[:d], X[d:]


def _newton_refine(p, Y, steps=2):
    """Newton corrections ``(Y Rcal) D + D (Rcal Y) = -(Y Rcal Y - Qcal)``.

    The eigenvector solution is accurate to roughly ``cond * eps``; a couple of
    Newton steps bring the residual down to round-off.
    """
    for _ in range(steps):
        res = p.residual(Y)
        M = Y @ p.Rcal
        D = solve_continuous_lyapunov(M, -res)
        Yn = matlin.sym(Y + D)
        if not matlin._maxabs(p.residual(Yn)) < matlin._maxabs(res):
            break
        Y = Yn
    return Y


def solve_are_spd(p):
    """Unique SPD solution of ``Y Rcal Y = Qcal`` for SPD ``Rcal``, ``Qcal``."""
    if not matlin.is_spd(p.Rcal):
        raise NotPD("Rcal must be symmetric positive definite")
    if not matlin.is_spd(p.Qcal):
        raise NotPD("Qcal must be symmetric positive definite")
    d = p.d
    X1, X2 = _positive_subspace(build_hamiltonian(p), d)
    c = np.linalg.cond(X1)
    if not np.isfinite(c) or c > X1_COND_MAX:
        raise IllConditioned(f"graph basis X1 has condition number {c:.3g}")
    Y = matlin.sym(np.linalg.solve(X1.T, X2.T).T)
    Y = _newton_refine(p, Y)
    res = matlin._maxabs(p.residual(Y))
    if res > RESIDUAL_RTOL * (1.0 + matlin._maxabs(p.Qcal)):
        raise IllConditioned(f"ARE residual {res:.3g} too large")
    return Y


def closed_form_sigma(A, Q, r, nubar):
    """``(1/nubar) sqrt((2/r) Q + A^2)`` for symmetric drift and scalar ``nu``, ``R``."""
    A = matlin.as_square(A, "A")
    Q = matlin.as_square(Q, "Q")
    if not matlin.is_symmetric(A):
        raise ValueError("closed form requires a symmetric drift A")
    if r <= 0 or nubar <= 0:
        raise ValueError("r and nubar must be positive")
    return matlin.spd_sqrt((2.0 / r) * Q + A @ A) / nubar


def sylvester_matrix(Y, nu, R, A):
    """``Y nu R - R nu Y - (R A - A^T R)``; skew-symmetric for symmetric inputs."""
    Y, nu, R, A = (np.asarray(x, dtype=float) for x in (Y, nu, R, A))
    return Y @ nu @ R - R @ nu @ Y - (R @ A - A.T @ R)


def sylvester_residual(Y, nu, R, A):
    """2-norm of :func:`sylvester_matrix`; zero iff ``R (nu Y + A)`` is symmetric."""
    return float(np.linalg.norm(sylvester_matrix(Y, nu, R, A), 2))
