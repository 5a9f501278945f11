"""Symmetric positive definite symmetrizers and the induced change of coordinates.

If ``Y`` is SPD and ``Y M = M^T Y``, factor ``Y = P^T Z^2 P`` with ``P``
orthogonal and ``Z`` diagonal positive.  Then ``T = Z P`` satisfies
``Y = T^T T`` and ``T M T^{-1}`` is symmetric, so the coordinates
``xi = T x`` turn a game with a symmetrizable drift into one with a symmetric
drift.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import matlin
from .errors import Defective, DimensionMismatch, StructureMismatch
from .games import MeanFieldGame, NearlyIdenticalGame, NPersonGame
from .synthesis import (AffineFeedback, EquilibriumSolution, GaussianMeasure, PlayerSolution,
                        QuadraticValue, SolutionFamily)

DEFECTIVE_COND = 1e10
COMMUTE_RTOL = 1e-9
STRUCTURE_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class Symmetrizer:
    """``Y = P^T Z^2 P`` with ``P`` orthogonal and ``Z`` diagonal positive."""

    Y: np.ndarray
    P: np.ndarray
    Z: np.ndarray

    @classmethod
    def from_Y(cls, Y):
        w, U = np.linalg.eigh(matlin.sym(Y))
        if w[0] <= 0:
            raise StructureMismatch("symmetrizer must be positive definite")
        return cls(matlin.sym(Y), U.T.copy(), np.diag(np.sqrt(w)))

    @property
    def d(self):
        return self.Y.shape[0]

    @property
    def T(self):
        return self.Z @ self.P

    @property
    def T_inv(self):
        return self.P.T @ np.diag(1.0 / np.diag(self.Z))

    def transform_drift(self, M):
        """``T M T^{-1}``, symmetric whenever ``Y`` symmetrizes ``M``."""
        return self.T @ np.asarray(M, dtype=float) @ self.T_inv

    def transform_form(self, Q):
        """Coefficient matrix of a quadratic form after ``x = T^{-1} xi``."""
        return self.T_inv.T @ np.asarray(Q, dtype=float) @ self.T_inv

    def residual(self, M):
        M = np.asarray(M, dtype=float)
        return float(np.linalg.norm(self.Y @ M - M.T @ self.Y, 2))


def _sym_basis(d):
    basis = []
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def _symmetrizer_space(M):
    """Orthonormal coordinates of ``{Y = Y^T : Y M = M^T Y}`` as a list of matrices."""
    d = M.shape[0]
    S = _sym_basis(d)
    L = np.array([(E @ M - M.T @ E).reshape(-1) for E in S]).T
    ker = matlin.null_space(L)
    return [np.tensordot(k, np.array(S), axes=1) for k in ker]


def _conditioning(Y):
    w = np.linalg.eigvalsh(matlin.sym(Y))
    return w[0] / w[-1] if w[-1] > 0 else -np.inf


def find_symmetrizer(M):
    """SPD ``Y`` with ``Y M = M^T Y``, scaled to unit spectral norm.

    The eigenvector construction ``V^{-T} V^{-1}`` gives a starting point,
    which is then improved by maximising ``lambda_min / lambda_max`` over the
    full linear space of symmetric symmetrizers.
    """
    M = matlin.as_square(M, "M")
    d = M.shape[0]
    if matlin.is_symmetric(M):
        return Symmetrizer(np.eye(d), np.eye(d), np.eye(d))
    w, V = np.linalg.eig(M)
    scale = 1.0 + np.max(np.abs(w))
    if np.max(np.abs(w.imag)) > 1e-9 * scale:
        raise Defective("drift has complex eigenvalues; no positive definite symmetrizer exists")
    V = V.real
    c = np.linalg.cond(V)
    if not np.isfinite(c) or c > DEFECTIVE_COND:
        raise Defective(f"eigenvector matrix has condition number {c:.3g}")
    Vi = np.linalg.inv(V)
    Y0 = matlin.sym(Vi.T @ Vi)
    basis = _symmetrizer_space(M)
    if basis:
        G = np.array([b.reshape(-1) for b in basis]).T
        a0 = np.linalg.lstsq(G, Y0.reshape(-1), rcond=None)[0]

        def build(a):
            return np.tensordot(a, np.array(basis), axes=1)

        res = minimize(lambda a: -_conditioning(build(a)), a0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000 * len(a0)})
        if _conditioning(build(res.x)) > _conditioning(Y0):
            Y0 = matlin.sym(build(res.x))
    Y = Y0 / np.linalg.eigvalsh(Y0)[-1]
    if not matlin.is_spd(Y):
        raise Defective("no positive definite symmetrizer found")
    r = float(np.linalg.norm(Y @ M - M.T @ Y, 2))
    if r > COMMUTE_RTOL * (1.0 + np.linalg.norm(M, 2)):
        raise Defective(f"symmetrizer residual {r:.3g} too large")
    return Symmetrizer.from_Y(Y)


# ---------------------------------------------------------------------------
# Game transforms
# ---------------------------------------------------------------------------

def _check_structure(A, sigma, R, r=None, s=None, who=""):
    """Return the symmetrizer ``Y = R / r`` after checking ``R A`` symmetric and ``sigma sigma^T ~ Y^{-1}``."""
    A, sigma, R = (np.asarray(x, dtype=float) for x in (A, sigma, R))
    if r is None:
        r = float(np.linalg.eigvalsh(matlin.sym(R))[-1])
    if r <= 0:
        raise StructureMismatch("r must be positive")
    Y = R / r
    if not matlin.is_spd(Y):
        raise StructureMismatch(f"R is not positive definite{who}")
    res = np.linalg.norm(Y @ A - A.T @ Y, 2)
    if res > STRUCTURE_RTOL * (1.0 + np.linalg.norm(A, 2)):
        raise StructureMismatch(f"R is not proportional to a symmetrizer of A{who} (residual {res:.3g})")
    S = sigma @ sigma.T @ Y
    d = A.shape[0]
    s2 = float(np.trace(S)) / d if s is None else float(s) ** 2
    if s2 <= 0 or matlin._maxabs(S - s2 * np.eye(d)) > STRUCTURE_RTOL * (1.0 + matlin._maxabs(S)):
        raise StructureMismatch(f"sigma sigma^T is not s^2 Y^{{-1}}{who}")
    return Y


def transform_game(game, s=None, r=None):
    """Rewrite ``game`` in the coordinates ``xi = Z P x``.

    ``Y = R / r`` must symmetrize the drift and ``sigma sigma^T`` must equal
    ``s^2 Y^{-1}``, which is the invariant content of ``sigma = s P^T Z^{-1}``.
    When ``r`` (``s``) is omitted it is taken as the largest eigenvalue of ``R``
    (the value implied by the data).
    """
    if isinstance(game, NPersonGame):
        return _transform_n_person(game, s, r)
    if not isinstance(game, (NearlyIdenticalGame, MeanFieldGame)):
        raise TypeError(f"not a game: {type(game).__name__}")
    Y = _check_structure(game.A, game.sigma, game.R, r, s)
    sy = Symmetrizer.from_Y(Y)
    T = sy.T
    common = dict(A=sy.transform_drift(game.A), sigma=T @ game.sigma, R=sy.transform_form(game.R),
                  H=T @ game.H, Delta=T @ game.Delta)
    if isinstance(game, NearlyIdenticalGame):
        new = replace(game, Q=sy.transform_form(game.Q), B=sy.transform_form(game.B),
                      C=np.array([sy.transform_form(c) for c in game.C]),
                      D=np.array([sy.transform_form(x) for x in game.D]), **common)
    else:
        new = replace(game, Qhat=sy.transform_form(game.Qhat), Bhat=sy.transform_form(game.Bhat),
                      Chat=sy.transform_form(game.Chat), Dhat=sy.transform_form(game.Dhat), **common)
    return _symmetrized(new), sy


def _symmetrized(game):
    # Round-off leaves the transformed drift and cost blocks asymmetric at the 1e-16 level.
    fix = {}
    for name in ("A", "R", "Q", "B", "Qhat", "Bhat", "Chat", "Dhat"):
        if hasattr(game, name):
            fix[name] = matlin.sym(getattr(game, name))
    for name in ("C", "D"):
        if hasattr(game, name) and not isinstance(game, MeanFieldGame):
            fix[name] = 0.5 * (getattr(game, name) + np.swapaxes(getattr(game, name), 1, 2))
    return replace(game, **fix)


def _transform_n_person(game, s, r):
    """All players must share one symmetrizer; otherwise no common coordinates exist."""
    N, d = game.N, game.d
    Y = _check_structure(game.A[0], game.sigma[0], game.R[0], r, s, who=", player 1")
    for i in range(1, N):
        ri = float(np.trace(game.R[i] @ np.linalg.inv(Y))) / d
        try:
            Yi = _check_structure(game.A[i], game.sigma[i], game.R[i], ri, None, who=f", player {i + 1}")
        except StructureMismatch as e:
            raise StructureMismatch(f"players do not share a symmetrizer: {e}") from None
        if matlin._maxabs(Yi - Y) > STRUCTURE_RTOL * (1.0 + matlin._maxabs(Y)):
            raise StructureMismatch(f"players 1 and {i + 1} need different symmetrizers")
    sy = Symmetrizer.from_Y(Y)
    T, Ti = sy.T, sy.T_inv
    Tbig_inv = np.kron(np.eye(N), Ti)
    new = NPersonGame(
        A=np.array([matlin.sym(sy.transform_drift(a)) for a in game.A]),
        sigma=np.array([T @ x for x in game.sigma]),
        R=np.array([matlin.sym(sy.transform_form(x)) for x in game.R]),
        Q=np.array([matlin.sym(Tbig_inv.T @ q @ Tbig_inv) for q in game.Q]),
        Xbar=np.einsum("ab,ijb->ija", T, game.Xbar),
    )
    return new, sy


def pull_back(solution, sym):
    """Express a solution computed in ``xi = T x`` coordinates in the original ones."""
    T, Ti = sym.T, sym.T_inv
    players = []
    for p in solution.players:
        value = QuadraticValue(matlin.sym(T.T @ p.value.Lambda @ T), T.T @ p.value.rho)
        measure = GaussianMeasure(Ti @ p.measure.mu, matlin.sym(T.T @ p.measure.Sigma @ T))
        fb = AffineFeedback(Ti @ p.feedback.K @ T, Ti @ p.feedback.c)
        players.append(PlayerSolution(value, measure, p.lam, fb))
    family = None
    if solution.family is not None:
        n = solution.family.particular.size // sym.d
        big = np.kron(np.eye(n), Ti)
        basis = solution.family.basis @ big.T
        if basis.shape[0]:
            q, _ = np.linalg.qr(basis.T)
            basis = q.T
        family = SolutionFamily(big @ solution.family.particular, basis)
    if len(players) and players[0].measure.mu.size != sym.d:
        raise DimensionMismatch("solution and symmetrizer dimensions differ")
    return EquilibriumSolution(solution.kind, tuple(players), family)
