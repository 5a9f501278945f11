"""Quadratic-Gaussian equilibrium synthesis.

For every player the ansatz ``v(x) = x^T Lambda x / 2 + rho^T x`` and
``m = N(mu, Sigma^{-1})`` turns the HJB-KFP system into

* an algebraic Riccati equation for the precision matrix ``Sigma``,
* a symmetry (Sylvester) requirement on ``Lambda = R (nu Sigma + A)``,
* a linear system for the stacked means,
* a scalar identity giving the ergodic value ``lambda``.

The three game classes differ only in which linear system couples the means
and in the constant part of the averaged state cost.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import qmc

from . import matlin, riccati
from .errors import ConditionsFail, HypothesisViolation, Unstable
from .games import MeanFieldGame, MeasureMoments, NearlyIdenticalGame, NPersonGame, eval_Vhat, validate_H

SYLVESTER_RTOL = 1e-8
MEMBERSHIP_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class QuadraticValue:
    Lambda: np.ndarray
    rho: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.Lambda, x) + x @ self.rho

    def grad(self, x):
        return np.asarray(x, dtype=float) @ self.Lambda.T + self.rho


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """``N(mu, Sigma^{-1})`` parametrised by its precision matrix ``Sigma``."""

    mu: np.ndarray
    Sigma: np.ndarray

    @property
    def gamma(self):
        d = self.mu.size
        return (2.0 * np.pi) ** (-d / 2.0) * np.sqrt(np.linalg.det(self.Sigma))

    @property
    def cov(self):
        return matlin.spd_inv(self.Sigma)

    def density(self, x):
        y = np.asarray(x, dtype=float) - self.mu
        return self.gamma * np.exp(-0.5 * np.einsum("...i,ij,...j->...", y, self.Sigma, y))

    def moments(self):
        return MeasureMoments(self.mu, self.cov)


@dataclass(frozen=True, eq=False)
class AffineFeedback:
    """Control law ``alpha(x) = K x + c``."""

    K: np.ndarray
    c: np.ndarray

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.K.T + self.c


@dataclass(frozen=True, eq=False)
class PlayerSolution:
    value: QuadraticValue
    measure: GaussianMeasure
    lam: float
    feedback: AffineFeedback


@dataclass(frozen=True, eq=False)
class SolutionFamily:
    """Affine set ``particular + span(basis)`` of admissible stacked means."""

    particular: np.ndarray
    basis: np.ndarray

    @property
    def dimension(self):
        return int(self.basis.shape[0])

    def point(self, coefficients):
        return self.particular + np.asarray(coefficients, dtype=float) @ self.basis


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    kind: str
    players: tuple
    family: Optional[SolutionFamily] = None

    @property
    def N(self):
        return len(self.players)

    @property
    def d(self):
        return self.players[0].measure.mu.size

    @property
    def unique(self):
        return self.family is None

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.players])

    @property
    def feedbacks(self):
        return [p.feedback for p in self.players]

    @property
    def mu_stack(self):
        if self.kind == "n_person":
            return np.concatenate([p.measure.mu for p in self.players])
        return self.players[0].measure.mu.copy()


@dataclass
class ConditionReport:
    which: str
    are_solved: bool
    sylvester_residual: list
    sylvester_tol: list
    rank_B: int
    rank_BP: int
    size: int
    B_invertible: bool
    verdict_exists: bool
    verdict_unique: bool
    failure: Optional[str] = None
    Sigma: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "which": self.which,
            "are_solved": self.are_solved,
            "unique_spd_are_solution_checked": True,
            "sylvester_residual": [float(x) for x in self.sylvester_residual],
            "sylvester_tol": [float(x) for x in self.sylvester_tol],
            "rank_B": self.rank_B,
            "rank_BP": self.rank_BP,
            "size": self.size,
            "null_space_dimension": self.size - self.rank_B,
            "B_invertible": self.B_invertible,
            "verdict_exists": self.verdict_exists,
            "verdict_unique": self.verdict_unique,
            "failure": self.failure,
        }


# ---------------------------------------------------------------------------
# Linear systems for the means
# ---------------------------------------------------------------------------

def assemble_B_P(game, Sigma=None):
    """``B[a, b] = -Q^a_ab - delta_ab A_a^T R_a A_a / 2`` and ``P_a = -sum_j Q^a_aj Xbar_a^j``.

    ``Sigma`` is accepted for symmetry with the other assemblers but not
    needed: the Riccati equation has already been used to eliminate it.
    """
    N, d = game.N, game.d
    B = np.zeros((N * d, N * d))
    P = np.zeros(N * d)
    for a in range(N):
        rows = slice(a * d, (a + 1) * d)
        B[rows] = -game.Q[a][rows]
        B[rows, rows] -= game.A[a].T @ game.R[a] @ game.A[a] / 2.0
        P[rows] = -game.Q[a][rows] @ game.xbar_flat(a)
    return B, P


def assemble_B_P_prime(game):
    """``B' = Q + A^T R A/2 + (N-1) B/2`` and ``P' = -Q H + (1-N) B Delta / 2``.

    The identically distributed mean solves ``-B' mu = P'``.
    """
    n1 = game.N - 1
    Bp = game.Q + game.A.T @ game.R @ game.A / 2.0 + n1 * game.B / 2.0
    Pp = -game.Q @ game.H - n1 * game.B @ game.Delta / 2.0
    return Bp, Pp


def assemble_B_P_inf(mfg):
    """``B_inf = Qhat + A^T R A/2 + Bhat/2`` and ``P_inf = -Qhat H - Bhat Delta / 2``.

    The mean-field mean solves ``-B_inf mu = P_inf``.
    """
    Bi = mfg.Qhat + mfg.A.T @ mfg.R @ mfg.A / 2.0 + mfg.Bhat / 2.0
    Pi = -mfg.Qhat @ mfg.H - mfg.Bhat @ mfg.Delta / 2.0
    return Bi, Pi


def _mean_system(game):
    """``(M, b)`` with the admissible stacked means being the solutions of ``M mu = b``."""
    if isinstance(game, NPersonGame):
        return assemble_B_P(game)
    if isinstance(game, NearlyIdenticalGame):
        Bp, Pp = assemble_B_P_prime(game)
        return Bp, -Pp
    Bi, Pi = assemble_B_P_inf(game)
    return Bi, -Pi


def _player_data(game):
    """Per-player ``(A, nu, R, Q_own)`` tuples for the Riccati step."""
    if isinstance(game, NPersonGame):
        nu = game.nu
        return [(game.A[i], nu[i], game.R[i], game.block(i, i, i)) for i in range(game.N)]
    if isinstance(game, NearlyIdenticalGame):
        return [(game.A, game.nu, game.R, game.Q)]
    return [(game.A, game.nu, game.R, game.Qhat)]


def _which(game):
    if isinstance(game, NPersonGame):
        return "E/U"
    if isinstance(game, NearlyIdenticalGame):
        return "E'/U'"
    if isinstance(game, MeanFieldGame):
        return "Einf/Uinf"
    raise TypeError(f"not a game: {type(game).__name__}")


def check_conditions(game, relaxed=False):
    """Existence/uniqueness verdicts for quadratic-Gaussian solutions.

    Existence needs every SPD Riccati root to satisfy the Sylvester equation
    and the mean system to be consistent; uniqueness needs its matrix to be
    invertible.  Under the standing hypotheses the SPD root is unique, so it
    is the one tested.
    """
    which = _which(game)
    violations = validate_H(game, relaxed=relaxed)
    if violations:
        raise HypothesisViolation(violations)
    sigmas, residuals, tols = [], [], []
    for A, nu, R, Q in _player_data(game):
        S = riccati.solve_are_spd(riccati.AREProblem.from_game_data(A, nu, R, Q))
        sigmas.append(S)
        residuals.append(riccati.sylvester_residual(S, nu, R, A))
        tols.append(SYLVESTER_RTOL * (1.0 + np.linalg.norm(R @ A, 2)))
    M, b = _mean_system(game)
    ranks = matlin.rank_consistent(M, b)
    sylv_ok = all(r < t for r, t in zip(residuals, tols))
    failure = None
    if not sylv_ok:
        bad = next(i for i, (r, t) in enumerate(zip(residuals, tols)) if r >= t)
        failure = (f"sylvester: residual {residuals[bad]:.3g} >= {tols[bad]:.3g}"
                   + (f" for player {bad + 1}" if len(residuals) > 1 else ""))
    elif not ranks.consistent:
        failure = f"rank: rank(B)={ranks.rank_B} != rank([B, P])={ranks.rank_BP}"
    size = M.shape[0]
    exists = sylv_ok and ranks.consistent
    return ConditionReport(
        which=which, are_solved=True, sylvester_residual=residuals, sylvester_tol=tols,
        rank_B=ranks.rank_B, rank_BP=ranks.rank_BP, size=size,
        B_invertible=ranks.rank_B == size, verdict_exists=exists,
        verdict_unique=ranks.rank_B == size, failure=failure, Sigma=sigmas,
    )


# ---------------------------------------------------------------------------
# Coefficient relations
# ---------------------------------------------------------------------------

def feedback_from_value(v, R, A=None):
    """``alpha(x) = R^{-1} grad v(x)``; with ``A`` given, the closed loop must be stable."""
    Rinv = np.linalg.inv(R)
    fb = AffineFeedback(Rinv @ v.Lambda, Rinv @ v.rho)
    if A is not None and not matlin.is_stable(np.asarray(A) - fb.K):
        raise Unstable("closed-loop drift A - K is not stable")
    return fb


def _trace_term(A, nu, R, Sigma):
    return float(np.trace(nu @ R @ nu @ Sigma + nu @ R @ A))


def _mean_quadratic(nu, R, Sigma, mu):
    M = Sigma @ nu @ R @ nu @ Sigma / 2.0
    return float(mu @ M @ mu)


def _player(A, nu, R, Sigma, mu, F0):
    Lam = matlin.sym(R @ (nu @ Sigma + A))
    rho = -R @ nu @ Sigma @ mu
    value = QuadraticValue(Lam, rho)
    lam = F0 - _mean_quadratic(nu, R, Sigma, mu) + _trace_term(A, nu, R, Sigma)
    return PlayerSolution(value, GaussianMeasure(mu.copy(), matlin.sym(Sigma)), float(lam),
                          feedback_from_value(value, R, A))


def _F0_n_person(game, i, mus, covs):
    """Constant term of player i's state cost averaged over the other players' measures."""
    N = game.N
    H = game.Xbar[i, i]
    w = {j: mus[j] - game.Xbar[i, j] for j in range(N) if j != i}
    s = sum((game.block(i, i, j) @ w[j] for j in w), np.zeros(game.d))
    F0 = H @ game.block(i, i, i) @ H - 2.0 * H @ s
    for j in w:
        F0 += np.trace(game.block(i, j, j) @ covs[j])
        for k in w:
            F0 += w[j] @ game.block(i, j, k) @ w[k]
    return float(F0)


def _F0_nearly_identical(game, i, mu, cov):
    n1 = game.N - 1
    w = mu - game.Delta
    H = game.H
    F0 = H @ game.Q @ H - n1 * (H @ game.B @ w)
    F0 += n1 * np.trace(game.C[i] @ cov)
    F0 += n1 * (w @ game.C[i] @ w)
    F0 += n1 * (n1 - 1) * (w @ game.D[i] @ w)
    return float(F0)


def _F0_mean_field(mfg, mu, cov):
    w = mu - mfg.Delta
    H = mfg.H
    return float(H @ mfg.Qhat @ H - H @ mfg.Bhat @ w + np.trace(mfg.Chat @ cov)
                 + w @ (mfg.Chat + mfg.Dhat) @ w)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def _resolve_mean(game, report, mu):
    if report.failure is not None:
        clause = report.failure.split(":", 1)[0]
        raise ConditionsFail(clause, f"{report.which} fails: {report.failure}")
    M, b = _mean_system(game)
    if mu is not None:
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.shape != b.shape:
            raise ValueError(f"mean has shape {mu.shape}, expected {b.shape}")
        res = np.linalg.norm(M @ mu - b)
        if res > MEMBERSHIP_RTOL * (1.0 + np.linalg.norm(M, 2) * np.linalg.norm(mu) + np.linalg.norm(b)):
            raise ValueError(f"requested mean does not solve the mean system (residual {res:.3g})")
        family = None if report.verdict_unique else SolutionFamily(
            matlin.min_norm_solve(M, b), matlin.null_space(M))
        return mu, family
    if report.verdict_unique:
        return np.linalg.solve(M, b), None
    particular = matlin.min_norm_solve(M, b)
    return particular, SolutionFamily(particular, matlin.null_space(M))


def solve_n_person(game, mu=None, relaxed=False):
    """Quadratic-Gaussian solution of a general N-player game.

    When the mean system is singular but consistent the minimum-norm mean is
    used and the returned solution carries the null-space family.  A specific
    member can be requested through ``mu`` (stacked ``N*d`` vector).
    """
    report = check_conditions(game, relaxed=relaxed)
    mu_stack, family = _resolve_mean(game, report, mu)
    N, d = game.N, game.d
    mus = mu_stack.reshape(N, d)
    covs = [matlin.spd_inv(S) for S in report.Sigma]
    nu = game.nu
    players = tuple(
        _player(game.A[i], nu[i], game.R[i], report.Sigma[i], mus[i],
                _F0_n_person(game, i, mus, covs))
        for i in range(N)
    )
    return EquilibriumSolution("n_person", players, family)


def solve_nearly_identical(game, mu=None, relaxed=False):
    """Identically distributed solution; only the values ``lambda^i`` differ across players."""
    report = check_conditions(game, relaxed=relaxed)
    mu, family = _resolve_mean(game, report, mu)
    Sigma = report.Sigma[0]
    cov = matlin.spd_inv(Sigma)
    players = tuple(
        _player(game.A, game.nu, game.R, Sigma, mu, _F0_nearly_identical(game, i, mu, cov))
        for i in range(game.N)
    )
    return EquilibriumSolution("nearly_identical", players, family)


def solve_mean_field(mfg, mu=None, relaxed=False):
    report = check_conditions(mfg, relaxed=relaxed)
    mu, family = _resolve_mean(mfg, report, mu)
    Sigma = report.Sigma[0]
    player = _player(mfg.A, mfg.nu, mfg.R, Sigma, mu, _F0_mean_field(mfg, mu, matlin.spd_inv(Sigma)))
    return EquilibriumSolution("mean_field", (player,), family)


def solve(game, mu=None, relaxed=False):
    if isinstance(game, NPersonGame):
        return solve_n_person(game, mu, relaxed)
    if isinstance(game, NearlyIdenticalGame):
        return solve_nearly_identical(game, mu, relaxed)
    if isinstance(game, MeanFieldGame):
        return solve_mean_field(game, mu, relaxed)
    raise TypeError(f"not a game: {type(game).__name__}")


def family_member(game, solution, index, coefficient=1.0):
    """Family member ``particular + coefficient * basis[index]``."""
    if solution.family is None:
        raise IndexError("solution is unique; it has no family members")
    fam = solution.family
    if not 0 <= index < fam.dimension:
        raise IndexError(f"family member {index} out of range 0..{fam.dimension - 1}")
    return solve(game, mu=fam.particular + coefficient * fam.basis[index])


# ---------------------------------------------------------------------------
# Residual verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    """Largest absolute residuals over the sample points, per player and overall.

    The KFP residual is divided by the density, i.e. it is the polynomial
    factor that must vanish identically.
    """

    hjb: float
    kfp: float
    mass: float
    hjb_per_player: tuple
    kfp_per_player: tuple

    @property
    def worst(self):
        return max(self.hjb, self.kfp, self.mass)


def sample_points(mu, Sigma, n=1024, seed=0, width=5.0):
    """Scrambled Sobol points in the cube inscribed in the ball of ``width`` standard deviations.

    The ball has radius ``width * |Sigma^{-1}|^{1/2}`` around ``mu``.
    """
    d = mu.size
    radius = width * np.sqrt(np.linalg.eigvalsh(matlin.spd_inv(Sigma))[-1]) / np.sqrt(d)
    m = int(np.ceil(np.log2(max(n, 2))))
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    return mu + radius * (2.0 * u - 1.0)


def _state_cost_evaluators(solution, game):
    """One callable per player returning the averaged state cost ``f^i`` at points."""
    if isinstance(game, MeanFieldGame):
        m = solution.players[0].measure.moments()
        return [lambda X, m=m: eval_Vhat(game, m, X)]
    if isinstance(game, NearlyIdenticalGame):
        game = game.to_n_person()
    mus = np.array([p.measure.mu for p in solution.players])
    covs = [p.measure.cov for p in solution.players]
    N, d = game.N, game.d

    def f(i, X):
        Z = np.repeat(mus.reshape(1, -1), X.shape[0], axis=0)
        Z[:, i * d:(i + 1) * d] = X
        Z -= game.xbar_flat(i)
        val = np.einsum("ni,ij,nj->n", Z, game.Q[i], Z)
        val += sum(np.trace(game.block(i, j, j) @ covs[j]) for j in range(N) if j != i)
        return val

    return [lambda X, i=i: f(i, X) for i in range(N)]


def _dynamics(game, i):
    if isinstance(game, NPersonGame):
        return game.A[i], game.nu[i], game.R[i]
    return game.A, game.nu, game.R


def hjb_kfp_residual(solution, game, points=None, n_points=1024, seed=0):
    """Evaluate both PDEs in closed form at sample points around each player's mean."""
    fs = _state_cost_evaluators(solution, game)
    hjb, kfp, mass = [], [], 0.0
    for i, p in enumerate(solution.players):
        A, nu, R = _dynamics(game, i)
        Rinv = np.linalg.inv(R)
        mu, Sigma = p.measure.mu, p.measure.Sigma
        X = sample_points(mu, Sigma, n_points, seed) if points is None else np.atleast_2d(points)
        Lam, rho = p.value.Lambda, p.value.rho
        G = X @ Lam.T + rho
        Ham = 0.5 * np.einsum("ni,ij,nj->n", G, Rinv, G) - np.einsum("ni,ni->n", G, X @ A.T)
        r_hjb = -np.trace(nu @ Lam) + Ham + p.lam - fs[i](X)
        Y = X - mu
        drift = G @ Rinv.T - X @ A.T
        SY = Y @ Sigma
        r_kfp = (-(np.einsum("ni,ij,nj->n", SY, nu, SY) - np.trace(nu @ Sigma))
                 + np.einsum("ni,ni->n", SY, drift) - np.trace(Rinv @ Lam - A))
        hjb.append(float(np.max(np.abs(r_hjb))))
        kfp.append(float(np.max(np.abs(r_kfp))))
        d = mu.size
        sign, logdet = np.linalg.slogdet(Sigma)
        mass = max(mass, abs(p.measure.gamma * np.exp(0.5 * d * np.log(2 * np.pi) - 0.5 * logdet) - 1.0)
                   if sign > 0 else np.inf)
    return ResidualReport(max(hjb), max(kfp), float(mass), tuple(hjb), tuple(kfp))


def shift_lambda(solution, eps):
    """Copy of ``solution`` with every ``lambda^i`` shifted by ``eps``."""
    players = tuple(replace(p, lam=p.lam + eps) for p in solution.players)
    return replace(solution, players=players)
