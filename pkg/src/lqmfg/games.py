"""Game data model.

Three game classes are supported:

* :class:`NPersonGame` -- general heterogeneous players, state cost given by
  ``N x N`` grids of ``d x d`` blocks per player;
* :class:`NearlyIdenticalGame` -- players sharing dynamics, control cost,
  references and primary costs, differing in secondary costs ``C_i, D_i``;
* :class:`MeanFieldGame` -- the single representative player of the
  large-population limit.

Measures only ever enter the costs through their first two moments, so they are
carried around as :class:`MeasureMoments`.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import matlin
from .errors import DimensionMismatch, NotNearlyIdentical, NotSPD

BLOCK_RTOL = 1e-9


def _stack(x, N, d, name):
    """Broadcast a single ``d x d`` matrix to ``(N, d, d)`` or validate a stack."""
    x = np.array(x, dtype=float)
    if x.ndim == 0:
        x = x * np.eye(d)
    if x.ndim == 2 and x.shape == (d, d):
        x = np.broadcast_to(x, (N, d, d)).copy()
    if x.shape != (N, d, d):
        raise DimensionMismatch(f"{name} has shape {x.shape}, expected {(N, d, d)}")
    return x


def _vec(x, d, name):
    x = np.array(x, dtype=float)
    if x.ndim == 0:
        x = np.full(d, float(x))
    x = x.reshape(-1)
    if x.shape != (d,):
        raise DimensionMismatch(f"{name} has shape {x.shape}, expected ({d},)")
    return x


def _mat(x, d, name):
    x = np.array(x, dtype=float)
    if x.ndim == 0:
        x = x * np.eye(d)
    if x.shape != (d, d):
        raise DimensionMismatch(f"{name} has shape {x.shape}, expected {(d, d)}")
    return x


def _close(X, Y, scale):
    return matlin._maxabs(np.asarray(X) - np.asarray(Y)) <= BLOCK_RTOL * (1.0 + scale)


@dataclass(frozen=True, eq=False)
class NPersonGame:
    """General N-player game.

    ``Q[i]`` is player i's full ``Nd x Nd`` state-cost matrix and
    ``Xbar[i, j]`` is player i's reference position for player j.
    """

    A: np.ndarray
    sigma: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    Xbar: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise DimensionMismatch(f"Q must have shape (N, Nd, Nd), got {Q.shape}")
        N = Q.shape[0]
        if N < 1 or Q.shape[1] % N:
            raise DimensionMismatch(f"Q shape {Q.shape} is not (N, Nd, Nd)")
        d = Q.shape[1] // N
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "A", _stack(self.A, N, d, "A"))
        object.__setattr__(self, "sigma", _stack(self.sigma, N, d, "sigma"))
        object.__setattr__(self, "R", _stack(self.R, N, d, "R"))
        Xbar = np.array(self.Xbar, dtype=float)
        if Xbar.ndim == 0:
            Xbar = np.full((N, N, d), float(Xbar))
        if Xbar.shape == (N, N * d):
            Xbar = Xbar.reshape(N, N, d)
        if Xbar.shape != (N, N, d):
            raise DimensionMismatch(f"Xbar has shape {Xbar.shape}, expected {(N, N, d)}")
        object.__setattr__(self, "Xbar", Xbar)

    @classmethod
    def from_blocks(cls, A, sigma, R, Q_blocks, Xbar):
        """Build from ``Q_blocks[i][j][k]`` = block (j, k) of player i's cost."""
        Qb = np.array(Q_blocks, dtype=float)
        if Qb.ndim != 5 or Qb.shape[0] != Qb.shape[1] or Qb.shape[1] != Qb.shape[2]:
            raise DimensionMismatch(f"Q_blocks must have shape (N, N, N, d, d), got {Qb.shape}")
        N, d = Qb.shape[0], Qb.shape[3]
        Q = Qb.transpose(0, 1, 3, 2, 4).reshape(N, N * d, N * d)
        return cls(A=A, sigma=sigma, R=R, Q=Q, Xbar=Xbar)

    @property
    def N(self):
        return self.Q.shape[0]

    @property
    def d(self):
        return self.Q.shape[1] // self.N

    @property
    def nu(self):
        return np.einsum("nij,nkj->nik", self.sigma, self.sigma) / 2.0

    def block(self, i, j, k):
        d = self.d
        return self.Q[i, j * d:(j + 1) * d, k * d:(k + 1) * d]

    def xbar_flat(self, i):
        return self.Xbar[i].reshape(-1)


@dataclass(frozen=True, eq=False)
class NearlyIdenticalGame:
    """Players sharing ``A, sigma, R, Q, B, H, Delta``; ``C[i], D[i]`` may differ."""

    N: int
    A: np.ndarray
    sigma: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Delta: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        N = int(self.N)
        if N < 2:
            raise DimensionMismatch("a nearly identical game needs at least two players")
        A = matlin.as_square(self.A, "A")
        d = A.shape[0]
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "A", A)
        for name in ("sigma", "R", "Q", "B"):
            object.__setattr__(self, name, _mat(getattr(self, name), d, name))
        object.__setattr__(self, "H", _vec(self.H, d, "H"))
        object.__setattr__(self, "Delta", _vec(self.Delta, d, "Delta"))
        object.__setattr__(self, "C", _stack(self.C, N, d, "C"))
        object.__setattr__(self, "D", _stack(self.D, N, d, "D"))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.sigma @ self.sigma.T / 2.0

    def with_secondary(self, C=None, D=None):
        return NearlyIdenticalGame(
            N=self.N, A=self.A, sigma=self.sigma, R=self.R, Q=self.Q, B=self.B,
            H=self.H, Delta=self.Delta,
            C=self.C if C is None else C, D=self.D if D is None else D,
        )

    def to_n_person(self):
        """Expand into explicit cost blocks (the inverse of the (S) decomposition)."""
        N, d = self.N, self.d
        Qb = np.zeros((N, N, N, d, d))
        Xbar = np.empty((N, N, d))
        for i in range(N):
            for j in range(N):
                Xbar[i, j] = self.H if j == i else self.Delta
                for k in range(N):
                    if j == i and k == i:
                        Qb[i, j, k] = self.Q
                    elif j == i or k == i:
                        Qb[i, j, k] = self.B / 2.0
                    elif j == k:
                        Qb[i, j, k] = self.C[i]
                    else:
                        Qb[i, j, k] = self.D[i]
        return NPersonGame.from_blocks(
            A=self.A, sigma=self.sigma, R=self.R, Q_blocks=Qb, Xbar=Xbar
        )


@dataclass(frozen=True, eq=False)
class MeanFieldGame:
    """Representative player facing the population cost operator ``Vhat``."""

    A: np.ndarray
    sigma: np.ndarray
    R: np.ndarray
    Qhat: np.ndarray
    Bhat: np.ndarray
    Chat: np.ndarray
    Dhat: np.ndarray
    H: np.ndarray
    Delta: np.ndarray

    def __post_init__(self):
        A = matlin.as_square(self.A, "A")
        d = A.shape[0]
        object.__setattr__(self, "A", A)
        for name in ("sigma", "R", "Qhat", "Bhat", "Chat", "Dhat"):
            object.__setattr__(self, name, _mat(getattr(self, name), d, name))
        object.__setattr__(self, "H", _vec(self.H, d, "H"))
        object.__setattr__(self, "Delta", _vec(self.Delta, d, "Delta"))

    @classmethod
    def from_nu(cls, A, nu, R, Qhat, Bhat=0.0, Chat=0.0, Dhat=0.0, H=0.0, Delta=0.0):
        """Build from the diffusion matrix ``nu = sigma sigma^T / 2`` directly."""
        d = matlin.as_square(A).shape[0]
        nu = _mat(nu, d, "nu")
        if not matlin.is_spd(nu):
            raise NotSPD("nu must be symmetric positive definite")
        sigma = np.linalg.cholesky(2.0 * matlin.sym(nu))
        return cls(A=A, sigma=sigma, R=R, Qhat=Qhat, Bhat=Bhat, Chat=Chat, Dhat=Dhat,
                   H=H, Delta=Delta)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.sigma @ self.sigma.T / 2.0


@dataclass(frozen=True, eq=False)
class MeasureMoments:
    """Mean and covariance of a probability measure on R^d."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = _mat(self.cov, mean.shape[0], "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def gaussian(cls, mu, Sigma):
        """Moments of N(mu, Sigma^{-1}) for a precision matrix ``Sigma``."""
        return cls(mu, matlin.spd_inv(Sigma))

    @classmethod
    def point_mass(cls, x):
        x = np.array(x, dtype=float).reshape(-1)
        return cls(x, np.zeros((x.size, x.size)))

    @classmethod
    def empirical(cls, points):
        """Moments of the uniform empirical measure on the rows of ``points``."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        m = P.mean(axis=0)
        Y = P - m
        return cls(m, Y.T @ Y / P.shape[0])

    def second_moment(self, about):
        """``int (xi - about)(xi - about)^T dm``."""
        w = self.mean - np.asarray(about, dtype=float)
        return self.cov + np.outer(w, w)


# ---------------------------------------------------------------------------
# Hypotheses and structure
# ---------------------------------------------------------------------------

def validate_H(game, relaxed=False):
    """List every violated standing hypothesis (empty list when all hold).

    In relaxed mode the own-displacement block only needs
    ``Q_ii + A^T R A / 2`` positive definite.
    """
    out = []
    if isinstance(game, NPersonGame):
        for i in range(game.N):
            p = i + 1
            if abs(np.linalg.det(game.sigma[i])) <= 1e-12 * (1 + matlin._maxabs(game.sigma[i])) ** game.d:
                out.append(f"sigma singular, player {p}")
            if not matlin.is_spd(game.R[i]):
                out.append(f"R not SPD, player {p}")
            if not matlin.is_symmetric(game.Q[i]):
                out.append(f"Q not symmetric, player {p}")
            Qii = game.block(i, i, i)
            own = Qii + game.A[i].T @ game.R[i] @ game.A[i] / 2.0 if relaxed else Qii
            if not matlin.is_spd(own):
                what = "Q_ii + A^T R A / 2" if relaxed else "Q_ii"
                out.append(f"{what} not SPD, player {p}")
    elif isinstance(game, NearlyIdenticalGame):
        if abs(np.linalg.det(game.sigma)) <= 1e-12:
            out.append("sigma singular")
        if not matlin.is_spd(game.R):
            out.append("R not SPD")
        own = game.Q + game.A.T @ game.R @ game.A / 2.0 if relaxed else game.Q
        if not matlin.is_spd(own):
            out.append("Q + A^T R A / 2 not SPD" if relaxed else "Q not SPD")
        if not matlin.is_symmetric(game.B):
            out.append("B not symmetric")
        for i in range(game.N):
            if not matlin.is_symmetric(game.C[i]):
                out.append(f"C not symmetric, player {i + 1}")
            if not matlin.is_symmetric(game.D[i]):
                out.append(f"D not symmetric, player {i + 1}")
    elif isinstance(game, MeanFieldGame):
        if not matlin.is_spd(game.nu):
            out.append("nu not SPD")
        if not matlin.is_spd(game.R):
            out.append("R not SPD")
        own = game.Qhat + game.A.T @ game.R @ game.A / 2.0 if relaxed else game.Qhat
        if not matlin.is_spd(own):
            out.append("Qhat + A^T R A / 2 not SPD" if relaxed else "Qhat not SPD")
        for name in ("Bhat", "Chat", "Dhat"):
            if not matlin.is_symmetric(getattr(game, name)):
                out.append(f"{name} not symmetric")
    else:
        raise TypeError(f"not a game: {type(game).__name__}")
    return out


@dataclass(frozen=True, eq=False)
class SymmetryDecomposition:
    """Outcome of the (S) test; on success ``B, C, D, Delta`` hold one entry per player."""

    ok: bool
    B: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    Delta: Optional[np.ndarray] = None
    failure: str = ""


def check_symmetry_S(game):
    N, d = game.N, game.d
    B = np.zeros((N, d, d))
    C = np.zeros((N, d, d))
    D = np.zeros((N, d, d))
    Delta = np.zeros((N, d))
    if N == 1:
        return SymmetryDecomposition(True, B, C, D, Delta)
    for i in range(N):
        p = i + 1
        scale = matlin._maxabs(game.Q[i])
        others = [j for j in range(N) if j != i]
        j0 = others[0]
        B[i] = 2.0 * game.block(i, i, j0)
        C[i] = game.block(i, j0, j0)
        Delta[i] = game.Xbar[i, j0]
        for j in others[1:]:
            if not _close(game.block(i, i, j), game.block(i, i, j0), scale):
                return SymmetryDecomposition(
                    False, failure=f"player {p}: blocks ({p},{j0 + 1})/({p},{j + 1}) differ")
            if not _close(game.block(i, j, j), C[i], scale):
                return SymmetryDecomposition(
                    False, failure=f"player {p}: blocks ({j0 + 1},{j0 + 1})/({j + 1},{j + 1}) differ")
            if not _close(game.Xbar[i, j], Delta[i], matlin._maxabs(game.Xbar[i])):
                return SymmetryDecomposition(
                    False, failure=f"player {p}: references for players {j0 + 1}/{j + 1} differ")
        pairs = [(j, k) for j in others for k in others if j != k]
        if pairs:
            D[i] = game.block(i, *pairs[0])
            for j, k in pairs[1:]:
                if not _close(game.block(i, j, k), D[i], scale):
                    a, b = pairs[0]
                    return SymmetryDecomposition(
                        False,
                        failure=f"player {p}: blocks ({a + 1},{b + 1})/({j + 1},{k + 1}) differ")
    return SymmetryDecomposition(True, B, C, D, Delta)


def reduce_to_nearly_identical(game):
    s = check_symmetry_S(game)
    if not s.ok:
        raise NotNearlyIdentical("symmetry (S)", (), s.failure)
    if game.N < 2:
        raise NotNearlyIdentical("N", (1,), "a nearly identical game needs at least two players")
    shared = {
        "A": game.A,
        "sigma": game.sigma,
        "R": game.R,
        "Q": np.array([game.block(i, i, i) for i in range(game.N)]),
        "B": s.B,
        "H": np.array([game.Xbar[i, i] for i in range(game.N)]),
        "Delta": s.Delta,
    }
    for name, stack in shared.items():
        scale = matlin._maxabs(stack)
        for i in range(1, game.N):
            if not _close(stack[i], stack[0], scale):
                raise NotNearlyIdentical(name, (1, i + 1))
    if not matlin.is_symmetric(s.B[0]):
        raise NotNearlyIdentical("B", (1,), "the coupling block B is not symmetric")
    return NearlyIdenticalGame(
        N=game.N, A=game.A[0], sigma=game.sigma[0], R=game.R[0], Q=shared["Q"][0],
        B=s.B[0], H=shared["H"][0], Delta=s.Delta[0], C=s.C, D=s.D,
    )


def build_consensus_game(N, P_N, A, sigma, R):
    """Players penalising ``(1/(N-1)) sum_j (X^i - X^j)^T P_N (X^i - X^j)``."""
    if N < 2:
        raise DimensionMismatch("consensus needs at least two players")
    P = matlin.as_square(P_N, "P_N")
    if not matlin.is_spd(P):
        raise NotSPD("P_N must be symmetric positive definite")
    d = P.shape[0]
    return NearlyIdenticalGame(
        N=N, A=A, sigma=sigma, R=R, Q=P, B=-2.0 * P / (N - 1),
        H=np.zeros(d), Delta=np.zeros(d), C=P / (N - 1), D=np.zeros((d, d)),
    )


def consensus_limit(P_hat, A, sigma, R):
    """Mean-field limit of the consensus family with ``P_N -> P_hat``."""
    P = matlin.as_square(P_hat, "P_hat")
    if not matlin.is_spd(P):
        raise NotSPD("P_hat must be symmetric positive definite")
    d = P.shape[0]
    return MeanFieldGame(A=A, sigma=sigma, R=R, Qhat=P, Bhat=-2.0 * P, Chat=P,
                         Dhat=np.zeros((d, d)), H=np.zeros(d), Delta=np.zeros(d))


# ---------------------------------------------------------------------------
# State-cost operators
# ---------------------------------------------------------------------------

def _points(x, d):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = X.reshape(-1, d)
    return X, single


def eval_Vhat(mfg, m, x):
    """Population cost ``Vhat[m](x)``; ``x`` may be one point or an ``(n, d)`` array."""
    X, single = _points(x, mfg.d)
    Y = X - mfg.H
    w = m.mean - mfg.Delta
    val = np.einsum("ni,ij,nj->n", Y, mfg.Qhat, Y)
    val += Y @ (mfg.Bhat @ w) / 2.0 + (w @ mfg.Bhat) @ Y.T / 2.0
    val += np.trace(mfg.Chat @ m.second_moment(mfg.Delta))
    val += w @ mfg.Dhat @ w
    return float(val[0]) if single else val


def eval_V_player(game, i, m, x):
    """Player ``i``'s operator ``V^i[m](x)`` of an N-player nearly identical game.

    For the empirical measure of the other players' positions this equals the
    block form of ``F^i``.
    """
    X, single = _points(x, game.d)
    n1 = game.N - 1
    Y = X - game.H
    w = m.mean - game.Delta
    val = np.einsum("ni,ij,nj->n", Y, game.Q, Y)
    val += n1 * (Y @ (game.B @ w) / 2.0 + (w @ game.B) @ Y.T / 2.0)
    val += n1 * np.trace((game.C[i] - game.D[i]) @ m.second_moment(game.Delta))
    val += (n1 * w) @ game.D[i] @ (n1 * w)
    return float(val[0]) if single else val


def block_cost(game, i, X):
    """``F^i(X) = (X - Xbar_i)^T Q^i (X - Xbar_i)`` for stacked states ``X`` of shape (..., N, d)."""
    X = np.asarray(X, dtype=float)
    Z = X.reshape(X.shape[:-2] + (-1,)) - game.xbar_flat(i)
    return np.einsum("...i,ij,...j->...", Z, game.Q[i], Z)


def monotonicity_gap(mfg, m, n):
    """``int (Vhat[m] - Vhat[n]) d(m - n)``, which reduces to a quadratic form in ``Bhat``."""
    e = m.mean - n.mean
    return float(e @ mfg.Bhat @ e)


# ---------------------------------------------------------------------------
# Scaling families
# ---------------------------------------------------------------------------

def _one(N):
    return 1.0


@dataclass(frozen=True)
class ScalingRule:
    """How the N-player cost blocks are generated from a mean-field target.

    Every block is multiplied by ``factor(N)``; ``B, C, D`` are additionally
    divided by ``(N-1), (N-1), (N-1)^2`` unless listed in ``unscaled``.
    ``c_spread(N, i)`` optionally makes ``C_i`` player dependent.
    """

    factor: Callable[[int], float] = _one
    unscaled: frozenset = frozenset()
    c_spread: Optional[Callable[[int, int], float]] = None
    name: str = "natural"


@dataclass(frozen=True, eq=False)
class ScalingFamily:
    limit: MeanFieldGame
    rule: ScalingRule = field(default_factory=ScalingRule)

    def game(self, N):
        mfg, rule = self.limit, self.rule
        if N < 2:
            raise DimensionMismatch("scaled games need N >= 2")
        f = float(rule.factor(N))
        n1 = N - 1
        bdiv = 1.0 if "B" in rule.unscaled else n1
        cdiv = 1.0 if "C" in rule.unscaled else n1
        ddiv = 1.0 if "D" in rule.unscaled else n1 ** 2
        spread = rule.c_spread or (lambda N, i: 1.0)
        C = np.array([f * spread(N, i) * mfg.Chat / cdiv for i in range(N)])
        return NearlyIdenticalGame(
            N=N, A=mfg.A, sigma=mfg.sigma, R=mfg.R, Q=f * mfg.Qhat, B=f * mfg.Bhat / bdiv,
            H=mfg.H, Delta=mfg.Delta, C=C, D=f * mfg.Dhat / ddiv,
        )

    def __getitem__(self, N):
        return self.game(N)


def scaled_family(mfg, rule=None):
    """Sequence of nearly identical games indexed by N converging to ``mfg``."""
    return ScalingFamily(mfg, rule or ScalingRule())
