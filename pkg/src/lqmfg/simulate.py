"""Monte Carlo validation of synthesized equilibria.

Under affine feedback every player's state is an Ornstein-Uhlenbeck process
``dX = ((A - K) X - c) dt + sigma dW`` and every running cost is a quadratic
form in the stacked state ``Z``.  The simulator therefore only accumulates the
first and second moments of ``Z`` per (replica, batch); means, covariances
and costs, together with batch-means standard errors, follow linearly.
"""

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matlin
from .errors import DimensionMismatch, NumericalBlowup, Unstable
from .games import MeanFieldGame, NearlyIdenticalGame, NPersonGame

TREND_RATIO = 1.5


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 200.0
    burn_in: float = 0.2
    replicas: int = 32
    seed: int = 0
    n_batches: int = 16
    blowup: float = 1e8
    chunk: int = 4096
    trace_every: int = 100

    def __post_init__(self):
        if not (self.dt > 0 and self.T > self.dt):
            raise ValueError("need 0 < dt < T")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.replicas < 1 or self.n_batches < 1:
            raise ValueError("replicas and n_batches must be positive")
        if self.n_steps - self.first_step < self.n_batches:
            raise ValueError("averaging window shorter than the number of batches")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def first_step(self):
        return int(round(self.burn_in * self.n_steps))


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """Running cost ``Z^T G Z + 2 g^T Z + g0`` on the stacked state."""

    G: np.ndarray
    g: np.ndarray
    g0: float

    def from_moments(self, S1, S2):
        """Average cost given averaged ``Z`` and ``Z Z^T`` (leading axes broadcast)."""
        return np.einsum("...ij,ij->...", S2, self.G) + 2.0 * S1 @ self.g + self.g0

    def stationary(self, mean, cov):
        return float(np.trace(self.G @ (cov + np.outer(mean, mean))) + 2.0 * self.g @ mean + self.g0)


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Independent players ``dX_i = (M_i X_i - c_i) dt + sigma_i dW_i`` and their running costs."""

    M: np.ndarray
    c: np.ndarray
    sigma: np.ndarray
    costs: tuple = ()

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.ndim == 2:
            M = M[None]
        N, d = M.shape[0], M.shape[1]
        c = np.array(self.c, dtype=float).reshape(N, d)
        sigma = np.array(self.sigma, dtype=float)
        sigma = np.broadcast_to(sigma if sigma.ndim == 3 else sigma.reshape(-1, d, d)[0], (N, d, d)).copy()
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sigma", sigma)
        for q in self.costs:
            if q.G.shape != (N * d, N * d):
                raise DimensionMismatch(f"cost matrix has shape {q.G.shape}, expected {(N * d, N * d)}")

    @classmethod
    def from_feedbacks(cls, A, feedbacks, sigma, costs=()):
        A = np.array(A, dtype=float)
        N = len(feedbacks)
        A = np.broadcast_to(A if A.ndim == 3 else A.reshape(1, *A.shape[-2:]), (N,) + A.shape[-2:])
        return cls(np.array([a - f.K for a, f in zip(A, feedbacks)]),
                   np.array([f.c for f in feedbacks]), sigma, tuple(costs))

    @property
    def N(self):
        return self.M.shape[0]

    @property
    def d(self):
        return self.M.shape[1]

    def is_stable(self):
        return all(matlin.is_stable(m) for m in self.M)

    def stationary_moments(self):
        """Exact invariant mean and covariance of the stacked state."""
        N, d = self.N, self.d
        mean = np.concatenate([np.linalg.solve(m, c) for m, c in zip(self.M, self.c)])
        cov = np.zeros((N * d, N * d))
        for i in range(N):
            s = self.sigma[i]
            cov[i * d:(i + 1) * d, i * d:(i + 1) * d] = matlin.solve_lyapunov(self.M[i], s @ s.T)
        return mean, cov

    def exact_costs(self):
        mean, cov = self.stationary_moments()
        return np.array([q.stationary(mean, cov) for q in self.costs])


@dataclass(frozen=True, eq=False)
class ErgodicEstimate:
    """Time-and-replica averages with batch-means standard errors."""

    mean_hat: np.ndarray
    cov_hat: np.ndarray
    cost_hat: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    cost_se: np.ndarray
    cov_joint: np.ndarray
    trend_ratio: float
    n_samples: int
    non_ergodic: bool = False

    def check(self, mean=None, cov=None, cost=None, k=3.0):
        """Flags telling whether each target lies within ``k`` standard errors."""
        out = {}
        if mean is not None:
            out["mean"] = bool(np.all(np.abs(self.mean_hat - mean) <= k * self.mean_se))
        if cov is not None:
            out["cov"] = bool(np.all(np.abs(self.cov_hat - cov) <= k * self.cov_se))
        if cost is not None:
            out["cost"] = bool(np.all(np.abs(self.cost_hat - cost) <= k * self.cost_se))
        return out

    def to_dict(self):
        return {
            "mean_hat": self.mean_hat.tolist(),
            "mean_se": self.mean_se.tolist(),
            "cov_hat": self.cov_hat.tolist(),
            "cov_se": self.cov_se.tolist(),
            "cost_hat": self.cost_hat.tolist(),
            "cost_se": self.cost_se.tolist(),
            "trend_ratio": self.trend_ratio,
            "non_ergodic": self.non_ergodic,
            "n_samples": self.n_samples,
        }


# ---------------------------------------------------------------------------
# Certificates and moment equations
# ---------------------------------------------------------------------------

def stability_certificate(M):
    """SPD ``P`` with ``M^T P + P M = -I``; ``x^T P x`` is a Lyapunov function."""
    M = matlin.as_square(M, "M")
    return matlin.solve_lyapunov(M.T, np.eye(M.shape[0]))


def moment_odes(M, c, sigma, x0, T, dt, cov0=None):
    """RK4 integration of ``m' = M m - c`` and ``v' = M v + v M^T + sigma sigma^T``.

    Returns ``(t, means, covs)`` sampled at every step.
    """
    M = matlin.as_square(M, "M")
    d = M.shape[0]
    c = np.asarray(c, dtype=float).reshape(d)
    sigma = np.asarray(sigma, dtype=float).reshape(d, d)
    S = sigma @ sigma.T
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    m = np.empty((n + 1, d))
    v = np.empty((n + 1, d, d))
    m[0] = np.asarray(x0, dtype=float).reshape(d)
    v[0] = np.zeros((d, d)) if cov0 is None else np.asarray(cov0, dtype=float)

    def fm(x):
        return M @ x - c

    def fv(x):
        return M @ x + x @ M.T + S

    for k in range(n):
        a, b = m[k], v[k]
        k1, l1 = fm(a), fv(b)
        k2, l2 = fm(a + dt / 2 * k1), fv(b + dt / 2 * l1)
        k3, l3 = fm(a + dt / 2 * k2), fv(b + dt / 2 * l2)
        k4, l4 = fm(a + dt * k3), fv(b + dt * l3)
        m[k + 1] = a + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        v[k + 1] = b + dt / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
    return t, m, v


# ---------------------------------------------------------------------------
# Cost forms
# ---------------------------------------------------------------------------

def _control_cost(K, c, R, i, N, d):
    """``alpha^T R alpha / 2`` with ``alpha = K x_i + c`` as a form on the stacked state."""
    E = np.zeros((d, N * d))
    E[:, i * d:(i + 1) * d] = np.eye(d)
    KE = K @ E
    return QuadraticCost(KE.T @ R @ KE / 2.0, KE.T @ R @ c / 2.0, float(c @ R @ c) / 2.0)


def _add(a, b):
    return QuadraticCost(a.G + b.G, a.g + b.g, a.g0 + b.g0)


def state_cost_forms(game, solution):
    """Per-player state-cost forms with the population frozen at the solution (mean-field case)."""
    if isinstance(game, NearlyIdenticalGame):
        game = game.to_n_person()
    if isinstance(game, NPersonGame):
        out = []
        for i in range(game.N):
            x = game.xbar_flat(i)
            Q = game.Q[i]
            out.append(QuadraticCost(Q, -Q @ x, float(x @ Q @ x)))
        return out
    if isinstance(game, MeanFieldGame):
        p = solution.players[0]
        mom = p.measure.moments()
        w = mom.mean - game.Delta
        H = game.H
        g = -game.Qhat @ H + game.Bhat @ w / 2.0
        g0 = (H @ game.Qhat @ H - H @ game.Bhat @ w
              + np.trace(game.Chat @ mom.second_moment(game.Delta)) + w @ game.Dhat @ w)
        return [QuadraticCost(game.Qhat.copy(), g, float(g0))]
    raise TypeError(f"not a game: {type(game).__name__}")


def _dynamics(game):
    if isinstance(game, NearlyIdenticalGame):
        game = game.to_n_person()
    if isinstance(game, NPersonGame):
        return game.A, game.sigma, game.R
    return game.A[None], game.sigma[None], game.R[None]


@dataclass(frozen=True, eq=False)
class Deviation:
    """Unilateral change ``K -> K + dK``, ``c -> c + dc`` of one player's feedback (0-based)."""

    player: int
    dK: np.ndarray
    dc: Optional[np.ndarray] = None

    @classmethod
    def entry(cls, player, index, delta, d):
        dK = np.zeros(d * d)
        if not 0 <= index < d * d:
            raise IndexError(f"feedback entry {index} out of range 0..{d * d - 1}")
        dK[index] = delta
        return cls(player, dK.reshape(d, d))


def closed_loop(game, solution, deviation=None):
    """Closed-loop dynamics and running costs under the equilibrium feedbacks."""
    A, sigma, R = _dynamics(game)
    N, d = sigma.shape[0], sigma.shape[1]
    fbs = [(p.feedback.K.copy(), p.feedback.c.copy()) for p in solution.players]
    if len(fbs) != N:
        raise DimensionMismatch(f"solution has {len(fbs)} players, game has {N}")
    if deviation is not None:
        i = deviation.player
        if not 0 <= i < N:
            raise IndexError(f"player {i + 1} out of range 1..{N}")
        K, c = fbs[i]
        K = K + np.asarray(deviation.dK, dtype=float).reshape(d, d)
        if deviation.dc is not None:
            c = c + np.asarray(deviation.dc, dtype=float).reshape(d)
        fbs[i] = (K, c)
    states = state_cost_forms(game, solution)
    costs = tuple(_add(states[i], _control_cost(fbs[i][0], fbs[i][1], R[i], i, N, d)) for i in range(N))
    return ClosedLoop(np.array([A[i] - fbs[i][0] for i in range(N)]),
                      np.array([f[1] for f in fbs]), sigma, costs)


# ---------------------------------------------------------------------------
# Euler-Maruyama
# ---------------------------------------------------------------------------

def _threads():
    try:
        return max(1, int(os.environ.get("LQMFG_THREADS", "1")))
    except ValueError:
        return 1


def _generators(seed, replicas, N):
    # One counter-based stream per (replica, player): changing the replica count
    # never alters the paths of the replicas that remain.
    return [[np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(r, p))))
             for p in range(N)] for r in replicas]


def _run_group(system, config, replicas, x0, trace):
    N, d = system.N, system.d
    n = N * d
    dt = config.dt
    F = np.eye(n)
    h = np.zeros(n)
    S = np.zeros((n, n))
    for i in range(N):
        sl = slice(i * d, (i + 1) * d)
        F[sl, sl] += dt * system.M[i]
        h[sl] = -dt * system.c[i]
        S[sl, sl] = np.sqrt(dt) * system.sigma[i]
    Ft, St = F.T, S.T
    gens = _generators(config.seed, replicas, N)
    R = len(replicas)
    nb = config.n_batches
    S1 = np.zeros((R, nb, n))
    S2 = np.zeros((R, nb, n, n))
    counts = np.zeros(nb)
    Z = np.broadcast_to(x0, (R, n)).copy()
    k0, n_steps = config.first_step, config.n_steps
    window = n_steps - k0
    rows = []
    for start in range(0, n_steps, config.chunk):
        L = min(config.chunk, n_steps - start)
        xi = np.empty((L, R, n))
        for r in range(R):
            for p in range(N):
                xi[:, r, p * d:(p + 1) * d] = gens[r][p].standard_normal((L, d))
        noise = xi @ St + h
        traj = np.empty((L, R, n))
        for k in range(L):
            traj[k] = Z
            Z = Z @ Ft + noise[k]
        if not np.all(np.isfinite(Z)) or np.max(np.abs(traj)) > config.blowup:
            raise NumericalBlowup(f"state exceeded {config.blowup:g} before t = {(start + L) * dt:g}")
        if trace is not None and 0 in replicas:
            r0 = replicas.index(0)
            for k in range(0, L, config.trace_every):
                if (start + k) % config.trace_every == 0:
                    rows.append(((start + k) * dt, traj[k, r0]))
        steps = np.arange(start, start + L)
        keep = steps >= k0
        if not keep.any():
            continue
        batch = (steps[keep] - k0) * nb // window
        kept = traj[keep]
        for b in np.unique(batch):
            sel = kept[batch == b]
            # Per-replica reductions keep the sums independent of how replicas are grouped.
            for r in range(R):
                z = np.ascontiguousarray(sel[:, r])
                S1[r, b] += z.sum(axis=0)
                S2[r, b] += z.T @ z
            counts[b] += sel.shape[0]
    return S1, S2, counts, rows


def euler_maruyama(system, config=None, x0=None, trace_path=None, allow_unstable=False):
    """Simulate ``system`` and estimate its invariant moments and ergodic costs.

    ``x0`` is the common initial stacked state (default: the exact stationary
    mean when the system is stable, zero otherwise).  With ``trace_path`` the
    path of replica 0 is written as CSV rows ``t, player, x_1..x_d``.
    """
    config = config or SimConfig()
    stable = system.is_stable()
    if not stable and not allow_unstable:
        raise Unstable("closed-loop drift is not stable")
    N, d = system.N, system.d
    n = N * d
    if x0 is None:
        x0 = system.stationary_moments()[0] if stable else np.zeros(n)
    x0 = np.asarray(x0, dtype=float).reshape(n)
    groups = [list(g) for g in np.array_split(np.arange(config.replicas), min(_threads(), config.replicas))]
    trace = [] if trace_path is not None else None
    if len(groups) == 1:
        results = [_run_group(system, config, groups[0], x0, trace)]
    else:
        with ThreadPoolExecutor(len(groups)) as ex:
            results = list(ex.map(lambda g: _run_group(system, config, g, x0, trace), groups))
    S1 = np.concatenate([r[0] for r in results])
    S2 = np.concatenate([r[1] for r in results])
    counts = results[0][2]
    rows = [row for r in results for row in r[3]]
    S1 /= counts[None, :, None]
    S2 /= counts[None, :, None, None]
    if trace_path is not None:
        _write_trace(trace_path, rows, N, d)
    return _estimate(system, S1, S2)


def _estimate(system, S1, S2):
    R, nb, n = S1.shape
    N, d = system.N, system.d
    ns = R * nb
    m = S1.mean(axis=(0, 1))
    # Second moments about the grand mean, one value per (replica, batch).
    C = S2 - np.einsum("rbi,j->rbij", S1, m) - np.einsum("i,rbj->rbij", m, S1) + np.outer(m, m)
    cov = matlin.sym(C.mean(axis=(0, 1)))
    cov_se = C.reshape(ns, n, n).std(axis=0, ddof=1) / np.sqrt(ns)
    mean_se = S1.reshape(ns, n).std(axis=0, ddof=1) / np.sqrt(ns)
    if system.costs:
        J = np.array([q.from_moments(S1, S2) for q in system.costs])
        cost, cost_se = J.mean(axis=(1, 2)), J.reshape(len(system.costs), ns).std(axis=1, ddof=1) / np.sqrt(ns)
    else:
        cost, cost_se = np.zeros(0), np.zeros(0)
    q = max(1, nb // 4)
    spread = np.einsum("rbii->rb", C)
    first, last = spread[:, :q].mean(), spread[:, -q:].mean()
    ratio = float(last / first) if first > 0 else np.inf
    blocks = [slice(i * d, (i + 1) * d) for i in range(N)]
    return ErgodicEstimate(
        mean_hat=m.reshape(N, d), cov_hat=np.array([cov[b, b] for b in blocks]),
        cost_hat=cost, mean_se=mean_se.reshape(N, d), cov_se=np.array([cov_se[b, b] for b in blocks]),
        cost_se=cost_se, cov_joint=cov, trend_ratio=ratio, n_samples=ns,
        non_ergodic=bool(ratio > TREND_RATIO),
    )


def _write_trace(path, rows, N, d):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "player"] + [f"x{k + 1}" for k in range(d)])
        for t, z in sorted(rows, key=lambda r: r[0]):
            for p in range(N):
                w.writerow([f"{t:.6g}", p + 1] + [repr(float(v)) for v in z[p * d:(p + 1) * d]])


def simulate_equilibrium(game, solution, config=None, x0=None, trace_path=None):
    return euler_maruyama(closed_loop(game, solution), config, x0=x0, trace_path=trace_path)


# ---------------------------------------------------------------------------
# Nash deviations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeviationResult:
    deviation: Deviation
    skipped: bool
    lam: float
    estimate: float = np.nan
    se: float = np.nan
    exact: float = np.nan
    reason: str = ""

    @property
    def passes(self):
        """Estimated cost not below the equilibrium value beyond three standard errors."""
        return self.skipped or self.estimate >= self.lam - 3.0 * self.se

    def to_dict(self):
        return {
            "player": self.deviation.player + 1,
            "dK": np.asarray(self.deviation.dK).tolist(),
            "skipped": self.skipped,
            "reason": self.reason,
            "lambda": self.lam,
            "cost_hat": self.estimate,
            "cost_se": self.se,
            "cost_exact": self.exact,
            "passes": self.passes,
        }


@dataclass
class DeviationReport:
    player: int
    results: list = field(default_factory=list)

    @property
    def passes(self):
        return all(r.passes for r in self.results)


def nash_deviation_test(game, solution, player_index, deviations, config=None):
    """Simulate unilateral deviations of one player (0-based) against the equilibrium.

    Each deviation is either a :class:`Deviation` or a ``dK`` matrix.  Unstable
    deviations are skipped with a warning.
    """
    lam = float(solution.players[player_index].lam)
    report = DeviationReport(player_index)
    d = solution.d
    for dev in deviations:
        if not isinstance(dev, Deviation):
            dev = Deviation(player_index, np.asarray(dev, dtype=float).reshape(d, d))
        system = closed_loop(game, solution, dev)
        if not system.is_stable():
            warnings.warn(f"deviation {np.asarray(dev.dK).ravel().tolist()} destabilises the closed loop; skipped",
                          RuntimeWarning, stacklevel=2)
            report.results.append(DeviationResult(dev, True, lam, reason="unstable"))
            continue
        est = euler_maruyama(system, config)
        report.results.append(DeviationResult(
            dev, False, lam, float(est.cost_hat[player_index]), float(est.cost_se[player_index]),
            float(system.exact_costs()[player_index])))
    return report
