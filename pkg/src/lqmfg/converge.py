"""Large-population limit studies.

For a scaling family of nearly identical games the quadratic-Gaussian
solutions are compared with the mean-field solution at the level of their
coefficients, which fully determine the value functions and densities.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import matlin
from .errors import ConditionsFail, LQGameError
from .synthesis import solve_mean_field, solve_nearly_identical

COLUMNS = ("Sigma", "mu", "lambda", "Lambda", "rho", "density")
ZERO_TOL = 1e-6
MIN_SLOPE = -0.25


@dataclass
class LimitRow:
    N: int
    ok: bool
    failure: str = ""
    unique: bool = True
    distances: dict = field(default_factory=dict)


@dataclass
class LimitStudy:
    family: object
    N_list: list
    rows: list
    limit: object

    def column(self, name):
        """Distances for the successfully solved N, as ``(N, values)`` arrays."""
        ok = [r for r in self.rows if r.ok]
        return np.array([r.N for r in ok]), np.array([r.distances[name] for r in ok])

    def converged(self, name):
        """Converged when the last distance is negligible, or when the last three
        strictly decrease along a log-log slope steeper than ``MIN_SLOPE``."""
        N, v = self.column(name)
        if v.size == 0:
            return False
        if v[-1] < ZERO_TOL:
            return True
        if v.size < 3 or not np.all(np.diff(v[-3:]) < 0):
            return False
        return _slope(N[-3:], v[-3:]) < MIN_SLOPE

    def rate(self, name):
        """Least-squares slope of log-distance against log N (NaN if undefined)."""
        N, v = self.column(name)
        keep = v > 1e-14
        return _slope(N[keep], v[keep]) if keep.sum() >= 2 else float("nan")

    @property
    def flags(self):
        return {c: self.converged(c) for c in COLUMNS}

    @property
    def all_converged(self):
        return bool(self.rows) and all(r.ok for r in self.rows[-3:]) and all(self.flags.values())

    @property
    def failures(self):
        return [(r.N, r.failure) for r in self.rows if not r.ok]

    def to_dict(self):
        p = self.limit.players[0]
        return {
            "limit": {"Sigma": p.measure.Sigma.tolist(), "mu": p.measure.mu.tolist(), "lambda": p.lam},
            "rows": [{"N": r.N, "ok": r.ok, "unique": r.unique, "failure": r.failure,
                      **{k: r.distances.get(k) for k in COLUMNS}} for r in self.rows],
            "converged": self.flags,
            "all_converged": self.all_converged,
            "rate": {c: _finite(self.rate(c)) for c in COLUMNS},
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "ok"] + [f"dist_{c}" for c in COLUMNS] + ["failure"])
            for r in self.rows:
                w.writerow([r.N, int(r.ok)] + [repr(r.distances[c]) if r.ok else "" for c in COLUMNS]
                           + [r.failure])
            w.writerow(["rate", ""] + [repr(self.rate(c)) for c in COLUMNS] + [""])


def _finite(x):
    return None if not np.isfinite(x) else float(x)


def _slope(N, v):
    return float(np.polyfit(np.log(N), np.log(v), 1)[0])


def _density_gap(mN, m, n_points=4096, seed=0):
    """``sup |m_N - m|`` approximated on quasi-random points covering both Gaussians."""
    d = m.mu.size
    r = 6.0 * np.sqrt(max(np.linalg.eigvalsh(m.cov)[-1], np.linalg.eigvalsh(mN.cov)[-1]))
    lo = np.minimum(m.mu, mN.mu) - r
    hi = np.maximum(m.mu, mN.mu) + r
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(int(np.log2(n_points)))
    X = np.vstack([lo + (hi - lo) * u, m.mu, mN.mu])
    return float(np.max(np.abs(mN.density(X) - m.density(X))))


def _distances(sol, lim):
    p = lim.players[0]
    q = sol.players[0]
    return {
        "Sigma": matlin.spectral_norm(matlin.sym(q.measure.Sigma - p.measure.Sigma)),
        "mu": float(np.linalg.norm(q.measure.mu - p.measure.mu)),
        "lambda": float(np.max(np.abs(sol.lambdas - p.lam))),
        "Lambda": matlin.spectral_norm(matlin.sym(q.value.Lambda - p.value.Lambda)),
        "rho": float(np.linalg.norm(q.value.rho - p.value.rho)),
        "density": _density_gap(q.measure, p.measure),
    }


def run_limit_study(family, N_list):
    """Solve ``family[N]`` for each N and measure distances to the mean-field solution.

    The limit game must admit a unique solution; failures at finite N are
    recorded, never raised.
    """
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be strictly increasing")
    lim = solve_mean_field(family.limit)
    if not lim.unique:
        raise ConditionsFail("Uinf", "mean-field mean system is singular; the limit is not unique")
    rows = []
    for N in N_list:
        try:
            sol = solve_nearly_identical(family.game(N))
        except (LQGameError, ValueError) as e:
            rows.append(LimitRow(N, False, f"{type(e).__name__}: {e}"))
            continue
        rows.append(LimitRow(N, True, "", sol.unique, _distances(sol, lim)))
    return LimitStudy(family, N_list, rows, lim)
