"""JSON game specifications and solution documents.

Matrices are row-major nested lists.  Wherever a ``d x d`` matrix is expected
a scalar ``s`` stands for ``s * I``, and wherever a vector is expected a
scalar fills every component.
"""

import json

import numpy as np

from .errors import DimensionMismatch, SpecError
from .games import (MeanFieldGame, NearlyIdenticalGame, NPersonGame, ScalingRule, build_consensus_game,
                    consensus_limit, scaled_family)
from .synthesis import (AffineFeedback, EquilibriumSolution, GaussianMeasure, PlayerSolution, QuadraticValue,
                        SolutionFamily)

KINDS = ("n_person", "nearly_identical", "mean_field", "consensus")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise SpecError(f"cannot read {path}: {e}") from None


def _get(doc, key, default=None, required=False):
    if key in doc:
        return doc[key]
    if required:
        raise SpecError(f"missing field '{key}'")
    return default


def _arr(x, key):
    try:
        a = np.array(x, dtype=float)
    except (TypeError, ValueError):
        raise SpecError(f"field '{key}' is not numeric") from None
    if not np.all(np.isfinite(a)):
        raise SpecError(f"field '{key}' has non-finite entries")
    return a


def _infer_d(doc):
    if "d" in doc:
        return _int(doc["d"], "d")
    keys = ["A", "P_N", "P_hat", "Qhat", "Q_blocks", "sigma", "nu", "R"]
    if doc.get("kind") == "nearly_identical":
        keys.append("Q")
    for key in keys:
        if key in doc:
            a = _arr(doc[key], key)
            if a.ndim >= 2:
                return a.shape[-1]
    return 1


def _int(x, key):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or int(x) != x:
        raise SpecError(f"field '{key}' must be an integer")
    return int(x)


def _mat(doc, key, d, default=None):
    x = _get(doc, key, default, required=default is None)
    a = _arr(x, key)
    if a.ndim == 0:
        return a * np.eye(d)
    if a.shape != (d, d):
        raise DimensionMismatch(f"'{key}' has shape {a.shape}, expected {(d, d)}")
    return a


def _vec(doc, key, d, default=0.0):
    a = _arr(_get(doc, key, default), key)
    if a.ndim == 0:
        return np.full(d, float(a))
    if a.shape != (d,):
        raise DimensionMismatch(f"'{key}' has shape {a.shape}, expected ({d},)")
    return a


def _per_player(doc, key, N, d, default=None):
    """One ``d x d`` matrix for everybody or a list of N of them."""
    a = _arr(_get(doc, key, default, required=default is None), key)
    if a.ndim == 0:
        return np.broadcast_to(a * np.eye(d), (N, d, d)).copy()
    if a.shape == (d, d):
        return np.broadcast_to(a, (N, d, d)).copy()
    if a.ndim == 1 and a.shape == (N,):
        return np.array([s * np.eye(d) for s in a])
    if a.shape != (N, d, d):
        raise DimensionMismatch(f"'{key}' has shape {a.shape}, expected {(d, d)} or {(N, d, d)}")
    return a


def _scaling(doc):
    """``{"factor": {"a": a, "p": p}, "unscaled": [...], "c_spread": {"a": a, "p": p}}``.

    The factor is ``1 + a N^{-p}``; ``C_i`` is multiplied by ``1 + a (-1)^i N^{-p}``.
    """
    s = _get(doc, "scaling", {}) or {}
    if not isinstance(s, dict):
        raise SpecError("'scaling' must be an object")
    fa = s.get("factor", {"a": 0.0, "p": 1.0})
    ca = s.get("c_spread")
    unscaled = frozenset(s.get("unscaled", []))
    if not unscaled <= {"B", "C", "D"}:
        raise SpecError("'unscaled' may only list B, C, D")
    try:
        a, p = float(fa.get("a", 0.0)), float(fa.get("p", 1.0))
        spread = None
        if ca is not None:
            sa, sp = float(ca.get("a", 0.0)), float(ca.get("p", 1.0))
            spread = lambda N, i: 1.0 + sa * (-1.0) ** i * N ** (-sp)  # noqa: E731
    except (AttributeError, TypeError, ValueError):
        raise SpecError("malformed 'scaling' object") from None
    return ScalingRule(factor=lambda N: 1.0 + a * N ** (-p), unscaled=unscaled, c_spread=spread,
                       name=s.get("name", "custom" if s else "natural"))


def game_from_spec(doc):
    """Build the game described by a parsed JSON document."""
    if not isinstance(doc, dict):
        raise SpecError("specification must be a JSON object")
    kind = _get(doc, "kind", required=True)
    if kind not in KINDS:
        raise SpecError(f"unknown kind '{kind}'; expected one of {', '.join(KINDS)}")
    d = _infer_d(doc)
    if kind == "mean_field":
        A = _mat(doc, "A", d)
        R = _mat(doc, "R", d)
        common = {k: _mat(doc, k, d, 0.0) for k in ("Bhat", "Chat", "Dhat")}
        H, Delta = _vec(doc, "H", d), _vec(doc, "Delta", d)
        if "nu" in doc:
            return MeanFieldGame.from_nu(A, _mat(doc, "nu", d), R, _mat(doc, "Qhat", d), H=H, Delta=Delta, **common)
        return MeanFieldGame(A=A, sigma=_mat(doc, "sigma", d), R=R, Qhat=_mat(doc, "Qhat", d), H=H, Delta=Delta,
                             **common)
    N = _int(_get(doc, "N", required=True), "N")
    if N < 1:
        raise SpecError("'N' must be positive")
    if kind == "consensus":
        return build_consensus_game(N, _mat(doc, "P_N", d), _mat(doc, "A", d), _mat(doc, "sigma", d),
                                    _mat(doc, "R", d))
    if kind == "nearly_identical":
        return NearlyIdenticalGame(
            N=N, A=_mat(doc, "A", d), sigma=_mat(doc, "sigma", d), R=_mat(doc, "R", d), Q=_mat(doc, "Q", d),
            B=_mat(doc, "B", d, 0.0), H=_vec(doc, "H", d), Delta=_vec(doc, "Delta", d),
            C=_per_player(doc, "C", N, d, 0.0), D=_per_player(doc, "D", N, d, 0.0),
        )
    A = _per_player(doc, "A", N, d)
    sigma = _per_player(doc, "sigma", N, d)
    R = _per_player(doc, "R", N, d)
    Xbar = _arr(_get(doc, "Xbar", 0.0), "Xbar")
    if "Q_blocks" in doc:
        Qb = _arr(doc["Q_blocks"], "Q_blocks")
        if Qb.shape != (N, N, N, d, d):
            raise DimensionMismatch(f"'Q_blocks' has shape {Qb.shape}, expected {(N, N, N, d, d)}")
        return NPersonGame.from_blocks(A=A, sigma=sigma, R=R, Q_blocks=Qb, Xbar=Xbar)
    Q = _arr(_get(doc, "Q", required=True), "Q")
    if Q.shape != (N, N * d, N * d):
        raise DimensionMismatch(f"'Q' has shape {Q.shape}, expected {(N, N * d, N * d)}")
    return NPersonGame(A=A, sigma=sigma, R=R, Q=Q, Xbar=Xbar)


def family_from_spec(doc):
    """Scaling family for limit studies.

    A nearly identical specification is lifted to the mean-field game whose
    natural scaling reproduces it at the given N.
    """
    kind = _get(doc, "kind", required=True)
    d = _infer_d(doc)
    if kind == "consensus":
        P_hat = _mat(doc, "P_hat", d, _get(doc, "P_N", required=True))
        lim = consensus_limit(P_hat, _mat(doc, "A", d), _mat(doc, "sigma", d), _mat(doc, "R", d))
    elif kind == "mean_field":
        lim = game_from_spec(doc)
    elif kind == "nearly_identical":
        lim = _lift(game_from_spec(doc))
    else:
        raise SpecError("limit studies need a 'mean_field', 'nearly_identical' or 'consensus' specification")
    return scaled_family(lim, _scaling(doc))


def _lift(g):
    """Mean-field game whose natural scaling reproduces ``g`` at its own N."""
    if not np.allclose(g.C, g.C[0]) or not np.allclose(g.D, g.D[0]):
        raise SpecError("limit studies need player-independent C and D")
    n1 = g.N - 1
    return MeanFieldGame(A=g.A, sigma=g.sigma, R=g.R, Qhat=g.Q, Bhat=n1 * g.B, Chat=n1 * g.C[0],
                         Dhat=n1 ** 2 * g.D[0], H=g.H, Delta=g.Delta)


def load_game(path):
    return game_from_spec(read_json(path))


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

def _list(a):
    # Adding zero turns -0.0 into 0.0 so that outputs diff cleanly.
    return (np.asarray(a, dtype=float) + 0.0).tolist()


def solution_to_dict(sol):
    players = [{
        "Lambda": _list(p.value.Lambda),
        "rho": _list(p.value.rho),
        "mu": _list(p.measure.mu),
        "Sigma": _list(p.measure.Sigma),
        "gamma": float(p.measure.gamma),
        "lambda": float(p.lam),
        "K": _list(p.feedback.K),
        "c": _list(p.feedback.c),
    } for p in sol.players]
    family = None
    if sol.family is not None:
        family = {"particular": _list(sol.family.particular), "basis": _list(sol.family.basis),
                  "dimension": sol.family.dimension}
    return {"kind": sol.kind, "N": sol.N, "d": sol.d, "unique": sol.unique, "players": players,
            "family": family}


def solution_from_dict(doc):
    try:
        players = tuple(
            PlayerSolution(
                QuadraticValue(_arr(p["Lambda"], "Lambda"), _arr(p["rho"], "rho")),
                GaussianMeasure(_arr(p["mu"], "mu"), _arr(p["Sigma"], "Sigma")),
                float(p["lambda"]),
                AffineFeedback(_arr(p["K"], "K"), _arr(p["c"], "c")),
            ) for p in doc["players"])
        fam = doc.get("family")
        family = None if fam is None else SolutionFamily(_arr(fam["particular"], "particular"),
                                                         _arr(fam["basis"], "basis").reshape(-1, len(fam["particular"])))
        return EquilibriumSolution(doc["kind"], players, family)
    except (KeyError, TypeError) as e:
        raise SpecError(f"malformed solution document: {e}") from None


def load_solution(path):
    return solution_from_dict(read_json(path))


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, default=_default)
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text + "\n")
    return text


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")
