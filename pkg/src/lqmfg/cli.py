"""Command-line interface: ``lqmfg {check,solve,simulate,limit,consensus-demo}``.

Exit codes
----------
0   success (check: exists and unique)
2   unreadable or malformed specification
3   dimension mismatch
4   family member index out of range
5   standing hypotheses violated
10  check: solutions exist but are not unique
20  no quadratic-Gaussian solution (failing clause printed)
30  unstable closed loop
31  numerical blow-up during simulation
40  the mean-field limit fails existence or uniqueness
41  limit study did not converge
"""

import argparse
import sys

import numpy as np

from . import io
from .converge import run_limit_study
from .errors import (ConditionsFail, DimensionMismatch, HypothesisViolation, LQGameError, NumericalBlowup,
                     SpecError, Unstable)
from .games import build_consensus_game
from .simulate import Deviation, SimConfig, closed_loop, euler_maruyama, nash_deviation_test
from .synthesis import check_conditions, family_member, hjb_kfp_residual, solve

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DIM = 3
EXIT_MEMBER = 4
EXIT_HYPOTHESIS = 5
EXIT_NOT_UNIQUE = 10
EXIT_NOT_EXISTS = 20
EXIT_UNSTABLE = 30
EXIT_BLOWUP = 31
EXIT_LIMIT = 40
EXIT_NO_CONVERGENCE = 41


class _Exit(Exception):
    def __init__(self, code, message=""):
        self.code = code
        super().__init__(message)


def _err(msg):
    print(f"lqmfg: {msg}", file=sys.stderr)


def _load(path):
    try:
        return io.load_game(path)
    except SpecError as e:
        raise _Exit(EXIT_PARSE, str(e)) from None
    except DimensionMismatch as e:
        raise _Exit(EXIT_DIM, str(e)) from None
    except (LQGameError, ValueError) as e:
        raise _Exit(EXIT_PARSE, str(e)) from None


def _report(game, relaxed):
    try:
        return check_conditions(game, relaxed=relaxed)
    except HypothesisViolation as e:
        raise _Exit(EXIT_HYPOTHESIS, f"standing hypotheses violated: {e}") from None
    except LQGameError as e:
        raise _Exit(EXIT_NOT_EXISTS, f"riccati: {e}") from None


def _emit(doc, path=None):
    text = io.dump_json(doc)
    print(text)
    if path:
        io.dump_json(doc, path)


def cmd_check(args):
    game = _load(args.spec)
    rep = _report(game, args.relaxed)
    _emit(rep.to_dict(), args.out)
    if not rep.verdict_exists:
        _err(f"{rep.which} fails: {rep.failure}")
        return EXIT_NOT_EXISTS
    return EXIT_OK if rep.verdict_unique else EXIT_NOT_UNIQUE


def _solve(game, args):
    rep = _report(game, args.relaxed)
    if not rep.verdict_exists:
        raise _Exit(EXIT_NOT_EXISTS, f"{rep.which} fails: {rep.failure}")
    try:
        sol = solve(game, relaxed=args.relaxed)
    except ConditionsFail as e:
        raise _Exit(EXIT_NOT_EXISTS, str(e)) from None
    selection = "unique" if sol.unique else "min_norm"
    if args.family_member is not None:
        try:
            sol = family_member(game, sol, args.family_member, args.coefficient)
        except IndexError as e:
            raise _Exit(EXIT_MEMBER, str(e)) from None
        selection = f"member {args.family_member}"
    return rep, sol, selection


def cmd_solve(args):
    game = _load(args.spec)
    rep, sol, selection = _solve(game, args)
    res = hjb_kfp_residual(sol, game)
    doc = io.solution_to_dict(sol)
    doc["selection"] = selection
    doc["residual"] = {"hjb": res.hjb, "kfp": res.kfp, "mass": res.mass}
    doc["conditions"] = rep.to_dict()
    _emit(doc, args.out)
    return EXIT_OK


def _config(args):
    return SimConfig(dt=args.dt, T=args.T, replicas=args.replicas, seed=args.seed, burn_in=args.burn_in)


def _parse_deviation(text, d):
    try:
        player, entry, delta = text.split(":")
        return Deviation.entry(int(player) - 1, int(entry), float(delta), d)
    except ValueError:
        raise _Exit(EXIT_PARSE, f"bad --deviate '{text}', expected player:entry:delta") from None
    except IndexError as e:
        raise _Exit(EXIT_DIM, str(e)) from None


def cmd_simulate(args):
    game = _load(args.spec)
    try:
        sol = io.load_solution(args.solution)
    except SpecError as e:
        raise _Exit(EXIT_PARSE, str(e)) from None
    try:
        config = _config(args)
    except ValueError as e:
        raise _Exit(EXIT_PARSE, str(e)) from None
    system = closed_loop(game, sol)
    est = euler_maruyama(system, config, trace_path=args.trace)
    mu = np.array([p.measure.mu for p in sol.players])
    cov = np.array([p.measure.cov for p in sol.players])
    doc = {"estimate": est.to_dict(), "targets": {"mu": mu.tolist(), "cov": cov.tolist(),
                                                 "lambda": sol.lambdas.tolist()},
           "within_3se": est.check(mu, cov, sol.lambdas)}
    if args.deviate:
        devs = [_parse_deviation(t, sol.d) for t in args.deviate]
        out = []
        for dev in devs:
            if not 0 <= dev.player < sol.N:
                raise _Exit(EXIT_DIM, f"player {dev.player + 1} out of range 1..{sol.N}")
            rep = nash_deviation_test(game, sol, dev.player, [dev], config)
            out.extend(r.to_dict() for r in rep.results)
        doc["deviations"] = out
    _emit(doc, args.out)
    return EXIT_OK


def cmd_limit(args):
    try:
        family = io.family_from_spec(io.read_json(args.spec))
    except SpecError as e:
        raise _Exit(EXIT_PARSE, str(e)) from None
    except DimensionMismatch as e:
        raise _Exit(EXIT_DIM, str(e)) from None
    try:
        N_list = [int(x) for x in args.N.split(",")]
    except ValueError:
        raise _Exit(EXIT_PARSE, f"bad --N '{args.N}'") from None
    try:
        study = run_limit_study(family, N_list)
    except (ConditionsFail, HypothesisViolation, LQGameError) as e:
        raise _Exit(EXIT_LIMIT, f"mean-field limit: {e}") from None
    if args.csv:
        study.to_csv(args.csv)
    _emit(study.to_dict(), args.out)
    return EXIT_OK if study.all_converged else EXIT_NO_CONVERGENCE


def cmd_consensus_demo(args):
    d = args.d
    A = np.diag(_floats(args.A_diag, d))
    sigma = np.sqrt(2.0 * args.nu) * np.eye(d)
    game = build_consensus_game(args.N, args.P * np.eye(d), A, sigma, args.r * np.eye(d))
    rep = _report(game, False)
    sol = solve(game)
    doc = {"conditions": rep.to_dict(), "family_dimension": 0 if sol.unique else sol.family.dimension,
           "members": []}
    members = [sol] if sol.unique else [
        family_member(game, sol, 0, t) for t in np.linspace(-1.0, 1.0, max(args.members, 1))]
    for k, m in enumerate(members):
        res = hjb_kfp_residual(m, game)
        entry = {"mu": m.players[0].measure.mu.tolist(), "lambda": m.lambdas.tolist(),
                 "residual": max(res.hjb, res.kfp)}
        if args.simulate:
            cfg = SimConfig(T=args.T, replicas=args.replicas, seed=args.seed + k)
            est = euler_maruyama(closed_loop(game, m), cfg)
            entry["mean_hat"] = est.mean_hat.tolist()
            entry["within_3se"] = est.check(np.array([p.measure.mu for p in m.players]), cost=m.lambdas)
        doc["members"].append(entry)
    _emit(doc, args.out)
    return EXIT_OK if rep.verdict_unique else EXIT_NOT_UNIQUE


def _floats(text, d):
    vals = [float(x) for x in text.split(",")]
    if len(vals) == 1:
        vals = vals * d
    if len(vals) != d:
        raise _Exit(EXIT_DIM, f"expected {d} values, got {len(vals)}")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="lqmfg", description="Quadratic-Gaussian solutions of ergodic LQ games.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="evaluate existence and uniqueness conditions")
    c.add_argument("spec")
    c.add_argument("--relaxed", action="store_true", help="only require Q_ii + A^T R A / 2 positive definite")
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("solve", help="synthesize the quadratic-Gaussian solution")
    s.add_argument("spec")
    s.add_argument("--out")
    s.add_argument("--relaxed", action="store_true")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--family-member", type=int, metavar="k",
                   help="select particular + coefficient * basis[k] (0-based) of a solution family")
    g.add_argument("--min-norm", action="store_true", help="use the minimum-norm mean (default)")
    s.add_argument("--coefficient", type=float, default=1.0)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="Monte Carlo check of a solution")
    m.add_argument("spec")
    m.add_argument("solution")
    m.add_argument("--dt", type=float, default=1e-3)
    m.add_argument("--T", type=float, default=200.0)
    m.add_argument("--burn-in", type=float, default=0.2)
    m.add_argument("--replicas", type=int, default=32)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--deviate", action="append", metavar="player:entry:delta",
                   help="perturb entry (0-based, row-major) of player's (1-based) feedback matrix K")
    m.add_argument("--trace", help="write the path of replica 0 as CSV")
    m.add_argument("--out")
    m.set_defaults(func=cmd_simulate)

    lim = sub.add_parser("limit", help="large-population convergence study")
    lim.add_argument("spec")
    lim.add_argument("--N", default=",".join(str(2 ** k) for k in range(1, 8)))
    lim.add_argument("--csv")
    lim.add_argument("--out")
    lim.set_defaults(func=cmd_limit)

    cd = sub.add_parser("consensus-demo", help="consensus game and its solution family")
    cd.add_argument("--N", type=int, default=3)
    cd.add_argument("--d", type=int, default=2)
    cd.add_argument("--A-diag", default="0,1", help="diagonal of the drift (comma separated)")
    cd.add_argument("--P", type=float, default=1.0)
    cd.add_argument("--nu", type=float, default=0.5)
    cd.add_argument("--r", type=float, default=1.0)
    cd.add_argument("--members", type=int, default=3)
    cd.add_argument("--simulate", action="store_true")
    cd.add_argument("--T", type=float, default=200.0)
    cd.add_argument("--replicas", type=int, default=32)
    cd.add_argument("--seed", type=int, default=0)
    cd.add_argument("--out")
    cd.set_defaults(func=cmd_consensus_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Exit as e:
        if str(e):
            _err(str(e))
        return e.code
    except Unstable as e:
        _err(f"unstable: {e}")
        return EXIT_UNSTABLE
    except NumericalBlowup as e:
        _err(f"blow-up: {e}")
        return EXIT_BLOWUP
    except DimensionMismatch as e:
        _err(str(e))
        return EXIT_DIM


if __name__ == "__main__":
    sys.exit(main())
