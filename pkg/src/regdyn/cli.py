"""Command-line front end.

Exit codes: 0 success, 1 a requested check failed (or a sweep run failed),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import dynamics as dyn
from .choice import ChoiceError, choice_map, conjugate_value, inverse_choice
from .game import (
    BUILTIN_GAMES,
    Game,
    GameError,
    StrategyProfile,
    find_dominated,
    game_from_json,
    is_nash,
    load_game,
)
from .penalty import PenaltyError, parse_penalty
from .trajio import TrajectoryFileError, atomic_write, read_trajectory, write_trajectory

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

SCORE_VARIANTS = (dyn.SCORE, dyn.DISCOUNTED)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    game: str
    penalty: str = "gibbs"
    variant: str = dyn.SCORE
    lam: float | None = None
    field: str | None = None
    q: float | None = None
    tie: str = "lowest"
    tau: float = 1.0
    gamma: str | None = None
    y0: str | None = None
    x0: str | None = None
    T: float = 10.0
    dt: float = 1e-3
    store_every: int = 1
    out: str = "traj.csv"
    backend: str | None = None

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "game" not in d or d["game"] is None:
            raise UsageError("a game is required (--game or config 'game')")
        d = dict(d)
        for key in ("penalty", "gamma", "y0", "x0"):
            if isinstance(d.get(key), (list, tuple)):
                d[key] = ",".join(str(v) for v in d[key])
        return cls(**{k: v for k, v in d.items() if v is not None})


def _floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in str(text).split(",") if t.strip()], dtype=float)
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r} as comma-separated numbers") from None


def resolve(cfg: RunConfig):
    """Turn a RunConfig into (game, spec, y0, x0)."""
    game = load_game(cfg.game)
    n = game.num_players
    penalties = ()
    if cfg.variant in SCORE_VARIANTS or cfg.field == dyn.GENERIC:
        penalties = tuple(parse_penalty(s) for s in cfg.penalty.split(","))
        if len(penalties) not in (1, n):
            raise UsageError(f"need 1 or {n} penalties, got {len(penalties)}")
    gammas = None
    if cfg.gamma is not None:
        gammas = tuple(_floats(cfg.gamma, "gamma"))
        if len(gammas) not in (1, n):
            raise UsageError(f"need 1 or {n} learning rates, got {len(gammas)}")
    spec = dyn.DynamicsSpec(
        variant=cfg.variant, penalties=penalties, gammas=gammas, lam=cfg.lam,
        field=cfg.field, q=cfg.q, tie=cfg.tie, tau=cfg.tau,
    )
    D = game.offsets[-1]
    if cfg.y0 is not None and cfg.x0 is not None:
        raise UsageError("give either --y0 or --x0, not both")
    y0 = x0 = None
    if cfg.y0 is not None:
        y0 = np.zeros(D) if cfg.y0 == "zeros" else _floats(cfg.y0, "y0")
        if y0.size != D:
            raise UsageError(f"y0 needs {D} entries, got {y0.size}")
    if cfg.x0 is not None:
        if cfg.x0 == "uniform":
            x0 = StrategyProfile.uniform(game).flat
        else:
            x0 = _floats(cfg.x0, "x0")
            if x0.size != D:
                raise UsageError(f"x0 needs {D} entries, got {x0.size}")
            x0 = StrategyProfile.from_flat(game, x0).flat
        if spec.variant in SCORE_VARIANTS or spec.variant == dyn.URL:
            hs = spec.penalties_for(n) if spec.variant != dyn.URL else None
            if hs is None:
                raise UsageError("the unpenalized flow starts from scores; use --y0")
            off = game.offsets
            y0 = np.concatenate([inverse_choice(hs[k], x0[off[k] : off[k + 1]]) for k in range(n)])
            x0 = None
    return game, spec, y0, x0


def run_simulation(cfg: RunConfig) -> dyn.Trajectory:
    game, spec, y0, x0 = resolve(cfg)
    return dyn.integrate(
        game, spec, y0=y0, x0=x0, T=float(cfg.T), dt=float(cfg.dt),
        store_every=int(cfg.store_every), backend=cfg.backend,
    )


def _config_from_args(args, fields) -> dict:
    d = {}
    if getattr(args, "config", None):
        try:
            d.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
    for name in fields:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    return d


RUN_FIELDS = list(RunConfig.__dataclass_fields__)


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_mapping(_config_from_args(args, RUN_FIELDS))
    traj = run_simulation(cfg)
    game = load_game(cfg.game)
    write_trajectory(cfg.out, traj, {"game_json": game.to_json(), "config": cfg.__dict__})
    print(f"wrote {len(traj)} rows to {cfg.out} ({traj.meta['backend']} backend)")
    return EXIT_OK


CHECKS = ("conservation", "time_average", "extinction", "envelope", "strict", "tracking", "gaps", "coupling_rate", "nash")
Y_CHECKS = {"conservation", "gaps", "coupling_rate"}


def _base_point(game: Game, text: str | None) -> StrategyProfile:
    if text:
        return StrategyProfile.from_flat(game, _floats(text, "base point"))
    p = StrategyProfile.uniform(game)
    if not is_nash(game, p, tol=1e-9):
        raise UsageError("uniform profile is not an equilibrium; pass --p")
    return p


def _one_based(value, what, limit) -> int:
    if value is None:
        raise UsageError(f"--{what} is required for this check")
    if not 1 <= value <= limit:
        raise UsageError(f"--{what} {value} out of range 1..{limit}")
    return value - 1


def cmd_analyze(args) -> int:
    traj = read_trajectory(args.traj)
    game_json = traj.meta.get("game_json")
    game = game_from_json(game_json) if game_json else load_game(args.game or "")
    checks = [c.strip() for c in args.check.split(",") if c.strip()]
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise UsageError(f"unknown checks {bad}; choose from {CHECKS}")
    if traj.y is None:
        need_y = [c for c in checks if c in Y_CHECKS]
        if need_y:
            raise UsageError(f"checks {need_y} need stored scores, which a strategy-field run does not have")
    spec = traj.meta.get("spec", {})
    hs = tuple(parse_penalty(s) for s in spec.get("penalties") or ())
    if len(hs) == 1:
        hs = hs * game.num_players
    gammas = spec.get("gammas") or [1.0]
    gammas = np.broadcast_to(np.array(gammas, float), (game.num_players,))
    report = an.AnalysisReport()
    dt = float(traj.meta.get("dt", np.diff(traj.times[:2])[0] if len(traj) > 1 else 1.0))

    for name in checks:
        if name == "conservation":
            p = _base_point(game, args.p)
            drift, _ = an.zero_sum_conservation(traj, game, p, hs)
            tol = args.tol if args.tol is not None else 1e-6
            report.add(an.Check(name, drift <= tol, drift, tol))
        elif name == "time_average":
            p = _base_point(game, args.p)
            avg = an.time_average(traj)
            dist = float(np.abs(avg.x[-1] - p.flat).max())
            tol = args.tol if args.tol is not None else 1e-2
            report.add(an.Check(name, dist <= tol, dist, tol, {"xbar": avg.x[-1]}))
        elif name == "extinction":
            k = _one_based(args.player, "player", game.num_players)
            a = _one_based(args.action, "action", game.action_counts[k])
            thr = args.threshold
            r = an.extinction_report(traj, k, a, thr)
            report.add(an.Check(name, r.extinct, r.first_time if r.first_time is not None else math.inf, thr))
        elif name == "envelope":
            k = _one_based(args.player, "player", game.num_players)
            a = _one_based(args.action, "action", game.action_counts[k])
            if not hs:
                raise UsageError("envelope check needs a penalty-driven run")
            dom = [d for d in find_dominated(game, k) if d.action == a]
            if not dom:
                raise UsageError(f"action {a + 1} of player {k + 1} is not strictly dominated")
            d = dom[0]
            pure = int(np.argmax(d.dominator)) if d.dominator.max() > 1 - 1e-12 else None
            r = an.rate_envelope_check(traj, k, a, hs[k], float(gammas[k]), d.margin, dominator=pure)
            report.add(an.Check(name, r.ok, float(r.violations), 0.0,
                                {"c_fit": r.c_fit, "c_bound": r.c_bound, "delta": d.margin,
                                 "bound_violations": r.bound_violations}))
        elif name == "strict":
            if not args.target:
                raise UsageError("--target (1-based pure profile) is required for the strict check")
            target = [int(t) - 1 for t in args.target.split(",")]
            r = an.strict_convergence_report(traj, game, target, hs or None, gammas, eps=args.eps)
            report.add(an.Check(name, r.converged and r.envelope_ok is not False, r.final_residual, an.CONVERGED_TOL,
                                {"hit_time": r.hit_time, "envelope_ok": r.envelope_ok}))
        elif name == "tracking":
            r = an.br_tracking_gap(traj, game, every=max(1, len(traj) // 2000))
            tol = args.tol if args.tol is not None else 0.05
            report.add(an.Check(name, r.final <= tol and r.decreasing, r.final, tol,
                                {"early_mean": r.early_mean, "late_mean": r.late_mean}))
        elif name == "gaps":
            g = an.score_gap_series(traj)
            half = len(traj) // 2
            early, late = float(g[: half + 1].max()), float(g[half:].max())
            tol = args.tol if args.tol is not None else 0.1
            report.add(an.Check(name, late <= early * (1 + tol) + 1e-9, late, tol, {"early_max": early}))
        elif name == "coupling_rate":
            err, _ = an.fenchel_derivative_check(traj, game, list(_base_point(game, args.p)), hs, gammas)
            tol = 10 * dt * dt
            report.add(an.Check(name, err <= tol, err, tol))
        elif name == "nash":
            final = an._profile(traj, traj.x[-1])
            r = is_nash(game, final, tol=args.tol if args.tol is not None else 1e-6)
            report.add(an.Check(name, r.is_nash, r.max_violation, args.tol or 1e-6))

    out = Path(args.report) if args.report else Path(args.traj).with_suffix(".report.json")
    text = report.dumps()
    atomic_write(out, lambda fh: fh.write(text + "\n"))
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK


GRID_KEYS = ("q", "gamma", "dt", "seed")


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or ():
        key, _, vals = item.partition("=")
        key = key.strip()
        if key not in GRID_KEYS:
            raise UsageError(f"grid key {key!r} not in {GRID_KEYS}")
        grid[key] = [v for v in vals.split(",") if v.strip()]
    return grid


def _apply_point(cfg: RunConfig, point: dict) -> RunConfig:
    changes = {}
    if "q" in point:
        q = float(point["q"])
        if cfg.variant == dyn.DIRECT:
            changes["q"] = q
        else:
            changes["penalty"] = f"tsallis:{q:g}"
    if "gamma" in point:
        changes["gamma"] = point["gamma"]
    if "dt" in point:
        changes["dt"] = float(point["dt"])
    if "seed" in point:
        game = load_game(cfg.game)
        rng = np.random.default_rng(int(point["seed"]))
        changes["y0"] = ",".join(f"{v:.17g}" for v in rng.normal(size=game.offsets[-1]))
        changes["x0"] = None
    return replace(cfg, **changes)


def _sweep_one(job):
    i, cfg_dict, outdir = job
    cfg = RunConfig(**cfg_dict)
    out = Path(outdir) / f"run_{i:04d}.csv"
    cfg = replace(cfg, out=str(out))
    try:
        traj = run_simulation(cfg)
        write_trajectory(out, traj, {"game_json": load_game(cfg.game).to_json(), "config": cfg.__dict__})
        xmin = float(traj.x.min())
        return {"index": i, "ok": True, "csv": out.name, "min_x": xmin, "boundary_hit": bool(xmin <= 1e-12),
                "final_x": traj.x[-1].tolist()}
    except Exception as exc:  # collected, reported in the index
        return {"index": i, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    if not grid or any(len(v) == 0 for v in grid.values()):
        print("empty grid; nothing to do")
        return EXIT_OK
    base = RunConfig.from_mapping(_config_from_args(args, RUN_FIELDS))
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    jobs = []
    for i, point in enumerate(points):
        cfg = _apply_point(base, point)
        resolve(cfg)  # fail fast on malformed points
        jobs.append((i, cfg.__dict__, args.outdir))
    Path(args.outdir).mkdir(parents=True, exist_ok=True)
    workers = args.jobs or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    for point, res in zip(points, results):
        res["params"] = point
    index = {"base": base.__dict__, "grid": grid, "runs": results}
    text = json.dumps(index, indent=2, sort_keys=True)
    atomic_write(Path(args.outdir) / "index.json", lambda fh: fh.write(text + "\n"))
    failed = [r for r in results if not r["ok"]]
    for r in results:
        status = "ok" if r["ok"] else "FAILED " + r["error"]
        extra = f" min_x={r['min_x']:.3g} boundary_hit={r['boundary_hit']}" if r["ok"] else ""
        print(f"run {r['index']:4d} {r['params']}: {status}{extra}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_games(args) -> int:
    if args.show:
        print(json.dumps(load_game(args.show).to_json(), indent=2))
        return EXIT_OK
    for name in sorted(BUILTIN_GAMES):
        g = BUILTIN_GAMES[name]()
        print(f"{name:18s} {g.num_players} players, actions {'x'.join(map(str, g.action_counts))}")
    return EXIT_OK


def cmd_choice(args) -> int:
    h = parse_penalty(args.penalty)
    y = _floats(args.y, "y")
    if y.size == 0:
        raise UsageError("--y needs at least one number")
    x = choice_map(h, y)
    print("x = " + ",".join(f"{v:.17g}" for v in x))
    print(f"h*(y) = {conjugate_value(h, y):.17g}")
    return EXIT_OK


def _add_run_options(p):
    p.add_argument("--config", help="JSON file with run options (command-line flags override it)")
    p.add_argument("--game", help="builtin name or JSON game file")
    p.add_argument("--penalty", help="penalty per player, comma separated: gibbs|quad|tsallis:<q>|renyi:<q>|logbar")
    p.add_argument("--variant", choices=dyn.VARIANTS)
    p.add_argument("--lam", type=float, help="discount factor for the discounted variant")
    p.add_argument("--field", choices=dyn.FIELDS, help="strategy field for the direct variant")
    p.add_argument("--q", type=float, help="parameter of the q-replicator or Renyi field")
    p.add_argument("--tie", choices=dyn.TIE_RULES)
    p.add_argument("--tau", type=float, help="warm-up length of the unpenalized flow")
    p.add_argument("--gamma", help="learning rate(s), comma separated")
    p.add_argument("--y0", help="initial scores (comma separated) or 'zeros'")
    p.add_argument("--x0", help="initial strategies (comma separated) or 'uniform'")
    p.add_argument("--T", type=float, help="horizon")
    p.add_argument("--dt", type=float, help="step size")
    p.add_argument("--store-every", dest="store_every", type=int, help="keep every n-th step")
    p.add_argument("--backend", choices=("compiled", "python"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regdyn", description="Regularized learning dynamics in finite games.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one run and write a trajectory CSV")
    _add_run_options(p)
    p.add_argument("--out", help="output CSV path (metadata goes next to it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="run diagnostics on a stored trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--game", help="game source when the metadata lacks one")
    p.add_argument("--check", required=True, help=f"comma separated subset of {','.join(CHECKS)}")
    p.add_argument("--player", type=int, help="1-based player index")
    p.add_argument("--action", type=int, help="1-based action index")
    p.add_argument("--p", help="base point (flat, comma separated); default uniform")
    p.add_argument("--target", help="1-based pure profile for the strict check, e.g. 1,1")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=an.EXTINCTION_THRESHOLD)
    p.add_argument("--tol", type=float)
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="run a grid of simulations in parallel")
    _add_run_options(p)
    p.add_argument("--grid", action="append", help="key=v1,v2,... with key in q, gamma, dt, seed")
    p.add_argument("--outdir", default="sweep")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("games", help="list builtin games")
    p.add_argument("--show", help="print one game as JSON")
    p.set_defaults(func=cmd_games)

    p = sub.add_parser("choice", help="evaluate a choice map (debugging)")
    p.add_argument("--penalty", required=True)
    p.add_argument("--y", required=True, help="comma separated scores")
    p.set_defaults(func=cmd_choice)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, GameError, PenaltyError, TrajectoryFileError, an.AnalysisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChoiceError, dyn.IntegrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
