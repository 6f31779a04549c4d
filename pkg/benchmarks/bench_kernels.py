"""Time the compiled kernels against the pure-Python mirror.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each case runs through the public ``integrate`` entry point with the backend
forced, so the numbers include the per-step overhead a user actually pays.
"""

import argparse
import json
import time

import numpy as np

from regdyn import _backend
from regdyn.choice import choice_map
from regdyn.dynamics import DynamicsSpec, integrate
from regdyn.game import builtin_game
from regdyn.penalty import parse_penalty

CASES = [
    ("mp gibbs T=20", "matching_pennies", DynamicsSpec(penalties=(parse_penalty("gibbs"),)), [0.5, 0, 0, 0], 20.0),
    ("rps quad T=20", "rps", DynamicsSpec(penalties=(parse_penalty("quad"),)), [0.3, 0, -0.2, 0.1, 0.4, 0], 20.0),
    ("rps tsallis:1.5 T=20", "rps", DynamicsSpec(penalties=(parse_penalty("tsallis:1.5"),)), [0.3, 0, -0.2, 0.1, 0.4, 0], 20.0),
    ("mp url T=20", "matching_pennies", DynamicsSpec(variant="url", tie="lowest"), None, 20.0),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_choice(backend, repeat, n=4, count=20000):
    mod = _backend.get(backend)
    ys = np.random.default_rng(0).uniform(-5, 5, (count, n))
    code = _backend.KIND_CODES["tsallis"]
    return best_of(lambda: [mod.choice_block(code, 1.5, y) for y in ys], repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    try:
        _backend.get("compiled")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rows = []
    for label, game, spec, y0, T in CASES:
        g = builtin_game(game)
        res = {}
        for backend in ("compiled", "python"):
            res[backend] = best_of(lambda: integrate(g, spec, y0=y0, T=T, dt=args.dt, backend=backend), args.repeat)
        rows.append((label, res["compiled"], res["python"]))
    rows.append(("tsallis:1.5 choice x20000", bench_choice("compiled", args.repeat), bench_choice("python", args.repeat)))

    # sanity: both backends give the same answer on one sample
    y = np.array([0.4, -0.1, 0.2])
    assert np.allclose(_backend.get("compiled").choice_block(2, 1.5, y), choice_map(parse_penalty("tsallis:1.5"), y), atol=1e-12)

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'compiled s':>10}  {'python s':>10}  {'speedup':>8}")
    for label, c, p in rows:
        print(f"{label:<{width}}  {c:10.3f}  {p:10.3f}  {p / c:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"case": r[0], "compiled": r[1], "python": r[2]} for r in rows], fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
