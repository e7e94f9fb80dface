"""Command-line entry point: experiments, sweeps and checks, written as CSV.

Exit codes: 0 success, 1 usage error, 2 check failure, 3 non-finite numerics.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import adgraph as ad
from . import checks
from .permops import accuracy_metrics, gt_permutation
from .sigmoid import SigmoidKind, SigmoidSpec
from .sortnet import build_odd_even, execute
from .swapcore import SwapMode, iterate_swaps, parse_mode
from .training import TrainConfig, config_from_dict, train_run
from .models import model_spec_from_config

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_NONFINITE = 0, 1, 2, 3

DEFAULT_SEEDS = (42, 84, 126, 168, 210)
DEFAULT_N = (3, 5, 7, 9, 15, 32)
FIG2_BETA = 0.05
FIG2_LOW, FIG2_HIGH = -10.0, 10.0

FIG2_COLUMNS = ["n", "mode", "sigmoid", "beta", "seed", "trials", "acc_em", "acc_ew"]
TRAIN_COLUMNS = ["step", "loss_soft", "loss_hard", "loss_total", "acc_em", "acc_ew", "lr"]
ACCUMULATE_COLUMNS = ["sigmoid", "beta", "k", "lo", "hi", "gap"]
SWEEP_COLUMNS = ["beta", "lr", "lambda", "n", "seeds", "steps", "acc_em_mean", "acc_em_std",
                 "acc_ew_mean", "acc_ew_std"]
CHECK_COLUMNS = ["check", "value", "tol", "passed", "detail"]

log = logging.getLogger("dsfnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# flag parsing
# --------------------------------------------------------------------------


def parse_int_list(text) -> list[int]:
    """``"3..9"`` (inclusive), ``"3,5,7"``, or a mix such as ``"3..5,9"``."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise UsageError(f"empty range {part!r}")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if not out:
        raise UsageError(f"no values in {text!r}")
    return out


def parse_float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals:
        raise UsageError(f"no values in {text!r}")
    return vals


def parse_sigmoids(text) -> list[SigmoidKind]:
    names = text if isinstance(text, (list, tuple)) else str(text).split(",")
    out = []
    for name in names:
        name = name.strip().lower()
        if name == "all":
            out.extend(checks.IMPLEMENTED_KINDS)
            continue
        try:
            kind = SigmoidKind(name)
        except ValueError:
            valid = ", ".join(k.value for k in checks.IMPLEMENTED_KINDS)
            raise UsageError(f"unknown sigmoid {name!r}; expected one of {valid}") from None
        if kind not in checks.IMPLEMENTED_KINDS:
            raise UsageError(f"sigmoid {name!r} is disabled in this build")
        out.append(kind)
    return out


def _common(p: argparse.ArgumentParser, *, n=False, mode=False, trials=False, train=False):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--seed", "--seeds", dest="seeds", help="seed or comma list")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--sigmoid", help="sigmoid kind, comma list, or 'all'")
    p.add_argument("--beta", help="steepness (comma list allowed in sweep)")
    if n:
        p.add_argument("--n", help="lengths: '3..32' or '3,5,7'")
    if mode:
        p.add_argument("--mode", choices=["soft", "error-free", "hard"])
    if trials:
        p.add_argument("--trials", type=int)
    if train:
        p.add_argument("--lambda", dest="lam", help="balancing weight")
        p.add_argument("--lr", help="learning rate")
        p.add_argument("--steps", type=int)
        p.add_argument("--eval-every", type=int, dest="eval_every")
        p.add_argument("--model", choices=["mlp", "attention"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsfnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fig2", help="accuracy of the raw network on random scalars")
    _common(p, n=True, mode=True, trials=True)

    p = sub.add_parser("accumulate", help="repeated swaps on one pair")
    _common(p, mode=True)
    p.add_argument("--x", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--k", type=int, help="number of repeated swaps")

    p = sub.add_parser("train", help="one training run")
    _common(p, n=True, train=True)

    p = sub.add_parser("sweep", help="grid over beta x lr x lambda")
    _common(p, n=True, train=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)

    p = sub.add_parser("props", help="all property suites")
    _common(p, trials=True)
    return parser


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


class _Opts:
    """Flags override the config file, which overrides built-in defaults."""

    _ALIASES = {"lam": ("lam", "lambda"), "seeds": ("seeds", "seed")}

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg = _load_config(getattr(args, "config", None))

    def get(self, key, default=None):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        for name in self._ALIASES.get(key, (key,)):
            if name in self.cfg:
                return self.cfg[name]
        return default


def _seeds(opts: _Opts) -> list[int]:
    return parse_int_list(opts.get("seeds", list(DEFAULT_SEEDS)))


def _positive(name, value):
    if value is None or value < 1:
        raise UsageError(f"--{name} must be at least 1")
    return value


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(rows: list[dict], columns: list[str], out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    text = buf.getvalue()
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _echo(record: dict) -> None:
    """Config echo on stderr; keeps wall-clock out of the CSV."""
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def fig2_cell(n: int, mode: SwapMode, spec: SigmoidSpec, seed: int, trials: int):
    rng = np.random.default_rng([seed, n])
    data = rng.uniform(FIG2_LOW, FIG2_HIGH, size=(trials, n))
    plan = build_odd_even(n)
    triples = []
    with ad.no_grad():
        for s in data:
            _, P = execute(plan, s, spec, mode)
            triples.append((s, P, gt_permutation(s).perm))
    return accuracy_metrics(triples)


def cmd_fig2(opts: _Opts) -> int:
    trials = _positive("trials", opts.get("trials", 1000))
    ns = parse_int_list(opts.get("n", list(DEFAULT_N)))
    if min(ns) < 1:
        raise UsageError("--n values must be positive")
    mode = opts.get("mode")
    modes = [parse_mode(mode)] if mode else [SwapMode.SOFT, SwapMode.ERROR_FREE]
    kinds = parse_sigmoids(opts.get("sigmoid", "all"))
    betas = parse_float_list(opts.get("beta", FIG2_BETA))
    seeds = _seeds(opts)
    rows = []
    for n, m, kind, beta, seed in itertools.product(ns, modes, kinds, betas, seeds):
        em, ew = fig2_cell(n, m, SigmoidSpec(kind, beta), seed, trials)
        rows.append({"n": n, "mode": m.value, "sigmoid": kind.value, "beta": beta,
                     "seed": seed, "trials": trials, "acc_em": em, "acc_ew": ew})
        log.info("fig2 n=%d %s %s em=%.4f ew=%.4f", n, m.value, kind.value, em, ew)
    _write_csv(rows, FIG2_COLUMNS, opts.get("out"))
    return EXIT_OK


def cmd_accumulate(opts: _Opts) -> int:
    k = _positive("k", opts.get("k", 20))
    x, y = float(opts.get("x", 4.0)), float(opts.get("y", 0.0))
    mode = parse_mode(opts.get("mode", "soft"))
    kinds = parse_sigmoids(opts.get("sigmoid", "all"))
    betas = parse_float_list(opts.get("beta", 1.0))
    rows = []
    for kind, beta in itertools.product(kinds, betas):
        traj = iterate_swaps(x, y, SigmoidSpec(kind, beta), k, mode)
        if not np.all(np.isfinite(traj)):
            raise ad.NonFiniteError("non-finite value while iterating swaps")
        for step, (lo, hi) in enumerate(traj, start=1):
            rows.append({"sigmoid": kind.value, "beta": beta, "k": step, "lo": float(lo),
                         "hi": float(hi), "gap": float(abs(hi - lo))})
    _write_csv(rows, ACCUMULATE_COLUMNS, opts.get("out"))
    return EXIT_OK


def _train_config(opts: _Opts, seed: int, **override) -> TrainConfig:
    base = {k: v for k, v in opts.cfg.items()}
    cfg = config_from_dict(base).to_dict()
    for key, flag in (("n", "n"), ("steps", "steps"), ("eval_every", "eval_every")):
        v = getattr(opts.args, flag, None)
        if v is not None:
            cfg[key] = v if key != "n" else _single(parse_int_list(v), "--n")
    for key, flag in (("lam", "lam"), ("lr", "lr"), ("beta", "beta")):
        v = getattr(opts.args, flag, None)
        if v is not None:
            cfg[key] = _single(parse_float_list(v), f"--{flag}")
    if getattr(opts.args, "sigmoid", None):
        cfg["sigmoid"] = _single(parse_sigmoids(opts.args.sigmoid), "--sigmoid").value
    else:
        parse_sigmoids(cfg["sigmoid"])
    cfg.update(override)
    cfg["seed"] = seed
    return config_from_dict(cfg)


def _single(values, flag):
    if len(values) != 1:
        raise UsageError(f"{flag} takes a single value here")
    return values[0]


def _model_spec(opts: _Opts, config: TrainConfig):
    model_cfg = dict(opts.cfg)
    if getattr(opts.args, "model", None):
        model_cfg["model"] = opts.args.model
    try:
        return model_spec_from_config(model_cfg, config.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(opts: _Opts) -> int:
    seeds = parse_int_list(opts.get("seeds", [DEFAULT_SEEDS[0]]))
    config = _train_config(opts, _single(seeds, "--seed"))
    model_spec = _model_spec(opts, config)
    t0 = time.perf_counter()
    _, history = train_run(config, model_spec)
    _write_csv(history, TRAIN_COLUMNS, opts.get("out"))
    _echo({"experiment": "train", "config": config.to_dict(), "model": repr(model_spec),
           "seed": config.seed, "wall_clock_s": round(time.perf_counter() - t0, 3)})
    return EXIT_OK


def _sweep_cell(payload):
    config_dict, model_cfg = payload
    config = config_from_dict(config_dict)
    spec = model_spec_from_config(model_cfg, config.dim)
    _, history = train_run(config, spec)
    last = history[-1]
    return last["acc_em"], last["acc_ew"]


def cmd_sweep(opts: _Opts) -> int:
    betas = parse_float_list(opts.get("beta", 20.0))
    lrs = parse_float_list(opts.get("lr", 1e-3))
    lams = parse_float_list(opts.get("lam", 0.1))
    seeds = _seeds(opts)
    workers = _positive("workers", opts.args.workers)
    base = _train_config(_Opts(argparse.Namespace(
        config=opts.args.config, n=opts.args.n, steps=opts.args.steps,
        eval_every=opts.args.eval_every, sigmoid=opts.args.sigmoid)), seeds[0])
    model_cfg = dict(opts.cfg)
    if opts.args.model:
        model_cfg["model"] = opts.args.model
    _model_spec(opts, base)

    cells = sorted(itertools.product(betas, lrs, lams))
    jobs = []
    for beta, lr, lam in cells:
        for seed in seeds:
            d = base.to_dict()
            d.update(beta=beta, lr=lr, lam=lam, seed=seed)
            jobs.append((d, model_cfg))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]

    rows = []
    per = len(seeds)
    for c, (beta, lr, lam) in enumerate(cells):
        res = np.array(results[c * per:(c + 1) * per])
        rows.append({"beta": beta, "lr": lr, "lambda": lam, "n": base.n,
                     "seeds": " ".join(str(s) for s in seeds), "steps": base.steps,
                     "acc_em_mean": float(res[:, 0].mean()),
                     "acc_em_std": float(res[:, 0].std()),
                     "acc_ew_mean": float(res[:, 1].mean()),
                     "acc_ew_std": float(res[:, 1].std())})
    _write_csv(rows, SWEEP_COLUMNS, opts.get("out"))
    return EXIT_OK


def _report(results: list[checks.CheckResult], opts: _Opts) -> int:
    _write_csv([r.row() for r in results], CHECK_COLUMNS, opts.get("out"))
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("failed checks: %s", ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def cmd_gradcheck(opts: _Opts) -> int:
    seed = parse_int_list(opts.get("seeds", [0]))[0]
    return _report(checks.gradient_suite(seed), opts)


def cmd_props(opts: _Opts) -> int:
    trials = _positive("trials", opts.get("trials", 1000))
    seed = parse_int_list(opts.get("seeds", [0]))[0]
    return _report(checks.property_suite(trials, seed), opts)


COMMANDS = {"fig2": cmd_fig2, "accumulate": cmd_accumulate, "train": cmd_train,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "props": cmd_props}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return COMMANDS[args.command](_Opts(args))
    except UsageError as exc:
        sys.stderr.write(f"dsfnet: error: {exc}\n")
        return EXIT_USAGE
    except ad.NonFiniteError as exc:
        sys.stderr.write(f"dsfnet: non-finite numerics: {exc}\n")
        return EXIT_NONFINITE
    except (ValueError, TypeError) as exc:
        sys.stderr.write(f"dsfnet: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
