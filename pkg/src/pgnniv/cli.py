"""``pgnniv`` command line: generate, train, evaluate, sweep.

Outputs default to ``$PGNNIV_OUTPUT_ROOT`` (or ``./pgnniv-output``) when no
``--out`` is given.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation as ev
from .checkpoint import Checkpoint, merge_config, read_config_file
from .constitutive import KINDS
from .datagen import VARIANTS, ProblemSpec, generate, load_dataset, save_dataset
from .experiments import SWEEP_AXES, SWEEP_DEFAULTS, SweepSpec, run_sweep, score, train_checkpoint, write_evaluation
from .trainer import TrainingDiverged

OUTPUT_ROOT_ENV = "PGNNIV_OUTPUT_ROOT"
EXIT_USAGE = 2
EXIT_DIVERGED = 3

log = logging.getLogger("pgnniv")


class CliError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "pgnniv-output"))


def _out_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else output_root() / default_name


# flag name -> config key, for the flags shared by train and sweep
CONFIG_FLAGS = {
    "variant": "variant",
    "grid": "n",
    "hidden": "hidden",
    "model": "model",
    "m": "m",
    "c0": "c0",
    "c1": "c1",
    "c2": "c2",
    "c3": "c3",
    "lr": "learning_rate",
    "iters": "max_iters",
    "beta1": "beta1",
    "beta2": "beta2",
    "eps": "eps",
    "log_every": "log_every",
    "checkpoint_every": "checkpoint_every",
    "seed": "seed",
}


def _add_config_flags(p: argparse.ArgumentParser, with_data_flags: bool) -> None:
    # every default is None so that a config file value is only overridden by an explicit flag
    p.add_argument("--config", help="JSON file of configuration keys (flags take precedence)")
    p.add_argument("--model", choices=KINDS, default=None, help="constitutive model (default scalar-k)")
    p.add_argument("--m", type=int, default=None, help="hidden channels of the cnn3l model (default 5)")
    p.add_argument("--hidden", type=int, nargs="+", default=None, help="ROM hidden widths (default 15 15)")
    p.add_argument("--c0", type=float, default=None, help="prediction-error weight (default 1e7)")
    p.add_argument("--c1", type=float, default=None, help="flow-conservation weight (default 1e2)")
    p.add_argument("--c2", type=float, default=None, help="essential-BC weight (default 1e3)")
    p.add_argument("--c3", type=float, default=None, help="natural-BC weight (default 1e3)")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (default 3e-4)")
    p.add_argument("--iters", type=int, default=None, help="training iterations (default 20000)")
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--log-every", type=int, default=None, help="trace cadence (default 100)")
    p.add_argument("--checkpoint-every", type=int, default=None, help="checkpoint cadence (default 5000)")
    p.add_argument("--seed", type=int, default=None, help="initialisation seed (default 0)")
    if with_data_flags:
        p.add_argument("--variant", default=None, help=f"problem to generate data for ({', '.join(VARIANTS)})")
        p.add_argument("--grid", type=int, default=None, help="grid nodes n (default 10)")


def _config_from_args(args, extra: dict | None = None):
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {key: getattr(args, flag, None) for flag, key in CONFIG_FLAGS.items()}
    overrides.update(extra or {})
    return merge_config(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgnniv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--variant", required=True, help=f"one of {', '.join(VARIANTS)} (p1/p2/exp accepted)")
    g.add_argument("--n-samples", type=int, default=10_000)
    g.add_argument("--grid", type=int, default=10, help="grid nodes n")
    g.add_argument("--noise", type=float, default=0.0, help="relative noise level p")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--abs-flux", action="store_true", help="store |q| instead of the signed flux")
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a ROM and constitutive model on a dataset")
    t.add_argument("--dataset", required=True, help="directory written by `generate`")
    t.add_argument("--out", help="run directory")
    _add_config_flags(t, with_data_flags=False)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="error tables, profiles and BC maps for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--band", type=float, default=ev.DIAGONAL_BAND, help="|g1-g2| exclusion band for q and k")
    e.add_argument("--map-resolution", type=int, default=100, help="BC map cells per side (0 skips the map)")
    e.add_argument("--export-constitutive", action="store_true", help="also write the learned k curve")
    e.add_argument("--u-range", type=float, nargs=2, default=(0.0, 1.0), metavar=("LO", "HI"))
    e.add_argument("--points", type=int, default=101)
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="train and score one run per value of a parameter")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", type=float, nargs="+", help="strictly increasing; defaults depend on the axis")
    s.add_argument("--n-samples", type=int, default=10_000, help="dataset size when not swept")
    s.add_argument("--noise", type=float, default=0.0, help="noise level when not swept")
    s.add_argument("--eval-samples", type=int, default=2000, help="size of the clean scoring set")
    s.add_argument("--jobs", type=int, default=1, help="sweep points run concurrently")
    s.add_argument("--out", help="sweep directory")
    _add_config_flags(s, with_data_flags=True)
    s.set_defaults(func=cmd_sweep)
    return parser


def cmd_generate(args) -> int:
    spec = ProblemSpec(args.variant, n=args.grid, N=args.n_samples, noise_p=args.noise, seed=args.seed)
    out = _out_dir(args, f"data/{spec.variant}")
    ds = generate(spec)
    try:
        save_dataset(ds, out, abs_flux=args.abs_flux)
    except OSError as err:
        raise CliError(f"cannot write dataset to {out}: {err}") from err
    print(f"wrote {len(ds)} samples of {spec.variant} (n={spec.n}, noise p={spec.noise_p}) to {out}")
    print(f"  train {ds.n_train}  test {len(ds) - ds.n_train}")
    return 0


def cmd_train(args) -> int:
    ds = _load_dataset(args.dataset)
    cfg = _config_from_args(args, {"variant": ds.spec.variant, "n": ds.spec.n})
    out = _out_dir(args, f"runs/{cfg.model}-{cfg.variant}")
    try:
        ck, trace = train_checkpoint(cfg, ds, out)
    except TrainingDiverged as err:
        print(f"error: training diverged at iteration {err.iteration}: {err}", file=sys.stderr)
        print(f"partial trace in {out / 'trace.csv'}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {cfg.model} on {cfg.variant} for {cfg.max_iters} iterations; final cf {trace.final_cf:.6g}")
    for name, p in ck.model.named_parameters().items():
        vals = " ".join(f"{v:.6g}" for v in p.data.ravel())
        print(f"  {name}: {vals}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return 0


def cmd_evaluate(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    ds = _load_dataset(args.dataset)
    if ds.spec.variant != ck.config.variant:
        log.warning("checkpoint was trained on %s data, scoring against %s", ck.config.variant, ds.spec.variant)
    result = score(ck, ds, args.split, args.band)
    curve = (args.u_range[0], args.u_range[1], args.points) if args.export_constitutive else None
    out = _out_dir(args, f"eval/{ck.config.model}-{ds.spec.variant}")
    write_evaluation(ck, result, out, args.map_resolution, curve,
                     meta={"dataset": str(args.dataset), "split": args.split})
    print(f"{'field':<6}{'min':>11}{'Q1':>11}{'Q2':>11}{'Q3':>11}{'max':>11}  flagged excluded")
    for name, s in result.summary.items():
        row = "".join(f"{v:11.3e}" for v in s.as_row())
        print(f"{name:<6}{row}  {s.n_flagged:7d} {s.n_excluded:8d}")
    print(f"outputs in {out}")
    return 0


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    values = args.values if args.values else list(SWEEP_DEFAULTS[args.axis])
    spec = SweepSpec(args.axis, list(values), base, dataset_size=args.n_samples, noise_p=args.noise,
                     eval_samples=args.eval_samples)
    out = _out_dir(args, f"sweeps/{args.axis}-{base.model}-{base.variant}")
    results = run_sweep(spec, out, jobs=args.jobs)
    print(f"{args.axis:>14}  status  mean e2r[u] (se)         mean e2r[q] (se)         mean e2r[k] (se)")
    for r in results:
        cells = "".join(
            f"  {r.mean.get(f, float('nan')):9.3e} ({r.stderr.get(f, float('nan')):8.2e})" for f in ev.FIELDS
        )
        print(f"{r.value:>14}  {r.status:6}{cells}  {r.error}")
    print(f"aggregate: {out / 'aggregate.csv'}")
    failed = sum(r.status != "ok" for r in results)
    return 1 if failed == len(results) else 0


def _load_dataset(path):
    try:
        return load_dataset(path)
    except FileNotFoundError as err:
        raise CliError(str(err)) from err


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE if isinstance(err, CliError) else 1


if __name__ == "__main__":
    sys.exit(main())
