"""Command-line front end.

Subcommands:
    generate   synthesize a scenario directory (loads, PV, prices)
    train      train one algorithm variant on a scenario and evaluate it
    evaluate   re-run the greedy evaluation of a finished run directory
    sweep      grid over the collective-penalty weight beta

Any failed accounting invariant or diverged training exits nonzero with
the reason on stderr.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .data import ScenarioError, generate_synthetic, load_scenario, \
    save_scenario
from .env import SimConfig
from .agent import PpoConfig
from .runner import (ALGORITHMS, ExperimentConfig, InvariantError,
                     TrainingDiverged, ensure_run, evaluate_checkpoint,
                     read_eval, run_naive, run_training, summarize)


def _add_generate(sub):
    p = sub.add_parser("generate", help="write a synthetic scenario")
    p.add_argument("--out", required=True, help="scenario directory")
    p.add_argument("--households", type=int, default=20)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pv-fraction", type=float, default=0.6,
                   help="fraction of households with rooftop PV")
    p.add_argument("--weather-persistence", type=float, default=0.7)
    p.add_argument("--seasonal-pv-drift", type=float, default=0.4)
    p.set_defaults(func=_cmd_generate)


def _cmd_generate(args):
    sc = generate_synthetic(
        args.households, args.days, seed=args.seed,
        pv_fraction=args.pv_fraction,
        weather_persistence=args.weather_persistence,
        seasonal_pv_drift=args.seasonal_pv_drift)
    save_scenario(sc, args.out)
    print(f"scenario written to {args.out} (hash {sc.config_hash()})")
    return 0


def _experiment_config(args, scenario) -> ExperimentConfig:
    sim = SimConfig(n_households=scenario.n_households,
                    horizon_days=scenario.days)
    ppo = PpoConfig()
    if args.episodes is not None:
        ppo = replace(ppo, episodes=args.episodes)
    kwargs = {}
    if args.train_days is not None:
        kwargs["train_days"] = tuple(args.train_days)
    if args.eval_days is not None:
        kwargs["eval_days"] = tuple(args.eval_days)
    return ExperimentConfig(algorithm=args.algorithm, seed=args.seed,
                            sim=sim, ppo=ppo, beta=args.beta, **kwargs)


def _add_run_args(p):
    p.add_argument("--scenario", required=True, help="scenario directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--beta", type=float, default=1.0,
                   help="collective-penalty weight (pre-mppo-cbe only)")
    p.add_argument("--train-days", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--eval-days", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))


def _add_train(sub):
    p = sub.add_parser("train", help="train and evaluate one variant")
    p.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    p.add_argument("--out", required=True, help="run output directory")
    _add_run_args(p)
    p.set_defaults(func=_cmd_train)


def _cmd_train(args):
    scenario = load_scenario(args.scenario)
    cfg = _experiment_config(args, scenario)
    if cfg.algorithm == "naive":
        row = run_naive(scenario, cfg, args.out)
    else:
        row = run_training(scenario, cfg, args.out)
    print(json.dumps(row, indent=2, sort_keys=True))
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate",
                       help="re-evaluate a finished run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_evaluate)


def _cmd_evaluate(args):
    scenario = load_scenario(args.scenario)
    row = evaluate_checkpoint(scenario, args.run)
    print(json.dumps(row, indent=2, sort_keys=True))
    return 0


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="grid over the penalty weight beta")
    p.add_argument("--algorithm", default="pre-mppo-cbe",
                   choices=ALGORITHMS)
    p.add_argument("--out", required=True,
                   help="cache/output root for the grid's runs")
    p.add_argument("--betas", default="0.5,1,3,10,30",
                   help="comma-separated beta values")
    p.add_argument("--seeds", default="0",
                   help="comma-separated training seeds")
    _add_run_args(p)
    p.set_defaults(func=_cmd_sweep)


def _cmd_sweep(args):
    scenario = load_scenario(args.scenario)
    betas = [float(b) for b in args.betas.split(",") if b]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    out = Path(args.out)
    rows = []
    for beta in betas:
        dirs = []
        for seed in seeds:
            cfg = _experiment_config(
                argparse.Namespace(**{**vars(args), "beta": beta,
                                      "seed": seed}), scenario)
            dirs.append(ensure_run(scenario, cfg, out))
        evals = [read_eval(d) for d in dirs]
        rows.append((
            beta,
            sum(e["operating_cost"] for e in evals) / len(evals),
            sum(e["peak_mean"] for e in evals) / len(evals),
        ))
        summarize(dirs, out / f"beta-{beta:g}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write("beta,operating_cost,peak_mean\n")
        for beta, cost, peak in rows:
            fh.write(f"{beta:.10g},{cost:.10g},{peak:.10g}\n")
    print(f"sweep written to {out / 'sweep.csv'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="microdsm",
        description="Microgrid demand-side management experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_train(sub)
    _add_evaluate(sub)
    _add_sweep(sub)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvariantError, TrainingDiverged, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
