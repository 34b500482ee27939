"""Command-line harness: train, eval, plan and bench."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .neural import CheckpointError, save_params
from .pipeline import PlanResult, plan, problem_from_record, rollout_greedy, write_plan_csv
from .postopt import OptConfig, solve_lm
from .sac import SacConfig, evaluate, greedy_action, load_policy, train, write_curve
from .sim import ScenarioConfig, load_scenario, observe, reset
from .sim.config import BUNDLED

EXIT_OK, EXIT_ERROR, EXIT_FALLBACK = 0, 1, 2

EVAL_HEADER = ("scenario", "runs", "success_rate", "avg_reward")
BENCH_HEADER = ("phase", "mean_ms", "p95_ms")
SUMMARY_HEADER = ("seed", "converged", "fallback_engaged", "post_check_passed", "iterations",
                  "rl_collided", "rl_jerk", "opt_jerk", "jerk_ratio",
                  "min_clearance_rl", "min_clearance_opt", "reason")


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for fallback here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- loading

def _read_yaml(path: str, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what}: no such file: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise UsageError(f"{what}: YAML parse error: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise UsageError(f"{what}: expected a mapping at top level")
    return raw


def _scenario(source: str) -> ScenarioConfig:
    try:
        return load_scenario(source)
    except ValueError as exc:
        msg = str(exc)
        raise UsageError(msg if msg.startswith("scenario") else f"scenario: {msg}") from None


def _sac_config(path: str | None) -> SacConfig:
    if path is None:
        raw = yaml.safe_load(resources.files("lanemerge.configs").joinpath("sac_desk.yaml").read_text())
    else:
        raw = _read_yaml(path, "sac-config")
    try:
        return SacConfig.from_dict(raw)
    except ValueError as exc:
        raise UsageError(f"sac-config: {exc}") from None


def _opt_config(path: str | None, scenario: ScenarioConfig) -> OptConfig:
    raw = _read_yaml(path, "opt-config") if path is not None else {}
    raw.setdefault("steer_scale", scenario.desired_speed ** 2 / scenario.wheelbase)
    try:
        return OptConfig.from_dict(raw)
    except ValueError as exc:
        raise UsageError(f"opt-config: {exc}") from None


def bundled_checkpoint(name: str):
    return resources.files("lanemerge").joinpath("checkpoints", f"{name}.ckpt")


def _policy(checkpoint: str | None, scenario_arg: str, scenario: ScenarioConfig):
    if checkpoint is None:
        if scenario_arg not in BUNDLED:
            raise UsageError("checkpoint: required for scenarios given as files")
        ref = bundled_checkpoint(scenario_arg)
        if not ref.is_file():
            raise UsageError(f"checkpoint: no bundled checkpoint for {scenario_arg}")
        with resources.as_file(ref) as path:
            return _load(path, scenario)
    if not Path(checkpoint).exists():
        raise UsageError(f"checkpoint: no such file: {checkpoint}")
    return _load(checkpoint, scenario)


def _load(path, scenario):
    try:
        return load_policy(path, scenario)
    except (CheckpointError, ValueError) as exc:
        raise UsageError(f"checkpoint: {exc}") from None


def _positive(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return value
    return parse


def _non_negative(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _map_seeds(fn, seeds, workers):
    """Apply ``fn`` per seed, in threads when asked; results come back in seed order."""
    seeds = sorted(seeds)
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    scenario = _scenario(args.scenario)
    cfg = _sac_config(args.sac_config)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"out: {exc}") from None
    (out / "sac_config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))

    def progress(ep, avg, report):
        if ep % args.log_every == 0 or ep == args.episodes:
            print(f"episode {ep} avg_reward {avg:.2f}", flush=True)

    policy, curve = train(scenario, cfg, args.episodes, args.seed, out_dir=out, progress=progress)
    if not curve:
        save_params(policy.params, out / "actor.ckpt")
        write_curve(curve, out / "curve.csv")
    print(f"wrote {out / 'actor.ckpt'} and {out / 'curve.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenario = _scenario(args.scenario)
    policy = _policy(args.checkpoint, args.scenario, scenario)
    seeds = range(args.seed, args.seed + args.runs)
    per_seed = _map_seeds(lambda s: evaluate(policy, scenario, [s]), seeds, args.workers)
    rate = float(np.mean([r for r, _ in per_seed]))
    avg = float(np.mean([a for _, a in per_seed]))
    text = _csv_text(EVAL_HEADER, [[scenario.name, args.runs, _fmt(rate), _fmt(avg)]])
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def jerk_summary(results: list[PlanResult]) -> dict[str, float]:
    """Batch statistics; jerk ratios use the optimizer output of converged solves."""
    conv = [r for r in results if r.report.converged and np.isfinite(r.metrics["rl_jerk"])]
    rl = np.array([r.metrics["rl_jerk"] for r in conv])
    opt = np.array([r.metrics["solve_jerk"] for r in conv])
    ratios = opt / np.where(rl > 0, rl, np.nan) if conv else np.array([])
    finite = ratios[np.isfinite(ratios)]
    return {
        "runs": float(len(results)),
        "converged": float(len(conv)),
        "fallbacks": float(sum(r.fallback_engaged for r in results)),
        "post_check_failures": float(sum(not r.post_check_passed for r in results)),
        "rl_collisions": float(sum(r.metrics["rl_collided"] > 0 for r in results)),
        "aggregate_jerk_ratio": float(opt.mean() / rl.mean()) if conv and rl.mean() > 0 else float("nan"),
        "mean_episode_jerk_ratio": float(finite.mean()) if finite.size else float("nan"),
        "max_episode_jerk_ratio": float(finite.max()) if finite.size else float("nan"),
    }


def cmd_plan(args) -> int:
    scenario = _scenario(args.scenario)
    policy = _policy(args.checkpoint, args.scenario, scenario)
    opt_cfg = _opt_config(args.opt_config, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = range(args.seed, args.seed + args.runs)
    results = _map_seeds(lambda s: plan(policy, scenario, s, opt_cfg), seeds, args.workers)

    rows = []
    for res in results:
        stem = f"seed_{res.seed}"
        (out / f"{stem}_plan.txt").write_text(res.to_text())
        write_plan_csv(res, scenario.dt, out / f"{stem}_trajectory.csv")
        m = res.metrics
        ratio = m["solve_jerk"] / m["rl_jerk"] if m["rl_jerk"] > 0 else float("nan")
        rows.append([res.seed, str(res.report.converged).lower(), str(res.fallback_engaged).lower(),
                     str(res.post_check_passed).lower(), res.report.iterations,
                     str(bool(m["rl_collided"])).lower(), _fmt(m["rl_jerk"]), _fmt(m["solve_jerk"]),
                     _fmt(ratio), _fmt(m["min_clearance_rl"]), _fmt(m["min_clearance_opt"]), res.reason])
        print(f"seed {res.seed}: {res.reason}, post_check_passed={str(res.post_check_passed).lower()}")
    (out / "summary.csv").write_text(_csv_text(SUMMARY_HEADER, rows))
    agg = jerk_summary(results)
    (out / "aggregate.csv").write_text(_csv_text(("metric", "value"), [[k, _fmt(v)] for k, v in agg.items()]))
    print(f"aggregate jerk ratio {agg['aggregate_jerk_ratio']:.4f} over {int(agg['converged'])} converged "
          f"of {args.runs}; fallbacks {int(agg['fallbacks'])}")
    return EXIT_FALLBACK if agg["fallbacks"] else EXIT_OK


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return (time.perf_counter() - t0) * 1e3


def cmd_bench(args) -> int:
    scenario = _scenario(args.scenario)
    policy = _policy(args.checkpoint, args.scenario, scenario)
    opt_cfg = _opt_config(args.opt_config, scenario)
    inference, rollout, solve = [], [], []
    for seed in range(args.seed, args.seed + args.runs):
        obs = observe(reset(scenario, seed))
        greedy_action(policy, obs)  # warm caches before timing
        inference += [_timed(lambda: greedy_action(policy, obs)) for _ in range(args.repeats)]
        holder = {}
        rollout.append(_timed(lambda: holder.setdefault("rec", rollout_greedy(policy, scenario, seed))))
        problem = problem_from_record(holder["rec"], scenario, opt_cfg)
        solve.append(_timed(lambda: solve_lm(problem)))
    rows = [[phase, _fmt(np.mean(v)), _fmt(np.percentile(v, 95))]
            for phase, v in (("inference", inference), ("rollout", rollout), ("solve", solve))]
    text = _csv_text(BENCH_HEADER, rows)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lanemerge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training evaluations")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, checkpoint=True):
        p.add_argument("--scenario", required=True,
                       help=f"YAML file or bundled name ({', '.join(BUNDLED)})")
        if checkpoint:
            p.add_argument("--checkpoint", help="actor checkpoint (default: bundled for bundled scenarios)")
        p.add_argument("--seed", type=_non_negative, default=0)

    p = sub.add_parser("train", help="train a policy with soft actor-critic")
    common(p, checkpoint=False)
    p.add_argument("--sac-config", help="YAML SAC settings (default: bundled desk-scale config)")
    p.add_argument("--episodes", type=_non_negative, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-every", type=_positive("--log-every"), default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="success rate and average reward of the greedy policy")
    common(p)
    p.add_argument("--runs", type=_positive("--runs"), default=1000)
    p.add_argument("--workers", type=_positive("--workers"), default=1)
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="roll out, post-optimize and check one or more seeds")
    common(p)
    p.add_argument("--opt-config", help="YAML optimizer settings")
    p.add_argument("--runs", type=_positive("--runs"), default=1)
    p.add_argument("--workers", type=_positive("--workers"), default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="host-local timing of inference, rollout and solve")
    common(p)
    p.add_argument("--opt-config", help="YAML optimizer settings")
    p.add_argument("--runs", type=_positive("--runs"), default=10)
    p.add_argument("--repeats", type=_positive("--repeats"), default=100,
                   help="timed inferences per run")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
