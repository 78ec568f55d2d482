"""Command-line entry points: serve, run, replay, bench, datagen, demos, suites."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datagen as datagen_mod
from . import evaluation, gateway
from .domain import SCENARIO_TYPES
from .orchestrator import SessionConfig, detect_gaps, run_session


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run one headless session")
    p.add_argument("--task", required=True)
    p.add_argument("--policy", default="hierarchical_reference")
    p.add_argument("--suite", help="bundled suite name or suite JSON path (first matching-seed trial is used)")
    p.add_argument("--prompt", help="bare prompt at t=0 when no suite is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--log", help="write the event log (JSON Lines) here")
    p.add_argument("--remote-endpoint", help="decision endpoint for --policy remote_backend")


def _resolve_suite(name_or_path: str, trials: int = 20) -> evaluation.Suite:
    if Path(name_or_path).exists():
        return evaluation.Suite.load(name_or_path)
    return evaluation.bundled_suite(name_or_path, trials=trials)


def _cmd_run(args: argparse.Namespace) -> int:
    script = None
    if args.suite:
        suite = _resolve_suite(args.suite)
        trial = next((t for t in suite.trials if t.seed == args.seed), suite.trials[0])
        script = trial.script
        args.seed = trial.seed
        task = suite.task
    else:
        task = args.task
        if args.prompt:
            from .domain import UserEvent

            script = evaluation.UserScript(
                [evaluation.ScriptStep("at_time", UserEvent.prompt(args.prompt), at_time=0.0)]
            )
    config = SessionConfig(
        task=task,
        policy=args.policy,
        seed=args.seed,
        trial_timeout_s=args.timeout,
        remote_endpoint=args.remote_endpoint,
    )
    log = run_session(config, script)
    if args.log:
        log.save(args.log)
    if script is not None:
        result = evaluation.judge_log(log, task, args.seed, script, policy=args.policy, log_ref=args.log)
        print(
            f"task={task} policy={args.policy} seed={args.seed} "
            f"IA={result.instruction_accuracy:.3f} TP={result.task_progress:.3f} "
            f"violations={result.violations} gaps={len(detect_gaps(log))}"
        )
    else:
        print(f"task={task} policy={args.policy} seed={args.seed} records={len(log.records)}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    suites = [_resolve_suite(name, args.trials) for name in args.suite.split(",")]
    policies = args.policies.split(",")
    report = evaluation.run_benchmark(policies, suites, trials_per_cell=args.trials, seed=args.seed)
    text = evaluation.format_report(report)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"wrote {args.out}")
    return 0


def _cmd_datagen(args: argparse.Namespace) -> int:
    episodes = datagen_mod.load_episodes(args.demos)
    scenarios = args.scenarios.split(",") if args.scenarios else list(SCENARIO_TYPES)
    records = datagen_mod.build_dataset(
        episodes, per_segment=args.per_segment, seed=args.seed, scenarios=scenarios, out_path=args.out
    )
    print(f"wrote {len(records)} interactions to {args.out}")
    return 0


def _cmd_demos(args: argparse.Namespace) -> int:
    episodes = datagen_mod.demo_episodes(args.task, count=args.episodes, seed=args.seed)
    datagen_mod.save_episodes(episodes, args.out)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def _cmd_suites(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in evaluation.BUNDLED_SUITES:
        suite = evaluation.bundled_suite(name, trials=args.trials)
        path = out_dir / f"{name}.json"
        suite.save(str(path))
        print(f"wrote {path}")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        frames = gateway.replay(args.log)
    except Exception as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    for frame in frames:
        print(gateway.dump_frame(frame))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    gateway.serve(port=args.port, host=args.host, log_dir=args.log_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="chorebot")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run(sub)

    p = sub.add_parser("bench", help="run the benchmark over suites and policies")
    p.add_argument("--suite", required=True, help="comma-separated bundled names or JSON paths")
    p.add_argument(
        "--policies",
        default="hierarchical_reference,flat_passthrough,oracle_scripted",
    )
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", help="write the JSON report here")

    p = sub.add_parser("datagen", help="generate synthetic interactions from demos")
    p.add_argument("--demos", required=True, help="episodes JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--per-segment", type=int, default=3, dest="per_segment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenarios", help="comma-separated scenario types")

    p = sub.add_parser("demos", help="write bundled demonstration episodes")
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("suites", help="export bundled scripted suites as JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("replay", help="re-emit a recorded session's frames")
    p.add_argument("--log", required=True)

    p = sub.add_parser("serve", help="run the WebSocket gateway")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--log-dir", dest="log_dir", default="session_logs", help="where live sessions write their event logs")

    args = parser.parse_args(argv)
    handler = {
        "run": _cmd_run,
        "bench": _cmd_bench,
        "datagen": _cmd_datagen,
        "demos": _cmd_demos,
        "suites": _cmd_suites,
        "replay": _cmd_replay,
        "serve": _cmd_serve,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
