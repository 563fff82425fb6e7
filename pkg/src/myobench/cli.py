"""Command-line entry points for the workbench phases."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import persist
from .experiment import (
    ExperimentConfig,
    run_full_experiment,
    step_finetune,
    step_motion_test,
    step_play,
    step_pretrain,
)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config)
    workdir_cfg = Path(args.workdir) / "config.json"
    if workdir_cfg.exists():
        return ExperimentConfig.load(workdir_cfg)
    return ExperimentConfig()


def _emit(result: dict) -> None:
    print(json.dumps(result, sort_keys=True, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="myobench",
        description="motor-intent decoding workbench: pretrain, play, fine-tune, evaluate",
    )
    parser.add_argument("--config", help="experiment config JSON", default=None)
    parser.add_argument("--workdir", help="workspace directory", default="workspace")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", help="record the initial dataset and train the baseline decoder")

    p_play = sub.add_parser("play", help="play one gameplay repetition")
    p_play.add_argument("--rep", type=int, required=True)

    p_ft = sub.add_parser("finetune", help="fine-tune on episodes up to a repetition")
    p_ft.add_argument("--rep", type=int, required=True)

    p_mt = sub.add_parser("motion-test", help="run the motion test for a decoder")
    p_mt.add_argument("--policy", choices=("p0", "p8"), required=True)

    p_exp = sub.add_parser("experiment", help="full-protocol experiment")
    exp_sub = p_exp.add_subparsers(dest="experiment_command", required=True)
    p_run = exp_sub.add_parser("run", help="run the whole protocol")
    p_run.add_argument("--config", dest="exp_config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--resume", action="store_true")

    p_rep = sub.add_parser("report", help="rebuild the report from persisted artifacts")
    p_rep.add_argument("--out", required=True)

    p_srv = sub.add_parser("serve", help="serve the live session and client")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--static", default=None, help="frontend bundle directory")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "pretrain":
        _emit(step_pretrain(_load_config(args), args.workdir))
    elif args.command == "play":
        _emit(step_play(_load_config(args), args.workdir, args.rep))
    elif args.command == "finetune":
        _emit(step_finetune(_load_config(args), args.workdir, args.rep))
    elif args.command == "motion-test":
        _emit(step_motion_test(_load_config(args), args.workdir, args.policy))
    elif args.command == "experiment":
        config = ExperimentConfig.load(args.exp_config)
        report = run_full_experiment(config, args.out, resume=args.resume)
        reps = report["repetitions"]
        _emit(
            {
                "out": str(args.out),
                "normalized_returns": [r["normalized_return"] for r in reps],
                "motion_emr": {
                    "p0": report["motion_tests"]["p0"]["emr"],
                    "p8": report["motion_tests"]["p8"]["emr"],
                },
            }
        )
    elif args.command == "report":
        report = persist.load_json(Path(args.out) / "report.json")
        _emit(
            {
                "repetitions": [
                    {k: r[k] for k in ("repetition", "policy", "normalized_return", "emr")}
                    for r in report["repetitions"]
                ],
                "motion_tests": report["motion_tests"],
            }
        )
    elif args.command == "serve":
        from .server import serve

        serve(_load_config(args), args.workdir, port=args.port, static_dir=args.static)
    return 0


if __name__ == "__main__":
    sys.exit(main())
