"""Command-line surface: gen-data, train, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import config as cfgmod
from .buffer import MemoryBuffer
from .data import generate_task, save_dataset
from .errors import LlttsError
from .metrics import LearningCurve, McdReport, render_curves, render_table
from .strategies import ExperimentResult, run_sequence

log = logging.getLogger("lltts")


def _setup_logging():
    level = os.environ.get("LLTTS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s"
    )


def _load_config(path) -> cfgmod.ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return cfgmod.parse_config(f.read())


def _write_text(path, text: str):
    cfgmod._atomic_write(path, text.encode())


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    out = os.path.join(config.output_dir, "data")
    os.makedirs(out, exist_ok=True)
    for spec in config.task_specs:
        ds = generate_task(spec)
        path = os.path.join(out, f"lang{spec.language_id}.lltts")
        save_dataset(ds, path, vocab_size=spec.vocab_size)
        log.info("wrote %s (%d train samples)", path, len(ds.train))
    return 0


def _result_record(result: ExperimentResult) -> dict:
    return {
        "strategy": result.strategy,
        "task_order": result.task_order,
        "reports": [
            {
                "stage_language": r.stage_language,
                "per_language": {str(k): v for k, v in r.per_language.items()},
                "average": r.average,
            }
            for r in result.reports
        ],
    }


def _result_from_record(record: dict) -> ExperimentResult:
    reports = [
        McdReport(r["stage_language"], {int(k): v for k, v in r["per_language"].items()})
        for r in record["reports"]
    ]
    return ExperimentResult(record["strategy"], record["task_order"], reports, [])


def cmd_train(args) -> int:
    config = _load_config(args.config)
    chash = cfgmod.config_hash(config)
    ckpt_dir = os.path.join(config.output_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    start_state = None
    if args.resume:
        stages = sorted(
            int(name[5:-5])
            for name in os.listdir(ckpt_dir)
            if name.startswith("stage") and name.endswith(".ckpt")
        )
        if stages:
            path = os.path.join(ckpt_dir, f"stage{stages[-1]}.ckpt")
            cp = cfgmod.load_checkpoint(path, expected_hash=chash, force=args.force)
            start_state = {
                "stage": cp.stage,
                "params": cp.params,
                "buffer": cfgmod.restore_buffer(cp),
                "fstate": cp.fisher,
                "reports": cp.reports,
                "stage_curves": cp.stage_curves,
            }
            log.info("resuming after stage %d from %s", cp.stage, path)

    def hook(stage, state):
        cp = cfgmod.Checkpoint(
            stage=stage,
            params=state["params"],
            adam=None,
            buffer_snapshot=state["buffer"].snapshot(),
            fisher=state["fstate"],
            reports=state["reports"],
            stage_curves=state["stage_curves"],
            config_hash=chash,
        )
        cfgmod.save_checkpoint(cp, os.path.join(ckpt_dir, f"stage{stage}.ckpt"))
        log.info("stage %d done; avg test MCD %.3f", stage, state["reports"][-1].average)

    result = run_sequence(config, checkpoint_hook=hook, start_state=start_state)

    record = _result_record(result)
    _write_text(
        os.path.join(config.output_dir, "result.json"),
        json.dumps(record, sort_keys=True, indent=2) + "\n",
    )
    # learning curves concatenated over stages, one file per run
    merged: dict[int, list] = {}
    for curves in result.stage_curves:
        for lang, vals in curves.items():
            merged.setdefault(lang, [])
        max_len = max(len(v) for v in curves.values())
        for lang in merged:
            merged[lang].extend(curves.get(lang, [float("nan")] * max_len))
    _write_text(
        os.path.join(config.output_dir, "curves.csv"),
        render_curves(LearningCurve(merged)),
    )
    _write_text(os.path.join(config.output_dir, "report.csv"), render_table([result]))
    return 0


def cmd_report(args) -> int:
    results = []
    for root, _, files in sorted(os.walk(args.in_dir)):
        if "result.json" in files:
            with open(os.path.join(root, "result.json"), "r", encoding="utf-8") as f:
                results.append(_result_from_record(json.load(f)))
    if not results:
        print("no result.json files found", file=sys.stderr)
        return 1
    # fine-tune baseline row first, then stable alphabetical order
    results.sort(key=lambda r: (r.strategy != "FINE_TUNE", r.strategy))
    _write_text(args.out, render_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lltts", description="Lifelong multilingual training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize the synthetic task datasets")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the sequential training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--force", action="store_true", help="ignore config-hash mismatch on resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="aggregate runs into one comparison table")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def cli(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except LlttsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
