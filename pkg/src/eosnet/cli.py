"""Command-line entry point.

Subcommands: ``generate``, ``sessionize``, ``featurize``, ``train``,
``evaluate``, ``score``, ``report``.  Common flags (``--seed``,
``--config``, ``--threads``, ``--quiet``) attach to every subcommand.
Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical fault.

Heavy imports happen inside the handlers, so ``--threads`` can pin the
BLAS thread count before the numerics are loaded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from eosnet.errors import (
    CheckpointError,
    DataValidationError,
    LogParseError,
    NumericalFault,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("eosnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for generation / split / training")
    common.add_argument("--config", default=None,
                        help="key=value config file providing defaults")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (set before numerics load)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress output")

    parser = _Parser(prog="eosnet",
                     description="End-of-session probability modelling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="write a synthetic action log")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-students", type=int, default=None)

    p = sub.add_parser("sessionize", parents=[common],
                       help="append session_index and label columns to a log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true",
                   help="skip malformed records instead of aborting")
    p.add_argument("--gap-seconds", type=int, default=900)

    p = sub.add_parser("featurize", parents=[common],
                       help="emit the 13 feature columns plus label")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--utc-offset-minutes", type=int, default=60)
    p.add_argument("--with-keys", action="store_true",
                   help="prepend student_id and timestamp columns")

    p = sub.add_parser("train", parents=[common],
                       help="train a model; writes checkpoint and history")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--level", choices=["student", "session"], default="student")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--dropout-p", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", default=None,
                   help="epochs without improvement before stopping, or 'none'")
    p.add_argument("--tbptt-window", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--utc-offset-minutes", type=int, default=60)

    p = sub.add_parser("evaluate", parents=[common],
                       help="write the stratified AUC report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--level", choices=["student", "session"], default="student")
    p.add_argument("--split-seed", type=int, default=None,
                   help="evaluate the test part of this split (default: all students)")
    p.add_argument("--split-part", choices=["train", "validation", "test", "all"],
                   default="test")
    p.add_argument("--dump-scores", default=None,
                   help="also write per-action student_id,timestamp,prob,label rows")
    p.add_argument("--utc-offset-minutes", type=int, default=60)

    p = sub.add_parser("score", parents=[common],
                       help="stream per-action probabilities for a log")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="log file, or '-' for stdin")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--level", choices=["student", "session"], default="student")
    p.add_argument("--state-in", default=None,
                   help="resume from a saved scoring state")
    p.add_argument("--state-out", default=None,
                   help="persist the scoring state for later invocations")
    p.add_argument("--utc-offset-minutes", type=int, default=60)

    p = sub.add_parser("report", parents=[common],
                       help="corpus statistics for a log file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="output file (default stdout)")

    return parser


def _configure(args) -> dict[str, str]:
    logging.basicConfig(stream=sys.stderr, format="%(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO)
    if args.threads is not None:
        if "numpy" in sys.modules:
            log.debug("numpy already imported; --threads has no effect")
        else:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
                os.environ[var] = str(args.threads)
    if args.config is None:
        return {}
    if not os.path.exists(args.config):
        raise UsageError(f"config file not found: {args.config}")
    from eosnet.configio import load_key_value

    try:
        return load_key_value(args.config)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_labeled(path, strict=True, lenient_log=True):
    """Parse a log file into per-student labelled sequences (sorted ids)."""
    from eosnet.ingest import group_by_student, parse_log_file
    from eosnet.sessions import label, segment

    bad: list = []
    actions = parse_log_file(path, strict=strict, bad_records=bad)
    if bad and lenient_log:
        log.info("skipped %d malformed records", len(bad))
    labeled = {}
    for student in group_by_student(actions):
        labeled[student.student_id] = label(segment(student))
    return labeled


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def cmd_generate(args, mapping) -> int:
    from eosnet.configio import build_config, config_to_text
    from eosnet.fileio import atomic_write_text, write_manifest
    from eosnet.ingest import HEADER, format_action
    from eosnet.synthgen import GenConfig, generate, summarize

    t0 = time.perf_counter()
    try:
        cfg = build_config(GenConfig, mapping,
                           n_students=args.n_students, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    logs = generate(cfg)
    os.makedirs(args.out, exist_ok=True)
    actions_path = os.path.join(args.out, "actions.csv")
    rows = [HEADER]
    for student in logs:
        rows.extend(format_action(a) for a in student.actions)
    atomic_write_text(actions_path, "\n".join(rows) + "\n")
    config_path = os.path.join(args.out, "gen_config.txt")
    atomic_write_text(config_path, config_to_text(cfg))

    summary = summarize(logs)
    log.info("generated %d students, %d sessions, %d actions",
             summary.n_students, summary.n_sessions, summary.n_actions)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="generate",
        config={"file": config_path},
        seeds={"generator": cfg.seed},
        inputs=[],
        outputs=[actions_path, config_path],
        timings={"seconds": time.perf_counter() - t0},
    )
    return EXIT_OK


def cmd_sessionize(args, mapping) -> int:
    from eosnet.fileio import atomic_write_text
    from eosnet.ingest import HEADER, format_action, group_by_student, parse_log_file
    from eosnet.sessions import label, segment

    bad: list = []
    actions = parse_log_file(args.data, strict=not args.lenient, bad_records=bad)
    if bad:
        log.info("skipped %d malformed records", len(bad))
    rows = [HEADER + ",session_index,label"]
    for student in group_by_student(actions):
        seq = label(segment(student, gap_seconds=args.gap_seconds))
        pos = 0
        for session in seq.sessions:
            for action in session.actions:
                rows.append(f"{format_action(action)},{session.index},{seq.labels[pos]}")
                pos += 1
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


_FEATURE_HEADER = ("tod_8_12,tod_12_15,tod_15_8,gap_action,gap_session,"
                   "kind_fillout,kind_multichoice,kind_material,lesson_changed,"
                   "topic_changed,correct,homework,session_start,label")


def cmd_featurize(args, mapping) -> int:
    from eosnet.features import featurize
    from eosnet.fileio import atomic_write_text

    labeled = _load_labeled(args.data)
    header = _FEATURE_HEADER
    if args.with_keys:
        header = "student_id,timestamp," + header
    rows = [header]
    for sid in sorted(labeled):
        seq = labeled[sid]
        frames = featurize(seq, utc_offset_minutes=args.utc_offset_minutes)
        flat_actions = seq.actions
        for row, (frame, yval) in enumerate(zip(frames, seq.labels)):
            cells = ",".join(repr(float(v)) for v in frame)
            prefix = ""
            if args.with_keys:
                prefix = f"{sid},{flat_actions[row].timestamp},"
            rows.append(f"{prefix}{cells},{yval}")
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_train(args, mapping) -> int:
    from eosnet.configio import build_config
    from eosnet.fileio import atomic_write_text, write_manifest
    from eosnet.net import save_checkpoint
    from eosnet.training import (
        Level, TrainConfig, prepare_sequence, split_students, train,
    )

    t0 = time.perf_counter()
    if args.patience is not None:
        mapping = dict(mapping)
        mapping["patience"] = args.patience
    try:
        config = build_config(
            TrainConfig, mapping,
            learning_rate=args.learning_rate,
            dropout_p=args.dropout_p,
            batch_size=args.batch_size,
            tbptt_window=args.tbptt_window,
            max_epochs=args.max_epochs,
            level=Level(args.level),
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    labeled = _load_labeled(args.data)
    split = split_students(labeled.keys(), config.seed)
    train_seqs = [prepare_sequence(labeled[sid], config.level,
                                   args.utc_offset_minutes) for sid in split.train]
    val_seqs = [prepare_sequence(labeled[sid], config.level,
                                 args.utc_offset_minutes) for sid in split.validation]
    log.info("training %s-level model on %d students (%d validation)",
             config.level.value, len(train_seqs), len(val_seqs))

    def progress(stats):
        log.info("epoch %d: train_loss %.5f val_auc %.5f (%.1fs)",
                 stats.epoch, stats.train_loss, stats.val_auc, stats.seconds)

    result = train(config, train_seqs, val_seqs, progress=progress)

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(result.params, ckpt_path)
    history_path = os.path.join(args.out, "history.csv")
    rows = ["epoch,train_loss,val_auc"]
    rows.extend(f"{s.epoch},{s.train_loss!r},{s.val_auc!r}" for s in result.history)
    atomic_write_text(history_path, "\n".join(rows) + "\n")
    log.info("best epoch %d (val_auc %.5f)", result.best_epoch, result.best_val_auc)

    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="train",
        config={f: repr(getattr(config, f)) for f in (
            "learning_rate", "dropout_p", "batch_size", "patience",
            "tbptt_window", "max_epochs", "level", "seed")},
        seeds={"split": config.seed, "train": config.seed},
        inputs=[args.data],
        outputs=[ckpt_path, history_path],
        timings={
            "seconds": time.perf_counter() - t0,
            "epoch_seconds": [s.seconds for s in result.history],
            "best_epoch": result.best_epoch,
        },
    )
    return EXIT_OK


def _select_students(labeled, split_seed, part):
    if split_seed is None or part == "all":
        return sorted(labeled)
    from eosnet.training import split_students

    split = split_students(labeled.keys(), split_seed)
    return {"train": split.train, "validation": split.validation,
            "test": split.test}[part]


def cmd_evaluate(args, mapping) -> int:
    from eosnet.evaluation import compute_report, scored_sessions
    from eosnet.features import FEATURE_DIM
    from eosnet.fileio import atomic_write_text, write_manifest
    from eosnet.net import load_checkpoint
    from eosnet.training import Level, prepare_sequence, score_sequences

    t0 = time.perf_counter()
    params = load_checkpoint(args.checkpoint)
    if params.input_dim != FEATURE_DIM:
        raise CheckpointError(
            f"checkpoint expects {params.input_dim} features, data has {FEATURE_DIM}")
    labeled = _load_labeled(args.data)
    ids = _select_students(labeled, args.split_seed, args.split_part)
    level = Level(args.level)
    sequences = [prepare_sequence(labeled[sid], level, args.utc_offset_minutes)
                 for sid in ids]
    probs = score_sequences(params, sequences)

    all_sessions = []
    for sid in ids:
        all_sessions.extend(scored_sessions(labeled[sid], probs[sid]))
    report = compute_report(all_sessions)

    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    atomic_write_text(report_path,
                      "metric,stratum,value\n" + "\n".join(report.metric_lines()) + "\n")
    trajectory_path = os.path.join(args.out, "trajectory.csv")
    atomic_write_text(trajectory_path,
                      "chunk,mean_prob\n" + "\n".join(report.trajectory_rows()) + "\n")
    outputs = [report_path, trajectory_path]

    if args.dump_scores:
        rows = ["student_id,timestamp,prob,label"]
        for sid in ids:
            seq = labeled[sid]
            for action, prob, yval in zip(seq.actions, probs[sid], seq.labels):
                rows.append(f"{sid},{action.timestamp},{prob!r},{yval}")
        atomic_write_text(args.dump_scores, "\n".join(rows) + "\n")
        outputs.append(args.dump_scores)

    if report.global_auc is not None:
        log.info("global AUC %.5f over %d sessions", report.global_auc,
                 len(all_sessions))
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="evaluate",
        config={"level": args.level, "split_part": args.split_part},
        seeds={"split": args.split_seed},
        inputs=[args.checkpoint, args.data],
        outputs=outputs,
        timings={"seconds": time.perf_counter() - t0},
    )
    return EXIT_OK


def cmd_score(args, mapping) -> int:
    import numpy as np

    from eosnet.features import FEATURE_DIM, StreamFeaturizer
    from eosnet.fileio import atomic_write_text
    from eosnet.ingest import parse_line
    from eosnet.net import LstmState, infer_step, load_checkpoint
    from eosnet.sessions import DEFAULT_GAP_SECONDS

    params = load_checkpoint(args.checkpoint)
    if params.input_dim != FEATURE_DIM:
        raise CheckpointError(
            f"checkpoint expects {params.input_dim} features, data has {FEATURE_DIM}")
    session_level = args.level == "session"

    states: dict[str, tuple[StreamFeaturizer, LstmState]] = {}
    if args.state_in:
        with open(args.state_in, encoding="utf-8") as handle:
            saved = json.load(handle)
        if saved.get("level") != args.level:
            raise DataValidationError(
                f"state was saved for level {saved.get('level')!r}, not {args.level!r}")
        for sid, entry in saved["students"].items():
            states[sid] = (
                StreamFeaturizer.from_dict(entry["featurizer"]),
                LstmState(h=np.asarray(entry["h"]), c=np.asarray(entry["c"])),
            )

    if args.data == "-":
        lines = sys.stdin
    else:
        lines = open(args.data, encoding="utf-8")
    out_rows = []
    try:
        from eosnet.ingest import HEADER

        for line_no, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or (line_no == 1 and stripped == HEADER):
                continue
            action = parse_line(stripped, line_no)
            if action.student_id not in states:
                states[action.student_id] = (
                    StreamFeaturizer(utc_offset_minutes=args.utc_offset_minutes),
                    LstmState.zeros(params.hidden_size),
                )
            featurizer, state = states[action.student_id]
            first = featurizer.last_timestamp is None
            if not first and action.timestamp < featurizer.last_timestamp:
                raise DataValidationError(
                    f"line {line_no}: out-of-order timestamp for {action.student_id}")
            new_session = first or (
                action.timestamp - featurizer.last_timestamp > DEFAULT_GAP_SECONDS)
            if session_level and new_session:
                state = LstmState.zeros(params.hidden_size)
            frame = featurizer.push(action)
            prob, state = infer_step(params, frame, state)
            states[action.student_id] = (featurizer, state)
            out_rows.append(f"{action.student_id},{action.timestamp},{prob!r}")
    finally:
        if lines is not sys.stdin:
            lines.close()

    if args.out:
        atomic_write_text(args.out, "\n".join(out_rows) + "\n" if out_rows else "")
    else:
        for row in out_rows:
            print(row)

    if args.state_out:
        payload = {
            "version": 1,
            "level": args.level,
            "students": {
                sid: {
                    "featurizer": featurizer.to_dict(),
                    "h": [float(v) for v in state.h],
                    "c": [float(v) for v in state.c],
                }
                for sid, (featurizer, state) in sorted(states.items())
            },
        }
        atomic_write_text(args.state_out, json.dumps(payload) + "\n")
    return EXIT_OK


def cmd_report(args, mapping) -> int:
    from eosnet.fileio import atomic_write_text
    from eosnet.ingest import group_by_student, parse_log_file
    from eosnet.synthgen import summarize

    actions = parse_log_file(args.data)
    summary = summarize(group_by_student(actions))
    text = "\n".join(summary.lines()) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_HANDLERS = {
    "generate": cmd_generate,
    "sessionize": cmd_sessionize,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "score": cmd_score,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        mapping = _configure(args)
        return _HANDLERS[args.command](args, mapping)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LogParseError, DataValidationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFault as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
