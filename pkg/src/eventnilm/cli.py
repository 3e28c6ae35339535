"""Command-line entry point: synth, train, run, eval, sweep-na, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import ingest
from ._validation import DataError
from .detector import DEFAULT_SIGMA_FLOOR, DEFAULT_WINDOW, DEFAULT_Z
from .evaluation import (
    baselines,
    build_test_set,
    build_train_set,
    detection_scores,
    evaluate,
    sweep_na,
    write_confusion_csv,
    write_sweep_csv,
)
from .explain import DEFAULT_BACKGROUND_SIZE, sample_background, summary_table, write_summary_csv
from .features import FEATURE_NAMES, DomainError, correlation_report, write_correlation_csv
from .fitps import DEFAULT_CYCLE_SAMPLES, InsufficientSignalError
from .gbdt import GBDTClassifier, ModelLoadError, TrainingError, load_model_document, save_model
from .pipeline import PipelineConfig, bench, format_bench, run_stream
from .signature import DEFAULT_CYCLES_AFTER, DEFAULT_GUARD_CYCLES

logger = logging.getLogger("eventnilm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (
    ingest.IngestError,
    ModelLoadError,
    TrainingError,
    DataError,
    DomainError,
    InsufficientSignalError,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32)


# helpers


def _metadata_path(data_dir: Path) -> Path:
    path = data_dir / "metadata.json"
    if not path.is_file():
        raise FileNotFoundError(f"no metadata.json in {data_dir}")
    return path


def _load_dataset(data_dir, column_order, kind):
    """Yield ``(RawStream, entry)`` for metadata streams of one kind."""
    data_dir = Path(data_dir)
    with open(_metadata_path(data_dir)) as fh:
        parsed = ingest.parse_metadata(json.load(fh))
    for sid, entry in parsed.items():
        if entry.get("kind", "aggregated") != kind:
            continue
        fname = entry.get("file", f"{sid}.csv")
        stream = ingest.read_plaid_stream(
            data_dir / fname, column_order, float(entry.get("sample_rate_hz", ingest.PLAID_SAMPLE_RATE_HZ)), sid
        )
        ingest.check_events_against_stream(entry["events"], len(stream))
        for ev in entry["events"]:
            for w in ev.warnings:
                logger.warning("%s: %s", sid, w)
        yield stream, entry


def _training_rows(args):
    recordings = []
    for stream, entry in _load_dataset(args.data, args.column_order, "submetered"):
        label = entry.get("label") or (entry["events"][0].appliance_label if entry["events"] else None)
        if label is None:
            logger.warning("%s: submetered stream without a label, skipped", stream.source_id)
            continue
        recordings.append((stream, label))
    if not recordings:
        raise DataError(f"{args.data}: no submetered recordings in metadata")
    return build_train_set(recordings, args.cycle_samples)


def _scenarios(args):
    return [(s, e["events"]) for s, e in _load_dataset(args.data, args.column_order, "aggregated")]


def _detector_kwargs(args) -> dict:
    return {
        "T": args.cycle_samples,
        "w": args.window,
        "Z": args.z_threshold,
        "sigma_floor": args.sigma_floor,
        "guard": args.guard_cycles,
    }


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _sample_rate_field(fs: float):
    return int(fs) if float(fs).is_integer() else fs


# subcommands


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            doc = json.load(fh)
        if args.seed is not None:
            doc["seed"] = args.seed
        scenario = ingest.scenario_from_dict(doc)
    else:
        scenario = ingest.default_scenario(
            n_events=args.events,
            seed=42 if args.seed is None else args.seed,
            noise_snr_db=None if args.snr_db is None or args.snr_db < 0 else args.snr_db,
            frequency_drift_hz=args.drift_hz,
            grid_frequency_hz=args.f0,
        )
    out = Path(args.out)
    (out / "submetered").mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    stream, events = ingest.synthesize(scenario)
    ingest.write_stream_csv(stream, out / "aggregate.csv")
    fs = _sample_rate_field(scenario.sample_rate_hz)
    streams = [
        {
            "id": scenario.source_id,
            "file": "aggregate.csv",
            "kind": "aggregated",
            "sample_rate_hz": fs,
            "events": [
                {"sample_index": e.sample_index, "direction": e.direction, "label": e.appliance_label} for e in events
            ],
        }
    ]
    sigma = ingest.estimate_noise_sigma(stream, scenario.noise_snr_db)
    for n, arch in enumerate(scenario.archetypes):
        sub, _ = ingest.synthesize(
            ingest.submetered_scenario(scenario, arch.archetype_id, args.train_duration, noise_sigma_a=sigma)
        )
        fname = f"submetered/{n:02d}.csv"
        ingest.write_stream_csv(sub, out / fname)
        streams.append(
            {
                "id": sub.source_id,
                "file": fname,
                "kind": "submetered",
                "label": arch.archetype_id,
                "sample_rate_hz": fs,
                "events": [{"sample_index": 0, "direction": "on", "label": arch.archetype_id}],
            }
        )
    _write_json(out / "metadata.json", {"streams": streams})
    _write_json(out / "scenario.json", ingest.scenario_to_dict(scenario))
    logger.info("synth: %d samples, %d events in %.2fs", len(stream), len(events), time.perf_counter() - t0)
    print(f"wrote {out / 'aggregate.csv'} ({len(stream)} samples, {len(events)} events) and {len(scenario.archetypes)} submetered recordings")
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    X, y = _training_rows(args)
    logger.info("train: %d rows in %.2fs", X.shape[0], time.perf_counter() - t0)
    model = GBDTClassifier(
        n_estimators=args.n_estimators,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        reg_alpha=args.alpha,
        reg_lambda=args.reg_lambda,
        random_state=args.seed,
        n_jobs=args.threads,
    ).fit(X, y)
    logger.info("train: fitted in %.2fs", time.perf_counter() - t0)
    background = sample_background(X, args.background_size, args.seed)
    save_model(model, args.model, {"background": background.tolist()})
    if args.features_out:
        with open(args.features_out, "w") as fh:
            fh.write(",".join(FEATURE_NAMES) + ",label\n")
            for row, label in zip(X, y):
                fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
    acc = float(np.mean(model.predict(X) == y))
    print(f"trained on {X.shape[0]} rows, {len(model.classes_)} classes, training accuracy {acc:.4f}")
    return EXIT_OK


def _load_model_and_background(path, size: int, seed: int):
    model, doc = load_model_document(path)
    rows = doc.get("background")
    background = None
    if rows:
        background = sample_background(np.asarray(rows, dtype=np.float64), size, seed)
    return model, background


def cmd_run(args) -> int:
    model, background = _load_model_and_background(args.model, args.background_size, args.seed)
    if args.explain and background is None:
        raise DataError(f"{args.model}: no background rows stored; retrain to use --explain")
    stream = ingest.read_plaid_stream(args.input, args.column_order, args.sample_rate)
    config = PipelineConfig(
        T=args.cycle_samples,
        w=args.window,
        Z=args.z_threshold,
        sigma_floor=args.sigma_floor,
        n_a=args.cycles_after,
        guard=args.guard_cycles,
        f0_hz=args.f0,
        sample_rate_hz=args.sample_rate,
        explain=args.explain,
        background_size=args.background_size,
        timing=not args.no_timing,
    )
    events, pipe = run_stream(stream, model, config, background if args.explain else None, args.chunk_samples)
    with open(args.events, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json(model.feature_names_)) + "\n")
    for stage, secs in pipe.stage_seconds.items():
        logger.info("run: stage %s %.4fs", stage, secs)
    print(f"{len(events)} events from {pipe.n_cycles} cycles written to {args.events}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, background = _load_model_and_background(args.model, args.background_size, args.seed)
    test = build_test_set(_scenarios(args), n_a=args.cycles_after, **_detector_kwargs(args))
    if test.matched == 0:
        raise DataError("no matched events to evaluate")
    report = evaluate(model, test)
    doc = report.to_dict()
    precision, recall = detection_scores(test)
    doc["detection"] = {
        "annotations": test.n_annotations,
        "matched": test.matched,
        "missed": test.missed,
        "spurious": test.spurious,
        "partial": test.partial,
        "precision": precision,
        "recall": recall,
    }
    if args.baselines:
        X, y = _training_rows(args)
        others = baselines(X, y, test.X, test.labels, args.seed, models={"gbdt": model, **_non_gbdt(args.seed)})
        doc["baselines"] = others
    if args.correlation:
        write_correlation_csv(correlation_report(test.X), args.correlation)
    if args.summary:
        if background is None:
            raise DataError(f"{args.model}: no background rows stored")
        target = args.summary_class or str(model.classes_[0])
        rows = summary_table(model, test.X[test.labels == target] if (test.labels == target).any() else test.X, background, target)
        write_summary_csv(rows, args.summary)
    _write_json(args.report, doc)
    if args.confusion:
        write_confusion_csv(report, args.confusion)
    print(
        f"n_test={report.n_test} accuracy={report.accuracy:.4f} macro_P={report.macro_precision:.4f} "
        f"macro_R={report.macro_recall:.4f} macro_F1={report.macro_f1:.4f}"
    )
    if args.baselines:
        print("baselines: " + ", ".join(f"{k}={v:.4f}" for k, v in doc["baselines"].items()))
    return EXIT_OK


def _non_gbdt(seed):
    from .evaluation import baseline_models

    return {k: v for k, v in baseline_models(seed).items() if k != "gbdt"}


def cmd_sweep(args) -> int:
    try:
        candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--candidates must be comma-separated integers, got {args.candidates!r}") from None
    if not candidates or min(candidates) < 1:
        raise UsageError("--candidates must be positive integers")
    model, _ = _load_model_and_background(args.model, 1, args.seed)
    rows = sweep_na(model, _scenarios(args), candidates, **_detector_kwargs(args))
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"N_a={r['na']:>3}  accuracy={r['accuracy']:.4f}  events={r['n_events']}  skipped={r['skipped']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    model, background = _load_model_and_background(args.model, args.background_size, args.seed)
    stream = ingest.read_plaid_stream(args.input, args.column_order, args.sample_rate)
    config = PipelineConfig(
        T=args.cycle_samples,
        w=args.window,
        Z=args.z_threshold,
        sigma_floor=args.sigma_floor,
        n_a=args.cycles_after,
        guard=args.guard_cycles,
        f0_hz=args.f0,
        sample_rate_hz=args.sample_rate,
        explain=args.explain,
        background_size=args.background_size,
    )
    try:
        report = bench(stream, model, config, args.repetitions, background if args.explain else None)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(format_bench(report))
    if args.out:
        _write_json(args.out, report)
    return EXIT_OK


# parser


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=42, help="seed for every random choice")
    p.add_argument("--column-order", choices=("current_first", "voltage_first"), default="current_first",
                   help="column order of waveform CSVs (varies across PLAID releases)")
    p.add_argument("--cycle-samples", type=int, default=DEFAULT_CYCLE_SAMPLES, help="samples per resampled cycle T")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings")


def _add_detector(p):
    p.add_argument("--z-threshold", type=float, default=DEFAULT_Z, help="z-score threshold Z")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="sliding window w in cycles")
    p.add_argument("--sigma-floor", type=float, default=DEFAULT_SIGMA_FLOOR, help="lower bound on window std (W)")
    p.add_argument("--cycles-after", type=int, default=DEFAULT_CYCLES_AFTER, help="post-event cycles N_a")
    p.add_argument("--guard-cycles", type=int, default=DEFAULT_GUARD_CYCLES,
                   help="cycles between the pre-event reference and the detection cycle")


def _add_stream(p):
    p.add_argument("--f0", type=float, default=50.0, help="nominal grid frequency (Hz)")
    p.add_argument("--sample-rate", type=float, default=ingest.PLAID_SAMPLE_RATE_HZ, help="raw sample rate (Hz)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eventnilm", description=__doc__, formatter_class=_fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic aggregate + submetered dataset", formatter_class=_fmt)
    p.add_argument("--spec", help="scenario JSON; omit for the built-in 8-appliance preset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed (preset default 42)")
    p.add_argument("--events", type=int, default=200, help="preset: number of scheduled events")
    p.add_argument("--snr-db", type=float, default=40.0, help="preset: current SNR in dB (negative: no noise)")
    p.add_argument("--drift-hz", type=float, default=0.5, help="preset: peak grid frequency drift (Hz)")
    p.add_argument("--f0", type=float, default=50.0, help="preset: nominal grid frequency (Hz)")
    p.add_argument("--train-duration", type=float, default=10.0, help="seconds per submetered recording")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the boosted-tree classifier", formatter_class=_fmt)
    p.add_argument("--data", required=True, help="dataset directory with metadata.json")
    p.add_argument("--model", required=True, help="output model JSON")
    p.add_argument("--n-estimators", type=int, default=150, help="boosting rounds E")
    p.add_argument("--max-depth", type=int, default=8, help="maximum tree depth D")
    p.add_argument("--learning-rate", type=float, default=0.046, help="learning rate eta")
    p.add_argument("--alpha", type=float, default=10.0, help="L1 leaf regularisation alpha")
    p.add_argument("--reg-lambda", type=float, default=1.0, help="L2 leaf regularisation lambda")
    p.add_argument("--background-size", type=int, default=DEFAULT_BACKGROUND_SIZE,
                   help="training rows stored as the explanation background")
    p.add_argument("--features-out", help="also write the training feature CSV here")
    p.add_argument("--threads", type=int, default=1, help="threads for per-class tree growth")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="detect, classify and explain events in a waveform", formatter_class=_fmt)
    p.add_argument("--input", required=True, help="aggregate waveform CSV")
    p.add_argument("--model", required=True, help="model JSON from `train`")
    p.add_argument("--events", required=True, help="output JSONL, one event per line")
    p.add_argument("--explain", action="store_true", help="attach Shapley values to every event")
    p.add_argument("--background-size", type=int, default=DEFAULT_BACKGROUND_SIZE, help="background rows B")
    p.add_argument("--no-timing", action="store_true", help="write null tau_s/delta_t_s for reproducible output")
    p.add_argument("--chunk-samples", type=int, default=30000, help="raw samples fed per streaming step")
    _add_common(p)
    _add_detector(p)
    _add_stream(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="metrics, confusion matrix and baselines on annotated data", formatter_class=_fmt)
    p.add_argument("--data", required=True, help="dataset directory with metadata.json")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--confusion", help="output confusion matrix CSV")
    p.add_argument("--correlation", help="output 8x8 feature correlation CSV")
    p.add_argument("--baselines", action="store_true", help="also train decision tree and logistic regression")
    p.add_argument("--summary", help="output per-instance Shapley table CSV")
    p.add_argument("--summary-class", help="class explained in --summary (default: first class)")
    p.add_argument("--background-size", type=int, default=DEFAULT_BACKGROUND_SIZE, help="background rows B")
    _add_common(p)
    _add_detector(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-na", help="accuracy versus number of post-event cycles", formatter_class=_fmt)
    p.add_argument("--data", required=True, help="dataset directory with metadata.json")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--candidates", default="2,4,6,8,10,12,14,16,18,20,22,24", help="comma-separated N_a values")
    p.add_argument("--out", required=True, help="output CSV (na,accuracy)")
    _add_common(p)
    _add_detector(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="latency and per-stage timing report", formatter_class=_fmt)
    p.add_argument("--input", required=True, help="aggregate waveform CSV with at least one event")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--repetitions", type=int, default=10, help="full passes over the stream")
    p.add_argument("--explain", action="store_true", help="include the Shapley stage")
    p.add_argument("--background-size", type=int, default=DEFAULT_BACKGROUND_SIZE, help="background rows B")
    p.add_argument("--out", help="write the report JSON here")
    _add_common(p)
    _add_detector(p)
    _add_stream(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
