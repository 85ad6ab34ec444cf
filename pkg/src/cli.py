"""Command-line entry point: ``driftwatch {train,run,eval,synth}``."""
import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from .analysis.metrics.evaluation import evaluate
from .config.settings import Settings, load_settings
from .data.generators.drift_stream import DriftSpec, random_concepts, synth_stream
from .data.loaders.csv_loader import CsvStreamLoader, write_stream_csv
from .data.loaders.verdict_loader import VerdictLoader
from .data.shingling import shingle_stream
from .data.streams import LabeledStream, split_historical
from .exceptions import ConfigError, DataFormatError, DriftwatchError
from .observability.logs import configure_logging
from .services.bundle_store import load_bundle, save_bundle
from .services.registry import RunRegistry
from .services.stream_runner import StreamRunner
from .services.training import train

EXIT_OK = 0
EXIT_FAILURE = 1


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = (part.strip() for part in pair.split("=", 1))
        overrides[key] = value
    return overrides


def _settings(args: argparse.Namespace) -> Settings:
    overrides: Dict[str, Any] = _parse_overrides(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    settings = load_settings(args.config, overrides)
    configure_logging(settings.log_level, settings.json_logs)
    return settings


def _load_stream(path: Path, label_column: str, settings: Settings, require_labels: bool = False) -> LabeledStream:
    loader = CsvStreamLoader(label_column=label_column or None, require_labels=require_labels)
    stream = loader.load(path)
    if settings.shingle_width:
        stream = shingle_stream(stream, settings.shingle_width)
    return stream


def _add_common(parser: argparse.ArgumentParser, config_required: bool) -> None:
    parser.add_argument("--config", type=Path, required=config_required, help="Flat key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override one setting")
    parser.add_argument("--print-config", action="store_true", help="Print the resolved configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftwatch", description="Streaming anomaly detection under concept drift")
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="Train a model bundle on the historical prefix of a stream")
    _add_common(p_train, config_required=True)
    p_train.add_argument("--data", type=Path, required=True, help="CSV stream")
    p_train.add_argument("--label-column", default="label", help="Ground-truth column ('' for none)")
    p_train.add_argument("-o", "--output", type=Path, required=True, help="Bundle directory to write")
    p_train.add_argument("--seed", type=int, default=None)

    p_run = commands.add_parser("run", help="Replay a stream through a bundle with live adaptation")
    _add_common(p_run, config_required=True)
    p_run.add_argument("--bundle", type=Path, help="Bundle directory written by train")
    p_run.add_argument("--data", type=Path, required=True, help="CSV stream")
    p_run.add_argument("--label-column", default="label", help="Column excluded from the features ('' for none)")
    p_run.add_argument("-o", "--output", type=Path, required=True, help="NDJSON verdict file")
    p_run.add_argument("--start", type=int, default=None, help="First index to score (default: end of training prefix)")
    p_run.add_argument("--checkpoint-dir", type=Path, default=None)
    p_run.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --checkpoint-dir")

    p_eval = commands.add_parser("eval", help="Score verdicts against ground truth")
    _add_common(p_eval, config_required=False)
    p_eval.add_argument("--verdicts", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True, help="Labelled CSV stream the verdicts came from")
    p_eval.add_argument("--label-column", default="label")
    p_eval.add_argument("--window", type=int, default=200)
    p_eval.add_argument("--baseline", type=Path, default=None, help="Verdicts of a comparison run")
    p_eval.add_argument("-o", "--output", type=Path, default=None, help="Report file (stdout when omitted)")

    p_synth = commands.add_parser("synth", help="Generate a synthetic drifting stream")
    p_synth.add_argument("--kind", choices=["abrupt", "gradual", "incremental", "recurrent"], default="abrupt")
    p_synth.add_argument("--n", type=int, default=5000)
    p_synth.add_argument("--dim", type=int, default=4)
    p_synth.add_argument("--concepts", type=int, default=2)
    p_synth.add_argument("--anomaly-rate", type=float, default=0.01)
    p_synth.add_argument("--segment-min", type=int, default=250)
    p_synth.add_argument("--segment-max", type=int, default=1000)
    p_synth.add_argument("--transition-width", type=int, default=200)
    p_synth.add_argument("--drift-at", type=int, nargs="+", default=None, help="Explicit drift positions")
    p_synth.add_argument("--spec", type=Path, default=None, help="JSON DriftSpec (overrides the other stream flags)")
    p_synth.add_argument("--seed", type=int, default=None, help="Defaults to DRIFTWATCH_SEED, then 0")
    p_synth.add_argument("-o", "--output", type=Path, required=True)
    return parser


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    stream = _load_stream(args.data, args.label_column, settings)
    historical, _ = split_historical(stream, settings.h_r)
    labels = historical.labels if settings.prior_label_fraction > 0 else None
    bundle = train(historical.instances, settings, labels=labels)
    save_bundle(bundle, args.output, settings.resolved())
    print(json.dumps({"bundle": str(args.output), "historical_count": bundle.historical_count, "d": bundle.input_dim}))
    return EXIT_OK


def _trim_verdicts(path: Path, next_index: int) -> None:
    """Drop verdicts written after the checkpoint being resumed."""
    if not path.exists():
        return
    kept = [v.to_record() for v in VerdictLoader().load(path) if v.index < next_index]
    path.write_text("".join(json.dumps(record) + "\n" for record in kept), encoding="utf-8")


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    stream = _load_stream(args.data, args.label_column, settings)
    registry = RunRegistry(settings.registry_url)
    if args.resume:
        if args.checkpoint_dir is None:
            raise ConfigError("--resume needs --checkpoint-dir")
        runner = StreamRunner.resume(args.checkpoint_dir, settings, registry=registry)
        _trim_verdicts(args.output, runner.next_index)
        mode = "a"
    else:
        if args.bundle is None:
            raise ConfigError("run needs --bundle unless --resume is given")
        if settings.checkpoint_every and args.checkpoint_dir is None:
            logger.warning("checkpoint_every is set but no --checkpoint-dir was given; not checkpointing")
        runner = StreamRunner(load_bundle(args.bundle), settings, checkpoint_dir=args.checkpoint_dir, registry=registry)
        mode = "w"
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with runner, args.output.open(mode, encoding="utf-8") as sink:
        runner.sink = sink
        runner.keep_verdicts = False
        summary = runner.run(stream.instances, start=args.start)
    print(summary.model_dump_json())
    return EXIT_OK


def _aligned_labels(stream: LabeledStream, indices: List[int]) -> np.ndarray:
    if stream.labels is None:
        raise DataFormatError("Evaluation needs a label column")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= stream.n):
        raise DataFormatError(f"Verdict indices reach {int(idx.max())} but the stream has {stream.n} instances")
    return stream.labels[idx]


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    stream = _load_stream(args.data, args.label_column, settings, require_labels=True)
    verdicts = VerdictLoader().load(args.verdicts)
    baseline = None
    if args.baseline is not None:
        baseline = VerdictLoader().load(args.baseline)
        if [v.index for v in baseline] != [v.index for v in verdicts]:
            raise DataFormatError("Baseline verdicts do not cover the same indices")
    labels = _aligned_labels(stream, [v.index for v in verdicts])
    first = verdicts[0].index if verdicts else 0
    markers = [m - first for m in stream.drift_markers if m >= first]
    report = evaluate(verdicts, labels, args.window, markers, stream.synthetic, baseline)
    text = report.to_json()
    RunRegistry(settings.registry_url).record_evaluation(str(args.verdicts), args.window, json.loads(text))
    if args.output is None:
        print(text)
    else:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _synth_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get("DRIFTWATCH_SEED", "0")
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"DRIFTWATCH_SEED must be an integer, got '{raw}'") from e


def cmd_synth(args: argparse.Namespace) -> int:
    configure_logging()
    seed = _synth_seed(args)
    if args.spec is not None:
        try:
            spec = DriftSpec.model_validate_json(args.spec.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"Cannot read spec {args.spec}: {e}") from e
    else:
        concepts = random_concepts(args.concepts, args.dim, np.random.default_rng([seed, 1]))
        spec = DriftSpec(
            kind=args.kind,
            concepts=concepts,
            n=args.n,
            anomaly_rate=args.anomaly_rate,
            segment_min=args.segment_min,
            segment_max=args.segment_max,
            drift_positions=args.drift_at,
            transition_width=args.transition_width,
        )
    stream = synth_stream(spec, seed)
    write_stream_csv(stream, args.output)
    summary = {"output": str(args.output), "n": stream.n, "d": stream.d, "drift_markers": list(stream.drift_markers)}
    print(json.dumps(summary))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand.

    Returns:
        0 on success, 1 on validation/runtime failure. Usage errors exit with 2.
    """
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        settings = _settings(args)
        if args.print_config:
            sys.stdout.write(settings.to_config_text())
            return EXIT_OK
        handlers = {"train": cmd_train, "run": cmd_run, "eval": cmd_eval}
        return handlers[args.command](args, settings)
    except (DriftwatchError, OSError, ValueError) as e:
        print(f"driftwatch: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
