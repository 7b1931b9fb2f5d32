"""Command line interface: ``mixad {synth,train,score,interpret,evaluate,run-all}``.

Exit status is 0 on success, 1 for invalid input or configuration and 2
when a numeric failure (NaN/inf) aborts training or scoring.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import AnomalySpec, DatasetError, SynthConfig, atomic_write, generate_synthetic, load_dataset, save_dataset
from .evaluation import evaluate_run
from .interpret import rank_causes, segment_detected
from .losses import LossConfig
from .model import MixadModel
from .pipeline import attention_trace, label_kinds
from .scoring import best_f1_threshold, score_trace
from .training import NormalizationStats, TrainConfig, apply_normalizer, fit_normalizer, train

log = logging.getLogger("mixad")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(ValueError):
    """Bad configuration file or command line value."""


# ---------------------------------------------------------------------------
# config files


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> tuple[dict, dict, dict]:
    """Split ``key = value`` lines into train, loss and synth overrides.

    Bare keys are :class:`TrainConfig` fields, ``loss.*`` keys are
    :class:`LossConfig` fields and ``synth.*`` keys are :class:`SynthConfig`
    fields. ``synth.periods`` takes ``;``-separated floats and
    ``synth.anomalies`` takes ``kind:length:n_causal`` items separated by
    ``;``. Blank lines and ``#`` comments are ignored.
    """
    sections = {"": (TrainConfig(), {}), "loss": (LossConfig(), {}), "synth": (SynthConfig(), {})}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        prefix, _, name = key.rpartition(".")
        if prefix not in sections:
            raise ConfigError(f"{source}:{lineno}: unknown section {prefix!r}")
        defaults, out = sections[prefix]
        if name not in {f.name for f in dataclasses.fields(defaults)} or name == "loss" and prefix == "":
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if prefix == "synth" and name == "periods":
            try:
                out[name] = tuple(float(v) for v in raw.split(";") if v.strip())
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad period list {raw!r}") from None
        elif prefix == "synth" and name == "anomalies":
            out[name] = _parse_anomalies(raw, f"{source}:{lineno}")
        else:
            out[name] = _coerce(raw, getattr(defaults, name), f"{source}:{lineno}: {key}")
    return sections[""][1], sections["loss"][1], sections["synth"][1]


def _parse_anomalies(raw: str, where: str) -> tuple[AnomalySpec, ...]:
    specs = []
    for item in filter(None, (v.strip() for v in raw.split(";"))):
        try:
            kind, length, n_causal = item.split(":")
            specs.append(AnomalySpec(kind, int(length), int(n_causal)))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad anomaly {item!r} ({exc})") from None
    return tuple(specs)


def build_configs(args) -> tuple[TrainConfig, SynthConfig]:
    train_kw, loss_kw, synth_kw = {}, {}, {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        train_kw, loss_kw, synth_kw = parse_config(path.read_text(), str(path))
    if args.seed is not None:
        train_kw["seed"] = synth_kw["seed"] = args.seed
    try:
        return TrainConfig(**train_kw, loss=LossConfig(**loss_kw)), SynthConfig(**synth_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------------------
# file helpers


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x) -> str:
    return format(float(x), ".17g")


def _json_dump(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _require(path: Path) -> Path:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    return path


def read_scores(run: Path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    """Parse ``scores.csv`` into (feature names, s' (T, N), agg, flagged)."""
    path = _require(run / "scores.csv")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    if header[0] != "t" or header[-2:] != ["agg", "flagged"]:
        raise DatasetError(f"{path}:1: unexpected header")
    body = np.empty((len(rows) - 1, len(header)))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            body[lineno - 2] = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return header[1:-2], body[:, 1:-2], body[:, -2], body[:, -1].astype(bool)


def read_threshold(run: Path) -> float:
    path = _require(run / "threshold.txt")
    try:
        return float(path.read_text().strip())
    except ValueError:
        raise DatasetError(f"{path}: not a number") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    bundle = generate_synthetic(synth_cfg)
    save_dataset(bundle, args.out)
    log.info("wrote synthetic bundle (%d features) to %s", bundle.n_features, args.out)


def cmd_train(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    bundle = load_dataset(args.data)
    run = Path(args.out)
    stats = fit_normalizer(bundle.train)
    model = MixadModel.initialize(train_cfg.model_config(bundle.n_features),
                                  np.random.default_rng(np.random.SeedSequence(train_cfg.seed).spawn(2)[0]))
    result = train(model, apply_normalizer(bundle.train, stats), train_cfg)
    run.mkdir(parents=True, exist_ok=True)
    model.save(run / "best.ckpt", {
        "train": dataclasses.asdict(train_cfg),
        "normalizer": {"lo": stats.lo.tolist(), "hi": stats.hi.tolist()},
        "best_epoch": result.best_epoch,
    })
    atomic_write(run / "train_log.csv", result.log_csv())
    log.info("best epoch %d (val %.6g)", result.best_epoch, result.best_val)


def cmd_score(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    bundle = load_dataset(args.data)
    run = Path(args.out)
    model, meta = MixadModel.load(_require(run / "best.ckpt"))
    if model.cfg.n_nodes != bundle.n_features:
        raise DatasetError(f"checkpoint expects {model.cfg.n_nodes} features, data has {bundle.n_features}")
    norm = meta["normalizer"]
    stats = NormalizationStats(np.array(norm["lo"]), np.array(norm["hi"]))
    series = apply_normalizer(bundle.test, stats)
    trace = attention_trace(model, series)
    offset = model.cfg.window - 1
    scores = score_trace(trace, offset)
    threshold = best_f1_threshold(scores.agg, bundle.labels)

    rows = ([offset + j, node, *(_f(v) for v in trace[j, node])]
            for j in range(trace.shape[0]) for node in range(trace.shape[1]))
    atomic_write(run / "attention.csv",
                 _csv_text(["timestamp", "node", *(f"a{k}" for k in range(trace.shape[2]))], rows))
    rows = ([t, *(_f(v) for v in scores.deseasonalized[t]), _f(scores.agg[t]), int(threshold.flagged[t])]
            for t in range(len(scores.agg)))
    atomic_write(run / "scores.csv", _csv_text(["t", *bundle.names, "agg", "flagged"], rows))
    atomic_write(run / "threshold.txt", _f(threshold.cut) + "\n")
    if args.dump_adjacency:
        adj = model.graph("eval").adjacency.data
        atomic_write(run / "adjacency.csv", _csv_text(bundle.names, ([_f(v) for v in row] for row in adj)))
    log.info("threshold %.6g flags %d of %d timestamps", threshold.cut, threshold.flagged.sum(), len(scores.agg))


def cmd_interpret(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    run = Path(args.out)
    names, s_prime, _, flagged = read_scores(run)
    segments = [rank_causes(s_prime, a, b).to_dict() for a, b in segment_detected(flagged)]
    for seg in segments:
        seg["anchor_name"] = names[seg["anchor"]]
    _json_dump(run / "segments.json", segments)
    log.info("%d flagged segments", len(segments))


def cmd_evaluate(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    bundle = load_dataset(args.data)
    run = Path(args.out)
    _, s_prime, agg, _ = read_scores(run)
    if len(agg) != bundle.labels.size:
        raise DatasetError(f"scores cover {len(agg)} timestamps, labels {bundle.labels.size}")
    report = evaluate_run(s_prime, agg, read_threshold(run), bundle.ground_truth())
    label_kinds(report, bundle)
    _json_dump(run / "report.json", report)
    log.info("F1 %.4f  HitRate@100%% %.4f  HitRate@150%% %.4f", report["f1"], report["hitrate100"], report["hitrate150"])


def cmd_run_all(args, train_cfg: TrainConfig, synth_cfg: SynthConfig) -> None:
    run = Path(args.out)
    if args.data is None:
        args.data = str(run / "data")
        data_args = argparse.Namespace(**{**vars(args), "out": args.data})
        cmd_synth(data_args, train_cfg, synth_cfg)
    for step in (cmd_train, cmd_score, cmd_interpret, cmd_evaluate):
        step(args, train_cfg, synth_cfg)


COMMANDS = {
    "synth": (cmd_synth, "write a generated synthetic bundle to --out"),
    "train": (cmd_train, "train on --data; writes best.ckpt and train_log.csv to --out"),
    "score": (cmd_score, "score --data test split; writes attention.csv, scores.csv, threshold.txt"),
    "interpret": (cmd_interpret, "rank causal features of flagged segments; writes segments.json"),
    "evaluate": (cmd_evaluate, "point-adjusted F1 and HitRate against --data labels; writes report.json"),
    "run-all": (cmd_run_all, "synth (unless --data is given), train, score, interpret, evaluate"),
}


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for training and synthesis")
    parser.add_argument("--config", default=default, help="flat key=value config file")
    parser.add_argument("--out", default=default, help="output (run or dataset) directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixad", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        if name in ("train", "score", "evaluate", "run-all"):
            p.add_argument("--data", required=name != "run-all", help="dataset directory")
        if name in ("score", "run-all"):
            p.add_argument("--dump-adjacency", action="store_true", help="also write adjacency.csv")
    return parser


def _log_level() -> int:
    level = os.environ.get("MIXAD_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"MIXAD_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    return LOG_LEVELS[level]


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # configure the package logger for this invocation only, so embedding
    # callers keep their own logging setup
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    saved = (log.level, log.propagate)
    try:
        log.setLevel(_log_level())
        log.addHandler(handler)
        log.propagate = False
        if args.out is None:
            raise ConfigError("--out is required")
        train_cfg, synth_cfg = build_configs(args)
        COMMANDS[args.command][0](args, train_cfg, synth_cfg)
    except nx.NumericError as exc:
        print(f"mixad: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"mixad: error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        log.setLevel(saved[0])
        log.propagate = saved[1]
    return 0


if __name__ == "__main__":
    sys.exit(main())
