"""Dataset bundles on disk and the synthetic benchmark with labelled, explained anomalies."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import GroundTruth


class DatasetError(ValueError):
    """A dataset file is missing or malformed."""


@dataclass
class DatasetBundle:
    train: np.ndarray  # (N, T_train)
    test: np.ndarray  # (N, T_test)
    labels: np.ndarray  # (T_test,) bool
    interpretation: list[tuple[int, int, frozenset]] = field(default_factory=list)
    names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64)
        self.test = np.asarray(self.test, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.names is None:
            self.names = [f"f{i}" for i in range(self.train.shape[0])]
        self.validate()

    @property
    def n_features(self) -> int:
        return self.train.shape[0]

    def validate(self) -> None:
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise DatasetError("train and test must be 2-D (features x time)")
        if self.train.shape[0] != self.test.shape[0]:
            raise DatasetError(f"train has {self.train.shape[0]} features but test has {self.test.shape[0]}")
        if self.labels.shape != (self.test.shape[1],):
            raise DatasetError(f"labels length {self.labels.size} != test length {self.test.shape[1]}")
        if len(self.names) != self.n_features:
            raise DatasetError("feature names do not match feature count")
        for start, end, causes in self.interpretation:
            if not 0 <= start <= end < self.test.shape[1]:
                raise DatasetError(f"interpretation span ({start}, {end}) outside [0, {self.test.shape[1]})")
            if not causes or any(not 0 <= c < self.n_features for c in causes):
                raise DatasetError(f"interpretation span ({start}, {end}) has invalid causes {sorted(causes)}")

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.labels, list(self.interpretation))


# ---------------------------------------------------------------------------
# CSV formats


def _fmt(x: float) -> str:
    return format(float(x), ".17g")  # 17 significant digits round-trip f64 exactly


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _series_csv(values: np.ndarray, names: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in values.T:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def save_dataset(bundle: DatasetBundle, directory: str | os.PathLike) -> None:
    d = Path(directory)
    atomic_write(d / "train.csv", _series_csv(bundle.train, bundle.names))
    atomic_write(d / "test.csv", _series_csv(bundle.test, bundle.names))
    atomic_write(d / "labels.csv", "".join(f"{int(v)}\n" for v in bundle.labels))
    lines = [f"{a},{b},{';'.join(str(c) for c in sorted(causes))}\n" for a, b, causes in bundle.interpretation]
    atomic_write(d / "interpretation.csv", "".join(lines))
    if bundle.meta:
        atomic_write(d / "meta.json", json.dumps(bundle.meta, indent=1, sort_keys=True) + "\n")


def _read_rows(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def _read_series(path: Path) -> tuple[np.ndarray, list[str]]:
    rows = _read_rows(path)
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    values = np.empty((len(body), len(header)))
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            values[lineno - 2] = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    if not np.all(np.isfinite(values)):
        raise DatasetError(f"{path}: non-finite values")
    return values.T.copy(), header


def load_dataset(directory: str | os.PathLike) -> DatasetBundle:
    """Read ``train.csv``, ``test.csv``, ``labels.csv`` and ``interpretation.csv``."""
    d = Path(directory)
    train, names = _read_series(d / "train.csv")
    test, test_names = _read_series(d / "test.csv")
    if test_names != names:
        raise DatasetError(f"{d / 'test.csv'}: header differs from train.csv")

    labels = []
    path = d / "labels.csv"
    for lineno, row in enumerate(_read_rows(path), start=1):
        if len(row) != 1 or row[0].strip() not in ("0", "1"):
            raise DatasetError(f"{path}:{lineno}: expected a single 0/1 value")
        labels.append(row[0].strip() == "1")

    interpretation = []
    path = d / "interpretation.csv"
    rows = _read_rows(path) if path.exists() else []
    for lineno, row in enumerate(rows, start=1):
        try:
            if len(row) != 3:
                raise ValueError("expected start,end,causes")
            start, end = int(row[0]), int(row[1])
            causes = frozenset(int(c) for c in row[2].split(";") if c.strip())
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        if start > end:
            raise DatasetError(f"{path}:{lineno}: start {start} > end {end}")
        if not 0 <= start or end >= test.shape[1]:
            raise DatasetError(f"{path}:{lineno}: span ({start}, {end}) out of bounds for {test.shape[1]} steps")
        if not causes or any(not 0 <= c < len(names) for c in causes):
            raise DatasetError(f"{path}:{lineno}: causal feature index out of range")
        interpretation.append((start, end, causes))

    meta = {}
    path = d / "meta.json"
    if path.exists():
        try:
            meta = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: {exc}") from None
    try:
        return DatasetBundle(train, test, np.array(labels, dtype=bool), interpretation, names, meta)
    except DatasetError as exc:
        raise DatasetError(f"{d}: {exc}") from None


# ---------------------------------------------------------------------------
# synthetic benchmark

ANOMALY_KINDS = ("spike", "level_shift", "correlation_break")


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    length: int
    n_causal: int

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {self.kind!r}")
        if self.length < 1 or self.n_causal < 1:
            raise ValueError("anomaly length and causal set size must be positive")


DEFAULT_ANOMALIES = (
    AnomalySpec("spike", 40, 2),
    AnomalySpec("level_shift", 50, 2),
    AnomalySpec("correlation_break", 60, 2),
    AnomalySpec("spike", 40, 3),
    AnomalySpec("level_shift", 50, 3),
    AnomalySpec("correlation_break", 60, 2),
)


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 8
    t_train: int = 4000
    t_test: int = 2000
    periods: tuple[float, ...] | None = None  # per-node base periods; drawn from [20, 60] if None
    coupling_density: float = 0.3
    coupling_weight: float = 1.0
    noise_sigma: float = 0.1
    anomalies: tuple[AnomalySpec, ...] = DEFAULT_ANOMALIES
    spike_height: float = 6.0  # in units of the node's training std
    shift_height: float = 4.0
    margin: int = 100  # anomaly-free lead-in and tail of the test split
    seed: int = 0

    def __post_init__(self):
        if self.periods is not None and len(self.periods) != self.n_nodes:
            raise ValueError("need one base period per node")
        for spec in self.anomalies:
            if spec.n_causal > self.n_nodes:
                raise ValueError(f"causal set size {spec.n_causal} exceeds {self.n_nodes} nodes")


def _coupling(rng: np.random.Generator, cfg: SynthConfig):
    """Directed lagged couplings; every node gets at least one driver so any node can break."""
    n = cfg.n_nodes
    weights = np.zeros((n, n))
    lags = np.zeros((n, n), dtype=int)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        chosen = [j for j in others if rng.random() < cfg.coupling_density]
        if not chosen:
            chosen = [others[rng.integers(len(others))]]
        for j in chosen:
            weights[i, j] = cfg.coupling_weight * rng.uniform(0.6, 1.0) / len(chosen) ** 0.5
            lags[i, j] = rng.integers(1, 6)
    return weights, lags


def _place_spans(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, int]]:
    lengths = [a.length for a in cfg.anomalies]
    usable = cfg.t_test - 2 * cfg.margin
    slack = usable - sum(lengths) - cfg.margin * (len(lengths) - 1)
    if slack < 0:
        raise ValueError("anomaly spans do not fit in the test split")
    # random gaps that sum to the slack keep spans ordered and disjoint
    cuts = np.sort(rng.integers(0, slack + 1, size=len(lengths)))
    gaps = np.diff(np.r_[0, cuts])
    spans, pos = [], cfg.margin
    for length, gap in zip(lengths, gaps):
        pos += int(gap)
        spans.append((pos, pos + length - 1))
        pos += length + cfg.margin
    return spans


@dataclass
class SyntheticParts:
    """Additive components of a generated series, each ``(N, T_train + T_test)``."""

    base: np.ndarray  # each node's own periodic signal
    coupling: np.ndarray  # weighted lagged copies of the drivers' base signals
    noise: np.ndarray
    inject: np.ndarray  # anomaly perturbations (zero outside the test spans)
    labels: np.ndarray
    interpretation: list
    meta: dict

    @property
    def series(self) -> np.ndarray:
        return self.base + self.coupling + self.noise + self.inject


def synthetic_parts(cfg: SynthConfig = SynthConfig()) -> SyntheticParts:
    """Build the synthetic benchmark and keep its components apart.

    Node ``i`` is ``base_i(t) + sum_j w_ij base_j(t - lag_ij) + noise``.
    Spikes add pulses on the causal nodes, level shifts add a constant
    offset, and a correlation break swaps the causal nodes' coupling terms
    for independent noise with the same mean and spread, so each series
    keeps plausible marginals while its relation to its drivers vanishes.
    """
    rng = np.random.default_rng(cfg.seed)
    n, total = cfg.n_nodes, cfg.t_train + cfg.t_test
    periods = np.asarray(cfg.periods if cfg.periods is not None else rng.uniform(20, 60, size=n))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 2))
    lag_pad = 8
    t = np.arange(-lag_pad, total)
    base = (np.sin(2 * np.pi * t / periods[:, None] + phase[:, :1])
            + 0.4 * np.sin(4 * np.pi * t / periods[:, None] + phase[:, 1:]))
    weights, lags = _coupling(rng, cfg)
    coupling = np.zeros((n, total))
    for i in range(n):
        for j in np.flatnonzero(weights[i]):
            coupling[i] += weights[i, j] * base[j, lag_pad - lags[i, j] : lag_pad - lags[i, j] + total]
    base = base[:, lag_pad:]
    noise = rng.normal(0.0, cfg.noise_sigma, size=(n, total))

    tr = slice(0, cfg.t_train)
    node_std = (base + coupling + noise)[:, tr].std(axis=1)
    coup_mean = coupling[:, tr].mean(axis=1)
    coup_std = coupling[:, tr].std(axis=1)

    te = cfg.t_train
    labels = np.zeros(cfg.t_test, dtype=bool)
    interpretation = []
    inject = np.zeros((n, total))
    for spec, (start, end) in zip(cfg.anomalies, _place_spans(rng, cfg)):
        causes = np.sort(rng.choice(n, size=spec.n_causal, replace=False))
        a, b = te + start, te + end + 1
        if spec.kind == "spike":
            n_pulses = max(1, spec.length // 10)
            at = a + rng.choice(spec.length, size=n_pulses, replace=False)
            for i in causes:
                inject[i, at] += cfg.spike_height * node_std[i]
        elif spec.kind == "level_shift":
            for i in causes:
                inject[i, a:b] += cfg.shift_height * node_std[i]
        else:
            for i in causes:
                fresh = rng.normal(coup_mean[i], coup_std[i], size=b - a)
                inject[i, a:b] += fresh - coupling[i, a:b]
        labels[start : end + 1] = True
        interpretation.append((start, end, frozenset(int(c) for c in causes)))

    meta = {
        "kinds": [spec.kind for spec in cfg.anomalies],
        "periods": [float(p) for p in periods],
        "coupling": weights.tolist(),
        "lags": lags.tolist(),
        "sampling": "synthetic, unit step",
    }
    return SyntheticParts(base, coupling, noise, inject, labels, interpretation, meta)


def generate_synthetic(cfg: SynthConfig = SynthConfig()) -> DatasetBundle:
    """Coupled multi-periodic series with anomalies injected into the test split only."""
    parts = synthetic_parts(cfg)
    series = parts.series
    return DatasetBundle(series[:, : cfg.t_train], series[:, cfg.t_train :], parts.labels,
                         parts.interpretation, meta=parts.meta)
