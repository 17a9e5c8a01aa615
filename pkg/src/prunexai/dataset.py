"""Temporal regression datasets: containers, CSV I/O, scaling, splits and
the seeded synthetic benchmark.

A dataset is a rectangular tensor of ``n_samples`` samples, each a
``T x F_t`` matrix (rows are time steps, columns temporal features) plus an
optional static vector of length ``F_s`` and a scalar target.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import derive_rng
from .errors import DataError

TEMPORAL = "temporal"
STATIC = "static"

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = TEMPORAL
    index: int = 0

    def __post_init__(self):
        if self.kind not in (TEMPORAL, STATIC):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.index < 0:
            raise DataError(f"feature {self.name!r}: negative index")

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "index": self.index}


def make_schema(temporal_names: Sequence[str], static_names: Sequence[str] = ()):
    """Build a FeatureSpec list with contiguous per-kind indices."""
    specs = [FeatureSpec(n, TEMPORAL, i) for i, n in enumerate(temporal_names)]
    specs += [FeatureSpec(n, STATIC, i) for i, n in enumerate(static_names)]
    return specs


def schema_from_dicts(items):
    """Accepts ``[{"name": ..., "kind": ...}, ...]``; indices are assigned if absent."""
    counters = {TEMPORAL: 0, STATIC: 0}
    specs = []
    for item in items:
        if isinstance(item, str):
            item = {"name": item}
        kind = item.get("kind", TEMPORAL)
        if kind not in counters:
            raise DataError(f"feature {item.get('name')!r}: unknown kind {kind!r}")
        idx = item.get("index", counters[kind])
        counters[kind] += 1
        specs.append(FeatureSpec(item["name"], kind, idx))
    return specs


def _validate_schema(features):
    names = [f.name for f in features]
    if len(set(names)) != len(names):
        raise DataError("feature names must be unique")
    for kind in (TEMPORAL, STATIC):
        idx = sorted(f.index for f in features if f.kind == kind)
        if idx != list(range(len(idx))):
            raise DataError(f"{kind} feature indices must be contiguous from 0")


@dataclass
class Sample:
    id: str
    temporal: np.ndarray
    static: np.ndarray
    target: float

    def __post_init__(self):
        self.temporal = np.atleast_2d(np.asarray(self.temporal, dtype=float))
        self.static = np.asarray(self.static, dtype=float).reshape(-1)
        self.target = float(self.target)


@dataclass
class NormalizationSpec:
    """Per-feature min/max bounds used to map values onto [0, 1]."""

    temporal_min: np.ndarray
    temporal_max: np.ndarray
    static_min: np.ndarray
    static_max: np.ndarray
    constant_fill: float = 0.5

    def __post_init__(self):
        for name in ("temporal_min", "temporal_max", "static_min", "static_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if np.any(self.temporal_min > self.temporal_max) or np.any(
            self.static_min > self.static_max
        ):
            raise DataError("normalization bounds require min <= max")

    @property
    def mins(self):
        return np.concatenate([self.temporal_min, self.static_min])

    @property
    def maxs(self):
        return np.concatenate([self.temporal_max, self.static_max])

    @property
    def n_features(self):
        return self.temporal_min.size + self.static_min.size

    def select(self, temporal_keep, static_keep):
        return NormalizationSpec(
            self.temporal_min[temporal_keep],
            self.temporal_max[temporal_keep],
            self.static_min[static_keep],
            self.static_max[static_keep],
            self.constant_fill,
        )

    def to_dict(self):
        return {
            "temporal_min": self.temporal_min.tolist(),
            "temporal_max": self.temporal_max.tolist(),
            "static_min": self.static_min.tolist(),
            "static_max": self.static_max.tolist(),
            "constant_fill": self.constant_fill,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["temporal_min"],
            d["temporal_max"],
            d["static_min"],
            d["static_max"],
            d.get("constant_fill", 0.5),
        )


@dataclass(eq=False)
class TemporalDataset:
    """Rectangular collection of samples stored as dense arrays.

    ``temporal`` has shape ``(n, T, F_t)``, ``static`` ``(n, F_s)`` and
    ``targets`` ``(n,)``. ``index_map`` is set by pruning and maps original
    feature positions to their compacted positions.
    """

    features: list
    ids: list
    temporal: np.ndarray
    static: np.ndarray
    targets: np.ndarray
    normalization: NormalizationSpec | None = None
    index_map: dict | None = field(default=None)

    def __post_init__(self):
        self.features = list(self.features)
        self.ids = [str(i) for i in self.ids]
        self.temporal = np.asarray(self.temporal, dtype=float)
        n = len(self.ids)
        if self.temporal.ndim != 3:
            raise DataError("temporal array must have shape (n, T, F_t)")
        static = np.asarray(self.static, dtype=float)
        if static.ndim != 2:
            width = static.size // n if n else sum(f.kind == STATIC for f in self.features)
            static = static.reshape(n, width)
        self.static = static
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        _validate_schema(self.features)
        if len(set(self.ids)) != n:
            raise DataError("sample ids must be unique")
        if self.temporal.shape[0] != n or self.targets.shape[0] != n:
            raise DataError("ids, temporal and targets disagree on sample count")
        if self.temporal.shape[1] < 1:
            raise DataError("every sample needs at least one time step")
        n_t = sum(f.kind == TEMPORAL for f in self.features)
        n_s = len(self.features) - n_t
        if self.temporal.shape[2] != n_t or self.static.shape[1] != n_s:
            raise DataError(
                f"array widths ({self.temporal.shape[2]}, {self.static.shape[1]}) "
                f"do not match schema ({n_t} temporal, {n_s} static)"
            )
        # keep a canonical order: temporal features first, then static, by index
        self.features.sort(key=lambda f: (f.kind != TEMPORAL, f.index))

    # -- shape helpers -------------------------------------------------------
    @property
    def n_samples(self):
        return len(self.ids)

    @property
    def t_steps(self):
        return self.temporal.shape[1]

    @property
    def n_temporal(self):
        return self.temporal.shape[2]

    @property
    def n_static(self):
        return self.static.shape[1]

    @property
    def n_features(self):
        return self.n_temporal + self.n_static

    @property
    def shape(self):
        """``(T, F_t, F_s)``, the per-sample input shape."""
        return (self.t_steps, self.n_temporal, self.n_static)

    @property
    def feature_names(self):
        return [f.name for f in self.features]

    @property
    def n_cells(self):
        return self.n_samples * (self.t_steps * self.n_temporal + self.n_static)

    def sample(self, i):
        return Sample(self.ids[i], self.temporal[i].copy(), self.static[i].copy(),
                      self.targets[i])

    @property
    def samples(self):
        return [self.sample(i) for i in range(self.n_samples)]

    def flat(self):
        """Model-ready design matrix: row-major temporal cells then static."""
        n = self.n_samples
        return np.concatenate([self.temporal.reshape(n, -1), self.static], axis=1)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return TemporalDataset(
            self.features,
            [self.ids[i] for i in indices],
            self.temporal[indices],
            self.static[indices],
            self.targets[indices],
            self.normalization,
            self.index_map,
        )

    def select_ids(self, ids):
        pos = {sid: i for i, sid in enumerate(self.ids)}
        try:
            return self.subset([pos[s] for s in ids])
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r}") from None

    def with_targets(self, targets):
        out = self.subset(np.arange(self.n_samples))
        out.targets = np.asarray(targets, dtype=float).reshape(-1).copy()
        return out

    def equals(self, other):
        """Deep equality of schema, ids, values and normalization."""
        if not isinstance(other, TemporalDataset):
            return False
        if self.features != other.features or self.ids != other.ids:
            return False
        if self.temporal.shape != other.temporal.shape:
            return False
        same = (
            np.array_equal(self.temporal, other.temporal)
            and np.array_equal(self.static, other.static)
            and np.array_equal(self.targets, other.targets)
        )
        if not same:
            return False
        a, b = self.normalization, other.normalization
        if (a is None) != (b is None):
            return False
        if a is not None:
            return a.to_dict() == b.to_dict()
        return True

    @classmethod
    def from_samples(cls, features, samples, normalization=None):
        samples = list(samples)
        if not samples:
            raise DataError("dataset has no samples")
        shapes = {s.temporal.shape for s in samples}
        if len(shapes) != 1:
            raise DataError(f"ragged samples: temporal shapes {sorted(shapes)}")
        statics = {s.static.shape for s in samples}
        if len(statics) != 1:
            raise DataError("static vectors differ in length across samples")
        return cls(
            features,
            [s.id for s in samples],
            np.stack([s.temporal for s in samples]),
            np.stack([s.static for s in samples]),
            np.array([s.target for s in samples]),
            normalization,
        )


# -- CSV I/O -----------------------------------------------------------------

def _parse_float(text, where):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric cell {text!r} at {where}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell {text!r} at {where}")
    return value


def load_csv(features_path, targets_path, schema=None):
    """Read the long-format feature file and the per-sample target file.

    Feature header: ``sample_id,time_index,<temporal...>[,<static...>]``.
    Target header: ``sample_id,target``. Static columns must be constant
    within a sample. When ``schema`` is None every value column is treated
    as temporal.
    """
    features_path, targets_path = Path(features_path), Path(targets_path)
    with open(features_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{features_path}: empty file") from None
        if header[:2] != ["sample_id", "time_index"]:
            raise DataError(f"{features_path}: header must start with sample_id,time_index")
        value_cols = header[2:]
        if schema is None:
            schema = make_schema(value_cols)
        schema = list(schema)
        _validate_schema(schema)
        temporal_specs = sorted((f for f in schema if f.kind == TEMPORAL), key=lambda f: f.index)
        static_specs = sorted((f for f in schema if f.kind == STATIC), key=lambda f: f.index)
        expected = [f.name for f in temporal_specs] + [f.name for f in static_specs]
        if value_cols != expected:
            raise DataError(f"{features_path}: columns {value_cols} do not match schema {expected}")
        n_t = len(temporal_specs)

        rows: dict[str, dict[int, list]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{features_path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            sid = row[0]
            try:
                t = int(row[1])
            except ValueError:
                raise DataError(f"{features_path}:{lineno}: non-integer time_index {row[1]!r}") from None
            vals = [_parse_float(c, f"{features_path}:{lineno}:{header[j + 2]}")
                    for j, c in enumerate(row[2:])]
            per_sample = rows.setdefault(sid, {})
            if t in per_sample:
                raise DataError(f"duplicate (sample_id, time_index) = ({sid!r}, {t})")
            per_sample[t] = vals

    with open(targets_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            theader = next(reader)
        except StopIteration:
            raise DataError(f"{targets_path}: empty file") from None
        if theader != ["sample_id", "target"]:
            raise DataError(f"{targets_path}: header must be sample_id,target")
        targets = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{targets_path}:{lineno}: expected 2 cells")
            if row[0] in targets:
                raise DataError(f"duplicate target for sample {row[0]!r}")
            targets[row[0]] = _parse_float(row[1], f"{targets_path}:{lineno}")

    if not rows:
        raise DataError(f"{features_path}: no data rows")
    for sid in rows:
        if sid not in targets:
            raise DataError(f"missing target for sample {sid!r}")
    extra = set(targets) - set(rows)
    if extra:
        raise DataError(f"targets given for unknown samples {sorted(extra)}")

    time_axis = None
    samples = []
    for sid, per_sample in rows.items():
        times = sorted(per_sample)
        if time_axis is None:
            time_axis = times
        elif times != time_axis:
            raise DataError(f"ragged time axis: sample {sid!r} has {len(times)} rows, "
                            f"expected {len(time_axis)}")
        mat = np.array([per_sample[t] for t in times], dtype=float)
        static = mat[:, n_t:]
        if static.size and np.any(static != static[0]):
            raise DataError(f"static features vary over time in sample {sid!r}")
        samples.append(Sample(sid, mat[:, :n_t], static[0] if static.size else [], targets[sid]))
    return TemporalDataset.from_samples(schema, samples)


def save_csv(dataset: TemporalDataset, features_path, targets_path):
    """Write ``dataset`` in the format read by :func:`load_csv`."""
    header = ["sample_id", "time_index"] + dataset.feature_names
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, sid in enumerate(dataset.ids):
            static = [_FLOAT_FMT % v for v in dataset.static[i]]
            for t in range(dataset.t_steps):
                w.writerow([sid, t] + [_FLOAT_FMT % v for v in dataset.temporal[i, t]] + static)
    with open(targets_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "target"])
        for sid, y in zip(dataset.ids, dataset.targets):
            w.writerow([sid, _FLOAT_FMT % y])


def save_dataset(dataset: TemporalDataset, directory):
    """Write ``features.csv``, ``targets.csv`` and ``schema.json`` to a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_csv(dataset, directory / "features.csv", directory / "targets.csv")
    schema = [f.to_dict() for f in dataset.features]
    (directory / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")


def load_dataset(directory):
    directory = Path(directory)
    schema = None
    if (directory / "schema.json").exists():
        schema = schema_from_dicts(json.loads((directory / "schema.json").read_text()))
    return load_csv(directory / "features.csv", directory / "targets.csv", schema)


# -- normalization -----------------------------------------------------------

def _scale(values, lo, hi, fill):
    span = hi - lo
    const = span == 0
    out = (values - lo) / np.where(const, 1.0, span)
    return np.where(const, fill, out)


def normalize(dataset: TemporalDataset, constant_fill=0.5):
    """Min-max scale every feature to [0, 1] over the whole dataset.

    Constant features are mapped to ``constant_fill``. Targets are left
    untouched. Returns the scaled dataset and the bounds used.
    """
    if dataset.normalization is not None:
        raise DataError("dataset is already normalized")
    if dataset.n_samples == 0:
        raise DataError("cannot normalize an empty dataset")
    t_min = dataset.temporal.min(axis=(0, 1))
    t_max = dataset.temporal.max(axis=(0, 1))
    if dataset.n_static:
        s_min, s_max = dataset.static.min(axis=0), dataset.static.max(axis=0)
    else:
        s_min = s_max = np.zeros(0)
    spec = NormalizationSpec(t_min, t_max, s_min, s_max, constant_fill)
    temporal = _scale(dataset.temporal, t_min, t_max, constant_fill)
    static = _scale(dataset.static, s_min, s_max, constant_fill)
    out = TemporalDataset(dataset.features, dataset.ids, temporal, static,
                          dataset.targets.copy(), spec, dataset.index_map)
    return out, spec


def denormalize(values, spec: NormalizationSpec, feature_index: int):
    """Invert the scaling for one feature. ``feature_index`` counts temporal
    features first, then static ones."""
    if not 0 <= feature_index < spec.n_features:
        raise DataError(f"unknown feature index {feature_index}")
    lo, hi = spec.mins[feature_index], spec.maxs[feature_index]
    return np.asarray(values, dtype=float) * (hi - lo) + lo


def denormalize_dataset(dataset: TemporalDataset):
    """Return the dataset in original units (constant features become their min)."""
    spec = dataset.normalization
    if spec is None:
        raise DataError("dataset is not normalized")
    temporal = dataset.temporal * (spec.temporal_max - spec.temporal_min) + spec.temporal_min
    static = dataset.static * (spec.static_max - spec.static_min) + spec.static_min
    return TemporalDataset(dataset.features, dataset.ids, temporal, static,
                           dataset.targets.copy(), None, dataset.index_map)


# -- splitting ---------------------------------------------------------------

def split_sizes(n, fractions):
    """Largest-remainder allocation of ``n`` items to the given fractions."""
    raw = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    remainder = raw - sizes
    # stable: ties go to the earlier split
    for j in np.argsort(-remainder, kind="stable")[: n - sizes.sum()]:
        sizes[j] += 1
    return [int(s) for s in sizes]


def split(dataset: TemporalDataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle into disjoint train/validation/test datasets.

    Samples keep their original relative order within each part.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)}")
    sizes = split_sizes(dataset.n_samples, fractions)
    if min(sizes) == 0:
        raise DataError(f"{dataset.n_samples} samples cannot fill splits {fractions}",
                        stage="split")
    perm = derive_rng(seed, "split").permutation(dataset.n_samples)
    bounds = np.cumsum([0] + sizes)
    return tuple(dataset.subset(np.sort(perm[bounds[k]:bounds[k + 1]])) for k in range(3))


# -- synthetic benchmark -----------------------------------------------------

def _identity(u):
    return u


def _square(u):
    return u * u


def _half_sine(u):
    return np.sin(np.pi * u)


SHAPE_FUNCTIONS = (_identity, _square, _half_sine)


@dataclass
class SyntheticConfig:
    n_samples: int = 1000
    t_steps: int = 1
    n_structured: int = 20
    n_noise: int = 10
    noise_sigma: float = 0.05
    seed: int = 42

    def validate(self):
        if self.n_structured < 1:
            raise DataError("n_structured must be at least 1")
        if self.n_samples < 1 or self.t_steps < 1:
            raise DataError("n_samples and t_steps must be positive")
        if self.n_noise < 0 or self.noise_sigma < 0:
            raise DataError("n_noise and noise_sigma must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "t_steps": self.t_steps,
            "n_structured": self.n_structured,
            "n_noise": self.n_noise,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def synthetic_weights(n_structured):
    return 1.0 / np.arange(1, n_structured + 1)


def generate_synthetic(config: SyntheticConfig) -> TemporalDataset:
    """Structured features ``x_1..x_S`` drive the target, noise features
    ``z_1..z_N`` never do.

    ``y = sum_i w_i g_i(mean_t x_i) + eps`` with ``w_i = 1/i`` and ``g_i``
    cycling through identity, square and ``sin(pi u)``; ``y`` is then
    rescaled to [0, 1]. All cells are i.i.d. uniform on [0, 1].
    """
    config.validate()
    rng = derive_rng(config.seed, "synthetic")
    n, t, s, k = config.n_samples, config.t_steps, config.n_structured, config.n_noise
    cells = rng.random((n, t, s + k))
    eps = rng.normal(0.0, config.noise_sigma, size=n) if config.noise_sigma > 0 else np.zeros(n)
    time_mean = cells[:, :, :s].mean(axis=1)
    weights = synthetic_weights(s)
    y = eps.copy()
    for i in range(s):
        y += weights[i] * SHAPE_FUNCTIONS[i % 3](time_mean[:, i])
    span = y.max() - y.min()
    y = (y - y.min()) / span if span > 0 else np.full(n, 0.5)
    names = [f"x_{i + 1}" for i in range(s)] + [f"z_{j + 1}" for j in range(k)]
    width = len(str(n - 1))
    ids = [f"s{i:0{width}d}" for i in range(n)]
    return TemporalDataset(make_schema(names), ids, cells, np.zeros((n, 0)), y)


def structured_indices(dataset: TemporalDataset):
    return [i for i, f in enumerate(dataset.features) if f.name.startswith("x_")]


def noise_indices(dataset: TemporalDataset):
    return [i for i, f in enumerate(dataset.features) if f.name.startswith("z_")]
