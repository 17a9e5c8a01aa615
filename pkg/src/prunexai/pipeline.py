"""Baseline -> explain -> prune -> retrain -> compare.

All randomness derives from ``PipelineConfig.seed``: nested model, explain
and sample-pruning seeds are overwritten with values derived from it.
Both arms are scored on the same held-out test split; explanations are
computed on the validation split.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from ._rng import derive_seed
from .dataset import (
    SyntheticConfig,
    TemporalDataset,
    generate_synthetic,
    load_csv,
    load_dataset,
    normalize,
    schema_from_dicts,
    split,
)
from .errors import ConfigError, PruneXAIError
from .explain import (
    KERNEL_SHAP,
    LIME,
    ExplainConfig,
    GlobalImportance,
    explain_dataset,
    global_heatmap,
    heatmap_csv,
    rank_features,
    select_background,
)
from .model import (
    MetricSet,
    RegressorConfig,
    TrainReport,
    improvement_percent,
    metrics,
    predict,
    save_model,
    train,
)
from .prune import (
    STRATEGY_LABELS,
    FeaturePruneConfig,
    PrunePlan,
    SamplePruneConfig,
    apply,
    combine,
    plan_feature_prune,
    plan_sample_prune,
    score_samples,
    size_percent,
)

log = logging.getLogger(__name__)

REPORT_FORMAT = "prunexai.experiment_report"
REPORT_VERSION = 1
EXPLAIN_METHODS = {"kernel_shap": KERNEL_SHAP, "shap": KERNEL_SHAP, "lime": LIME}


@dataclass
class PipelineConfig:
    seed: int = 42
    data: dict = field(default_factory=lambda: {"synthetic": SyntheticConfig().to_dict()})
    split: tuple = (0.8, 0.1, 0.1)
    model: RegressorConfig = field(default_factory=RegressorConfig)
    explain: ExplainConfig = field(default_factory=lambda: ExplainConfig(n_coalitions=512))
    explain_method: str = KERNEL_SHAP
    feature_prune: FeaturePruneConfig | None = field(default_factory=FeaturePruneConfig)
    sample_prune: SamplePruneConfig | None = None
    output_dir: str | None = None

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        self.model.seed = derive_seed(self.seed, "model")
        self.explain.seed = derive_seed(self.seed, "explain")
        if self.sample_prune is not None:
            self.sample_prune.seed = derive_seed(self.seed, "sample_prune")

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.explain_method not in EXPLAIN_METHODS:
            raise ConfigError(f"unknown explain_method {self.explain_method!r}")
        if self.feature_prune is None and self.sample_prune is None:
            raise ConfigError("at least one of feature_prune / sample_prune is required")
        sources = ("synthetic", "dir", "features")
        if sum(k in self.data for k in sources) != 1:
            raise ConfigError(f"data must name exactly one source among {sources}")
        if "features" in self.data:
            for key in ("features", "targets"):
                if not Path(self.data[key]).exists():
                    raise ConfigError(f"data file {self.data[key]} does not exist")
        if "dir" in self.data and not Path(self.data["dir"]).is_dir():
            raise ConfigError(f"data directory {self.data['dir']} does not exist")
        self.model.validate()
        self.explain.validate()
        if self.feature_prune is not None:
            self.feature_prune.validate()
        if self.sample_prune is not None:
            self.sample_prune.validate()
        return self

    def to_dict(self, include_output=True):
        d = {
            "seed": self.seed,
            "data": self.data,
            "split": list(self.split),
            "model": self.model.to_dict(),
            "explain": self.explain.to_dict(),
            "explain_method": self.explain_method,
            "feature_prune": self.feature_prune.to_dict() if self.feature_prune else None,
            "sample_prune": self.sample_prune.to_dict() if self.sample_prune else None,
        }
        if include_output:
            d["output_dir"] = self.output_dir
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"seed", "data", "split", "model", "explain", "explain_method",
                 "feature_prune", "sample_prune", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys {sorted(unknown)}")
        try:
            kwargs = {}
            for key in ("seed", "data", "explain_method", "output_dir"):
                if key in d:
                    kwargs[key] = d[key]
            if "split" in d:
                kwargs["split"] = tuple(d["split"])
            if "model" in d:
                kwargs["model"] = RegressorConfig.from_dict(d["model"])
            if "explain" in d:
                kwargs["explain"] = ExplainConfig.from_dict(d["explain"])
            if "feature_prune" in d:
                fp = d["feature_prune"]
                kwargs["feature_prune"] = FeaturePruneConfig.from_dict(fp) if fp else None
            if "sample_prune" in d:
                sp = d["sample_prune"]
                kwargs["sample_prune"] = SamplePruneConfig.from_dict(sp) if sp else None
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid pipeline config: {exc}") from None


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return PipelineConfig.from_dict(raw)


# -- reports -----------------------------------------------------------------

@dataclass
class ReportRow:
    method: str
    time_seconds: float | None
    size_retained_percent: float
    size_removed_percent: float
    mse: float
    r2: float
    mae: float
    improvement_percent: float
    epochs_run: int
    halted_by: str

    def to_dict(self, include_timing=True):
        d = dict(self.__dict__)
        if not include_timing:
            d["time_seconds"] = None
        return d


@dataclass
class ExperimentReport:
    rows: list
    config: dict
    seed: int
    version: str = __version__
    test_ids: list = field(default_factory=list)

    def row(self, method):
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self, include_timing=True):
        return {
            "format": REPORT_FORMAT,
            "schema_version": REPORT_VERSION,
            "tool_version": self.version,
            "seed": self.seed,
            "config": self.config,
            "timing_included": include_timing,
            "rows": [r.to_dict(include_timing) for r in self.rows],
            "test_ids": list(self.test_ids),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != REPORT_FORMAT:
            raise ConfigError("not an experiment report document")
        if d.get("schema_version") != REPORT_VERSION:
            raise ConfigError(f"unsupported report schema version {d.get('schema_version')}")
        rows = [ReportRow(**r) for r in d["rows"]]
        return cls(rows, d["config"], d["seed"], d["tool_version"], d.get("test_ids", []))


def parse_report(text) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(text))


def _fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return f"{v:.{digits}f}"


def emit_report(report: ExperimentReport, fmt="json", include_timing=True) -> str:
    """Render a report as ``json``, ``markdown`` (``md``) or ``csv``."""
    if fmt == "json":
        return json.dumps(report.to_dict(include_timing), indent=2) + "\n"
    if fmt in ("markdown", "md"):
        lines = [
            "| Method | Time (s) | Size (%) | MSE | R2 | MAE | Improv. (%) |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in report.rows:
            t = r.time_seconds if include_timing else None
            lines.append(
                f"| {r.method} | {_fmt(t, 3)} | {_fmt(r.size_retained_percent, 1)} | "
                f"{_fmt(r.mse, 5)} | {_fmt(r.r2, 4)} | {_fmt(r.mae, 5)} | "
                f"{_fmt(r.improvement_percent, 2)} |"
            )
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["method", "time_seconds", "size_retained_percent", "size_removed_percent",
                "mse", "r2", "mae", "improvement_percent", "epochs_run", "halted_by"]
        w.writerow(cols)
        for r in report.rows:
            d = r.to_dict(include_timing)
            w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                        for c in cols])
        return buf.getvalue()
    raise ConfigError(f"unknown report format {fmt!r}")


@dataclass
class FeatureEntry:
    name: str
    kind: str
    score: float
    rank: int
    peak_time: int
    sign_at_peak: int
    status: str


@dataclass
class RelationshipReport:
    entries: list
    summary: list

    def to_markdown(self):
        lines = ["# Feature relationships", ""]
        lines += [f"- {s}" for s in self.summary]
        lines += ["", "| Feature | Kind | Score | Rank | Peak t | Sign | Status |",
                  "|---|---|---|---|---|---|---|"]
        signs = {1: "+", -1: "-", 0: "0"}
        for e in sorted(self.entries, key=lambda e: e.rank):
            lines.append(f"| {e.name} | {e.kind} | {e.score:.6g} | {e.rank} | {e.peak_time} | "
                         f"{signs[e.sign_at_peak]} | {e.status} |")
        return "\n".join(lines) + "\n"


def build_relationship_report(global_importance: GlobalImportance, ranking,
                              plan: PrunePlan, feature_specs) -> RelationshipReport:
    """Templated per-feature summary of the global heatmap and the prune decision."""
    g = global_importance
    n_t = g.abs_mean.shape[1]
    if len(feature_specs) != g.per_feature.size:
        raise ConfigError("feature list does not match the heatmap width")
    rank_of = {idx: r + 1 for r, (idx, _) in enumerate(ranking)}
    removed = set(plan.features_removed) if plan is not None else set()
    entries = []
    for j, spec in enumerate(feature_specs):
        if j < n_t:
            peak = int(g.abs_mean[:, j].argmax())
            signed = g.signed_mean[peak, j]
        else:
            peak = 0
            signed = g.signed_mean_static[j - n_t]
        sign = int(signed > 0) - int(signed < 0)
        entries.append(FeatureEntry(spec.name, spec.kind, float(g.per_feature[j]), rank_of[j],
                                    peak, sign, "pruned" if j in removed else "retained"))
    summary = [f"{e.name}: rank {e.rank}, peak influence at t={e.peak_time}, {e.status}"
               for e in sorted(entries, key=lambda e: e.rank)]
    n_pruned = sum(e.status == "pruned" for e in entries)
    head = [f"{n_pruned} of {len(entries)} features pruned; "
            f"top-ranked feature is {min(entries, key=lambda e: e.rank).name}"]
    return RelationshipReport(entries, head + summary)


# -- orchestration -----------------------------------------------------------

def _stage(name):
    """Attach a stage label to package errors raised inside the block."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if isinstance(exc, PruneXAIError) and exc.stage is None:
                exc.stage = name
            elif exc is not None and not isinstance(exc, PruneXAIError):
                wrapped = PruneXAIError(f"{exc_type.__name__}: {exc}", stage=name)
                raise wrapped from exc
            return False
    return _Ctx()


def load_source(data: dict) -> TemporalDataset:
    if "synthetic" in data:
        return generate_synthetic(SyntheticConfig.from_dict(data["synthetic"]))
    if "dir" in data:
        return load_dataset(data["dir"])
    schema = schema_from_dicts(data["schema"]) if data.get("schema") else None
    return load_csv(data["features"], data["targets"], schema)


@dataclass
class Prepared:
    dataset: TemporalDataset
    train: TemporalDataset
    val: TemporalDataset
    test: TemporalDataset


def prepare(config: PipelineConfig) -> Prepared:
    with _stage("load"):
        raw = load_source(config.data)
    with _stage("normalize"):
        data, _ = normalize(raw)
    with _stage("split"):
        tr, va, te = split(data, config.split, seed=derive_seed(config.seed, "split"))
    return Prepared(data, tr, va, te)


def _write(out, name, text):
    if out is not None:
        (out / name).write_text(text)


def _output_dir(config):
    if config.output_dir is None:
        return None
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}", stage="output")
    return out


def run_baseline(config: PipelineConfig, prepared: Prepared | None = None):
    """Normalize, split, train and score on the test split.

    Returns ``(TrainedModel, MetricSet, TrainReport)``.
    """
    config.validate()
    prepared = prepared or prepare(config)
    out = _output_dir(config)
    with _stage("train_baseline"):
        model, report = train(prepared.train, prepared.val, config.model)
    with _stage("evaluate"):
        m = metrics(prepared.test.targets, predict(model, prepared.test))
    if out is not None:
        save_model(model, out / "model_baseline.json")
    return model, m, report


@dataclass
class PipelineResult:
    report: ExperimentReport
    relationships: RelationshipReport
    global_importance: GlobalImportance
    plan: PrunePlan
    baseline_metrics: MetricSet
    pruned_metrics: MetricSet
    baseline_train: TrainReport
    pruned_train: TrainReport
    baseline_model: object
    pruned_model: object
    prepared: Prepared
    pruned_test_ids: list


def _method_label(config):
    parts = []
    if config.feature_prune is not None:
        parts.append(STRATEGY_LABELS[config.feature_prune.strategy])
    if config.sample_prune is not None:
        parts.append(STRATEGY_LABELS["sample_residual"])
    return " + ".join(parts)


def run_pipeline_detailed(config: PipelineConfig, threads=None) -> PipelineResult:
    out = None
    stage = "config"
    try:
        with _stage("config"):
            config.validate()
            out = _output_dir(config)
        manifest = {"tool_version": __version__, "seed": config.seed,
                    "config": config.to_dict(), "status": "running"}
        _write(out, "manifest.json", json.dumps(manifest, indent=2) + "\n")

        stage = "prepare"
        prepared = prepare(config)
        data, tr, va, te = prepared.dataset, prepared.train, prepared.val, prepared.test
        stage = "train_baseline"
        base_model, base_metrics, base_train = run_baseline(config, prepared)

        stage = "explain"
        with _stage("explain"):
            background = select_background(tr, config.explain.background_size,
                                           derive_seed(config.seed, "background"))
            maps = explain_dataset(base_model, va, background, config.explain,
                                   method=EXPLAIN_METHODS[config.explain_method], threads=threads)
            gi = global_heatmap(maps, data.feature_names)
            ranking = rank_features(gi)
        _write(out, "global_heatmap.json", json.dumps(gi.to_dict(), indent=2) + "\n")
        _write(out, "global_heatmap.csv", heatmap_csv(gi))

        stage = "prune"
        with _stage("prune"):
            if config.feature_prune is not None:
                plan = plan_feature_prune(gi, config.feature_prune)
            else:
                plan = PrunePlan((), (), "none", {})
            train_f = apply(tr, plan.features_only())
            if config.sample_prune is not None:
                scores = score_samples(train_f, config.model, config.sample_prune)
                sample_plan = plan_sample_prune(scores, config.sample_prune)
                plan = (combine(plan, sample_plan) if config.feature_prune is not None
                        else sample_plan)
            train_p = apply(tr, plan)
            val_p = apply(va, plan.features_only())
            test_p = apply(te, plan.features_only())
            retained = size_percent(data, apply(data, plan))
        _write(out, "prune_plan.json", plan.to_json())

        stage = "retrain"
        with _stage("retrain"):
            # same seed as the baseline: an empty plan reproduces the baseline exactly
            pruned_model, pruned_train = train(train_p, val_p, config.model)
        with _stage("evaluate"):
            if test_p.ids != te.ids:
                raise PruneXAIError("baseline and pruned test sets differ")
            pruned_metrics = metrics(test_p.targets, predict(pruned_model, test_p))

        stage = "report"
        with _stage("report"):
            rows = [
                ReportRow("Baseline", base_train.wall_time_seconds, 100.0, 0.0,
                          base_metrics.mse, base_metrics.r2, base_metrics.mae, 0.0,
                          base_train.epochs_run, base_train.halted_by),
                ReportRow(_method_label(config), pruned_train.wall_time_seconds, retained,
                          100.0 - retained, pruned_metrics.mse, pruned_metrics.r2,
                          pruned_metrics.mae,
                          improvement_percent(base_metrics.mse, pruned_metrics.mse),
                          pruned_train.epochs_run, pruned_train.halted_by),
            ]
            report = ExperimentReport(rows, config.to_dict(include_output=False), config.seed,
                                      __version__, list(te.ids))
            rel = build_relationship_report(gi, ranking, plan, data.features)
        if out is not None:
            _write(out, "report.json", emit_report(report, "json", include_timing=False))
            _write(out, "report.md", emit_report(report, "markdown"))
            _write(out, "report.csv", emit_report(report, "csv"))
            timings = {"baseline": base_train.to_dict(), "pruned": pruned_train.to_dict()}
            _write(out, "timings.json", json.dumps(timings, indent=2) + "\n")
            _write(out, "relationships.md", rel.to_markdown())
            save_model(pruned_model, out / "model_pruned.json")
            manifest["status"] = "complete"
            _write(out, "manifest.json", json.dumps(manifest, indent=2) + "\n")
        return PipelineResult(report, rel, gi, plan, base_metrics, pruned_metrics, base_train,
                              pruned_train, base_model, pruned_model, prepared, list(test_p.ids))
    except PruneXAIError as exc:
        if exc.stage is None:
            exc.stage = stage
        if out is not None:
            err = {"stage": exc.stage, "message": str(exc), "type": type(exc).__name__,
                   "traceback": traceback.format_exc()}
            _write(out, "error.json", json.dumps(err, indent=2) + "\n")
        raise


def run_pipeline(config: PipelineConfig, threads=None) -> ExperimentReport:
    """Run every stage and return the comparison report.

    With ``config.output_dir`` set, artifacts are written there; on failure
    the artifacts produced so far are kept and ``error.json`` names the stage.
    """
    return run_pipeline_detailed(config, threads=threads).report
