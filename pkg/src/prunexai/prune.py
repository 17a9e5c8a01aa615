"""Prune plans: which features and samples to drop, and applying them.

Feature plans come from global attribution scores (``selective`` keeps
features scoring at least ``tau`` times the best score, ``max`` keeps the
``top_k`` best). Sample plans come from out-of-fold squared residuals.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_seed
from .dataset import STATIC, TEMPORAL, FeatureSpec, TemporalDataset
from .errors import ConfigError, DataError
from .explain import GlobalImportance, rank_features
from .model import RegressorConfig, predict, train

SELECTIVE, MAX, SAMPLE_RESIDUAL, COMBINED = "selective", "max", "sample_residual", "combined"
STRATEGY_LABELS = {
    SELECTIVE: "Selective Pruning",
    MAX: "Max Pruning",
    SAMPLE_RESIDUAL: "Sample Pruning",
}


@dataclass
class FeaturePruneConfig:
    strategy: str = SELECTIVE
    tau: float = 0.05
    top_k: int | None = None

    def validate(self):
        if self.strategy == SELECTIVE:
            if self.tau is None or self.tau < 0:
                raise ConfigError("selective pruning needs tau >= 0")
        elif self.strategy == MAX:
            if self.top_k is None or self.top_k < 1:
                raise ConfigError("max pruning needs top_k >= 1")
        else:
            raise ConfigError(f"unknown feature prune strategy {self.strategy!r}")
        return self

    def to_dict(self):
        return {"strategy": self.strategy, "tau": self.tau, "top_k": self.top_k}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SamplePruneConfig:
    quantile_q: float = 0.1
    folds: int = 5
    seed: int = 0

    def validate(self):
        if not 0 <= self.quantile_q < 1:
            raise ConfigError("quantile_q must lie in [0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        return self

    def to_dict(self):
        return {"quantile_q": self.quantile_q, "folds": self.folds, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PrunePlan:
    features_removed: tuple = ()
    samples_removed: tuple = ()
    strategy: str = SELECTIVE
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features_removed = tuple(sorted(int(i) for i in set(self.features_removed)))
        self.samples_removed = tuple(sorted(str(s) for s in set(self.samples_removed)))

    @property
    def is_empty(self):
        return not self.features_removed and not self.samples_removed

    def features_only(self):
        return PrunePlan(self.features_removed, (), self.strategy, dict(self.params))

    def to_dict(self):
        return {
            "format": "prunexai.prune_plan",
            "version": 1,
            "strategy": self.strategy,
            "params": self.params,
            "features_removed": list(self.features_removed),
            "samples_removed": list(self.samples_removed),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["features_removed"], d["samples_removed"], d["strategy"], d.get("params", {}))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def combine(feature_plan: PrunePlan, sample_plan: PrunePlan) -> PrunePlan:
    params = {"features": feature_plan.params, "samples": sample_plan.params,
              "feature_strategy": feature_plan.strategy}
    return PrunePlan(feature_plan.features_removed + sample_plan.features_removed,
                     feature_plan.samples_removed + sample_plan.samples_removed,
                     COMBINED, params)


def plan_feature_prune(global_importance: GlobalImportance,
                       config: FeaturePruneConfig) -> PrunePlan:
    config.validate()
    scores = np.asarray(global_importance.per_feature, dtype=float)
    best = float(scores.max()) if scores.size else 0.0
    if not best > 0:
        raise DataError("global importance is all zero; nothing to rank", stage="prune")
    ranking = rank_features(global_importance)
    if config.strategy == SELECTIVE:
        cutoff = config.tau * best
        removed = [i for i, s in enumerate(scores) if s < cutoff]
        params = {"tau": config.tau, "max_score": best, "cutoff": cutoff}
    else:
        keep = {i for i, _ in ranking[: config.top_k]}
        removed = [i for i in range(scores.size) if i not in keep]
        params = {"top_k": config.top_k}
    if len(removed) == scores.size:
        # never prune every feature: the top-ranked one stays
        removed.remove(ranking[0][0])
        params["guard"] = "kept top-ranked feature"
    names = global_importance.feature_names
    if names is not None:
        params["removed_names"] = [names[i] for i in sorted(removed)]
    return PrunePlan(removed, (), config.strategy, params)


# -- residual scoring --------------------------------------------------------

def _canonical_order(ids, seed):
    """Order ids by a seeded hash so fold membership is independent of input order."""
    def key(sid):
        digest = hashlib.sha256(f"{seed}:{sid}".encode()).digest()
        return (digest, sid)
    return sorted(ids, key=key)


def fold_assignment(ids, folds, seed):
    """Map each id to a fold in ``range(folds)``."""
    return {sid: k % folds for k, sid in enumerate(_canonical_order(ids, seed))}


def score_samples(dataset: TemporalDataset, model_config: RegressorConfig,
                  sample_config: SamplePruneConfig):
    """Out-of-fold squared residual for every sample, keyed by id.

    Each fold's model is trained on the other folds (a tenth of those is
    held back as the halting set for iterative models).
    """
    sample_config.validate()
    k = sample_config.folds
    if dataset.n_samples < k:
        raise DataError(f"{dataset.n_samples} samples cannot fill {k} folds", stage="score_samples")
    order = _canonical_order(dataset.ids, sample_config.seed)
    canon = dataset.select_ids(order)
    fold = np.arange(canon.n_samples) % k
    scores = {}
    for f in range(k):
        held = np.flatnonzero(fold == f)
        rest = np.flatnonzero(fold != f)
        cfg = RegressorConfig.from_dict({**model_config.to_dict(),
                                         "seed": derive_seed(model_config.seed, "fold", f)})
        if cfg.kind == "ridge" or rest.size < 10:
            tr, va = canon.subset(rest), None
        else:
            inner = np.arange(rest.size) % 10 == 0
            tr, va = canon.subset(rest[~inner]), canon.subset(rest[inner])
        model, _ = train(tr, va, cfg)
        test = canon.subset(held)
        resid = predict(model, test) - test.targets
        for sid, r in zip(test.ids, resid):
            scores[sid] = float(r * r)
    return {sid: scores[sid] for sid in dataset.ids}


def plan_sample_prune(scores, config: SamplePruneConfig) -> PrunePlan:
    """Drop samples whose score exceeds the linear-interpolation
    ``(1 - q)`` quantile of all scores."""
    config.validate()
    if not scores:
        raise DataError("no sample scores given", stage="prune")
    ids = list(scores)
    vals = np.array([scores[s] for s in ids], dtype=float)
    cutoff = float(np.quantile(vals, 1.0 - config.quantile_q, method="linear"))
    removed = [s for s, v in zip(ids, vals) if v > cutoff]
    return PrunePlan((), removed, SAMPLE_RESIDUAL,
                     {"quantile_q": config.quantile_q, "folds": config.folds, "cutoff": cutoff})


# -- application -------------------------------------------------------------

def apply(dataset: TemporalDataset, plan: PrunePlan) -> TemporalDataset:
    """New dataset without the plan's features and samples.

    Retained features are re-indexed contiguously; ``index_map`` on the
    result maps original feature positions to new ones.
    """
    F = dataset.n_features
    bad = [i for i in plan.features_removed if not 0 <= i < F]
    if bad:
        raise DataError(f"plan removes unknown feature indices {bad}", stage="apply")
    known = set(dataset.ids)
    missing = [s for s in plan.samples_removed if s not in known]
    if missing:
        raise DataError(f"plan removes unknown samples {missing[:5]}", stage="apply")
    drop_f = set(plan.features_removed)
    if len(drop_f) == F:
        raise DataError("plan would remove every feature", stage="apply")
    drop_s = set(plan.samples_removed)
    if len(drop_s) == dataset.n_samples:
        raise DataError("plan would remove every sample", stage="apply")

    n_t = dataset.n_temporal
    keep_t = [j for j in range(n_t) if j not in drop_f]
    keep_s = [j for j in range(dataset.n_static) if j + n_t not in drop_f]
    rows = [i for i, sid in enumerate(dataset.ids) if sid not in drop_s]
    features = [FeatureSpec(dataset.features[j].name, TEMPORAL, new)
                for new, j in enumerate(keep_t)]
    features += [FeatureSpec(dataset.features[n_t + j].name, STATIC, new)
                 for new, j in enumerate(keep_s)]

    mapping = {old: new for new, old in enumerate(keep_t + [n_t + j for j in keep_s])}
    if dataset.index_map is not None:
        mapping = {orig: mapping[mid] for orig, mid in dataset.index_map.items() if mid in mapping}
    norm = dataset.normalization
    if norm is not None:
        norm = norm.select(keep_t, keep_s)
    temporal = dataset.temporal[np.ix_(rows, range(dataset.t_steps), keep_t)]
    static = dataset.static[np.ix_(rows, keep_s)] if keep_s else np.zeros((len(rows), 0))
    return TemporalDataset(features, [dataset.ids[i] for i in rows], temporal, static,
                           dataset.targets[rows], norm, mapping)


def size_percent(before: TemporalDataset, after: TemporalDataset) -> float:
    """Retained share of tensor cells, in percent."""
    if before.n_cells == 0:
        raise DataError("size of an empty dataset is undefined")
    return 100.0 * after.n_cells / before.n_cells
