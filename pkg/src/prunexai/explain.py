"""Per-sample attribution heatmaps and their global aggregation.

Every flattened time x feature cell is one player. Absent players take
background values and the masked prediction is averaged over the
background set (interventional expectation), so the value of a coalition
``S`` is ``v(S) = mean_b f(x_S, b_{~S})``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import comb, factorial

from ._rng import derive_rng
from .dataset import Sample, TemporalDataset
from .errors import ConfigError, DataError, NumericError
from .model import as_flat_inputs, weighted_least_squares

log = logging.getLogger(__name__)

KERNEL_SHAP, EXACT_SHAPLEY, LIME = "kernel_shap", "exact_shapley", "lime"
METHODS = (KERNEL_SHAP, EXACT_SHAPLEY, LIME)
EXHAUSTIVE = "exhaustive"
MAX_EXHAUSTIVE_PLAYERS = 20
MAX_EXACT_PLAYERS = 12
# rows of model input evaluated per chunk when computing coalition values
_CHUNK_CELLS = 2_000_000


@dataclass
class ExplainConfig:
    n_coalitions: int | str = 2048
    background_size: int = 50
    lime_n_perturb: int = 1000
    lime_kernel_width: float | None = None
    lime_sigma: float = 0.1
    lime_alpha: float = 1e-3
    seed: int = 0

    def validate(self):
        if self.n_coalitions != EXHAUSTIVE and (
            not isinstance(self.n_coalitions, (int, np.integer)) or self.n_coalitions < 1
        ):
            raise ConfigError("n_coalitions must be a positive integer or 'exhaustive'")
        if self.background_size < 1 or self.lime_n_perturb < 1:
            raise ConfigError("background_size and lime_n_perturb must be positive")
        if self.lime_kernel_width is not None and self.lime_kernel_width <= 0:
            raise ConfigError("lime_kernel_width must be positive")
        if self.lime_sigma <= 0 or self.lime_alpha < 0:
            raise ConfigError("lime_sigma must be positive and lime_alpha nonnegative")
        return self

    def kernel_width(self, d):
        if self.lime_kernel_width is not None:
            return float(self.lime_kernel_width)
        return 0.75 * math.sqrt(d)

    def to_dict(self):
        return {
            "n_coalitions": self.n_coalitions,
            "background_size": self.background_size,
            "lime_n_perturb": self.lime_n_perturb,
            "lime_kernel_width": self.lime_kernel_width,
            "lime_sigma": self.lime_sigma,
            "lime_alpha": self.lime_alpha,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class AttributionMap:
    sample_id: str
    temporal: np.ndarray
    static: np.ndarray
    base_value: float
    method: str
    prediction: float = math.nan

    @property
    def flat(self):
        return np.concatenate([self.temporal.reshape(-1), self.static])

    @property
    def shape(self):
        return (*self.temporal.shape, self.static.size)

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "method": self.method,
            "shape": list(self.shape),
            "base_value": self.base_value,
            "prediction": self.prediction,
            "values": self.flat.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        t, f_t, f_s = d["shape"]
        v = np.asarray(d["values"], dtype=float)
        return cls(d["sample_id"], v[: t * f_t].reshape(t, f_t), v[t * f_t:],
                   d["base_value"], d["method"], d.get("prediction", math.nan))


def _make_map(sample, phi, base, method, prediction):
    t, f_t = sample.temporal.shape
    return AttributionMap(sample.id, phi[: t * f_t].reshape(t, f_t).copy(),
                          phi[t * f_t:].copy(), float(base), method, float(prediction))


def _as_sample(sample):
    if isinstance(sample, Sample):
        return sample
    x = np.asarray(sample, dtype=float).reshape(-1)
    return Sample("", x.reshape(1, -1), [], math.nan)


def _predict_fn(model):
    fn = getattr(model, "predict_flat", model)

    def f(X):
        out = np.asarray(fn(X), dtype=float).reshape(-1)
        if not np.all(np.isfinite(out)):
            raise NumericError("model produced non-finite outputs", stage="explain")
        return out

    return f


def _background_matrix(background, d):
    if isinstance(background, (TemporalDataset, list, tuple, Sample)):
        B = as_flat_inputs(background)
    else:
        B = np.atleast_2d(np.asarray(background, dtype=float))
    if B.shape[0] == 0:
        raise DataError("background set is empty", stage="explain")
    if B.shape[1] != d:
        raise DataError(f"background width {B.shape[1]} != sample width {d}", stage="explain")
    return B


def select_background(dataset: TemporalDataset, size, seed):
    """Seeded subset of ``size`` samples (all of them if the set is smaller)."""
    if dataset.n_samples <= size:
        return dataset
    idx = derive_rng(seed, "background").choice(dataset.n_samples, size=size, replace=False)
    return dataset.subset(np.sort(idx))


def coalition_values(f, x, B, masks):
    """``v(S)`` for each boolean row of ``masks``: mean over background rows
    of ``f`` evaluated with absent cells taken from the background."""
    masks = np.asarray(masks, dtype=bool)
    m, d = masks.shape
    nb = B.shape[0]
    per_chunk = max(1, _CHUNK_CELLS // max(1, nb * d))
    out = np.empty(m)
    for start in range(0, m, per_chunk):
        mk = masks[start:start + per_chunk]
        X = np.where(mk[:, None, :], x[None, None, :], B[None, :, :])
        out[start:start + len(mk)] = f(X.reshape(-1, d)).reshape(len(mk), nb).mean(axis=1)
    return out


def _all_masks(d):
    codes = np.arange(2 ** d, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(bool)


def _is_degenerate(x, B):
    return bool(np.all(B == x[None, :]))


# -- exact enumeration -------------------------------------------------------

def exact_shapley(model, sample, background) -> AttributionMap:
    """Shapley values by enumerating every coalition of the ``d`` cells.

    Cost is ``2^d`` coalition values, so ``d`` is capped at 12.
    """
    sample = _as_sample(sample)
    f = _predict_fn(model)
    x = np.concatenate([sample.temporal.reshape(-1), sample.static])
    d = x.size
    if d > MAX_EXACT_PLAYERS:
        raise ConfigError(f"exact enumeration limited to {MAX_EXACT_PLAYERS} cells, got {d}")
    B = _background_matrix(background, d)
    masks = _all_masks(d)
    v = coalition_values(f, x, B, masks)
    sizes = masks.sum(axis=1)
    # weight |S|! (d - |S| - 1)! / d! for coalitions S not containing i
    weight = factorial(np.arange(d)) * factorial(d - 1 - np.arange(d)) / factorial(d)
    codes = np.arange(2 ** d)
    phi = np.empty(d)
    for i in range(d):
        without = codes[(codes >> i) & 1 == 0]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return _make_map(sample, phi, v[0], EXACT_SHAPLEY, v[-1])


# -- KernelSHAP --------------------------------------------------------------

def shapley_kernel(d, s):
    """Shapley kernel weight of a single coalition of size ``s`` out of ``d``."""
    s = np.asarray(s, dtype=float)
    return (d - 1) / (comb(d, s) * s * (d - s))


def _exhaustive_design(d):
    masks = _all_masks(d)[1:-1]
    return masks, shapley_kernel(d, masks.sum(axis=1))


def _random_subsets(rng, d, sizes):
    keys = rng.random((len(sizes), d))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return ranks < np.asarray(sizes)[:, None]


def _sampled_design(d, budget, rng):
    """Singletons and all-but-one coalitions with their exact kernel weights,
    then kernel-proportional random coalitions in complementary pairs that
    share the remaining kernel mass equally."""
    if budget >= 2 * d and d >= 4:
        eye = np.eye(d, dtype=bool)
        fixed = np.concatenate([eye, ~eye])
        fixed_w = np.concatenate([shapley_kernel(d, np.ones(d)), shapley_kernel(d, np.full(d, d - 1))])
        sizes = np.arange(2, d - 1)
        remaining = budget - 2 * d
    else:
        fixed = np.zeros((0, d), dtype=bool)
        fixed_w = np.zeros(0)
        sizes = np.arange(1, d)
        remaining = budget
    if remaining == 0 or sizes.size == 0:
        return fixed, fixed_w
    # total kernel mass carried by all coalitions of size s is (d-1)/(s(d-s))
    mass = (d - 1) / (sizes * (d - sizes))
    n_pairs = (remaining + 1) // 2
    drawn = rng.choice(sizes, size=n_pairs, p=mass / mass.sum())
    half = _random_subsets(rng, d, drawn)
    sampled = np.empty((2 * n_pairs, d), dtype=bool)
    sampled[0::2] = half
    sampled[1::2] = ~half
    sampled = sampled[:remaining]
    sampled_w = np.full(remaining, mass.sum() / remaining)
    return np.concatenate([fixed, sampled]), np.concatenate([fixed_w, sampled_w])


def _solve_constrained(masks, weights, y, delta, ridge_eps):
    """Kernel-weighted least squares subject to ``sum(phi) = delta``; the last
    coordinate is eliminated through the constraint."""
    Z = masks.astype(float)
    target = y - Z[:, -1] * delta
    design = Z[:, :-1] - Z[:, -1:]
    head = weighted_least_squares(design, weights, target, ridge_eps=ridge_eps)
    return np.append(head, delta - head.sum())


def kernel_shap(model, sample, background, config: ExplainConfig | None = None,
                ridge_eps=1e-12) -> AttributionMap:
    """KernelSHAP attributions for one sample.

    ``config.n_coalitions == "exhaustive"`` (or a budget covering all
    ``2^d - 2`` proper coalitions) recovers exact Shapley values.
    """
    config = (config or ExplainConfig()).validate()
    sample = _as_sample(sample)
    f = _predict_fn(model)
    x = np.concatenate([sample.temporal.reshape(-1), sample.static])
    d = x.size
    B = _background_matrix(background, d)
    exhaustive = config.n_coalitions == EXHAUSTIVE
    if exhaustive and d > MAX_EXHAUSTIVE_PLAYERS:
        raise ConfigError(f"exhaustive mode limited to {MAX_EXHAUSTIVE_PLAYERS} cells, got {d}")

    base = float(f(B).mean())
    fx = float(f(x[None, :])[0])
    if _is_degenerate(x, B):
        log.warning("sample %r: background identical to sample; attributions are zero",
                    sample.id)
        return _make_map(sample, np.zeros(d), base, KERNEL_SHAP, fx)
    delta = fx - base
    if d == 1:
        return _make_map(sample, np.array([delta]), base, KERNEL_SHAP, fx)

    if not exhaustive and d < 63 and config.n_coalitions >= 2 ** d - 2:
        exhaustive = d <= MAX_EXHAUSTIVE_PLAYERS
    if exhaustive:
        masks, weights = _exhaustive_design(d)
    else:
        rng = derive_rng(config.seed, KERNEL_SHAP, sample.id)
        masks, weights = _sampled_design(d, int(config.n_coalitions), rng)
    y = coalition_values(f, x, B, masks) - base
    phi = _solve_constrained(masks, weights, y, delta, ridge_eps)
    return _make_map(sample, phi, base, KERNEL_SHAP, fx)


# -- LIME --------------------------------------------------------------------

def lime_explain(model, sample, config: ExplainConfig | None = None):
    """Weighted ridge surrogate fitted on Gaussian perturbations of the sample.

    Returns ``(AttributionMap, fidelity_r2, intercept)``; the map holds the
    surrogate slopes and ``base_value`` is the intercept. ``fidelity_r2`` is
    NaN when the model output does not vary over the perturbations.
    """
    config = (config or ExplainConfig()).validate()
    sample = _as_sample(sample)
    f = _predict_fn(model)
    x = np.concatenate([sample.temporal.reshape(-1), sample.static])
    d = x.size
    rng = derive_rng(config.seed, LIME, sample.id)
    P = np.clip(x + rng.normal(0.0, config.lime_sigma, size=(config.lime_n_perturb, d)), 0.0, 1.0)
    fp = f(P)
    width = config.kernel_width(d)
    w = np.exp(-np.sum((P - x) ** 2, axis=1) / width ** 2)

    # centering by the weighted mean leaves the intercept unpenalized
    wsum = w.sum()
    p_mean = w @ P / wsum
    f_mean = float(w @ fp / wsum)
    coef = weighted_least_squares(P - p_mean, w, fp - f_mean,
                                  ridge_eps=config.lime_alpha + 1e-12)
    intercept = f_mean - float(p_mean @ coef)
    fitted = intercept + P @ coef
    ss_tot = float(w @ (fp - f_mean) ** 2)
    if ss_tot <= 1e-24 * max(1.0, wsum):
        log.warning("sample %r: model is constant over perturbations; "
                    "fidelity is undefined", sample.id)
        fidelity = math.nan
    else:
        fidelity = 1.0 - float(w @ (fp - fitted) ** 2) / ss_tot
    fx = float(f(x[None, :])[0])
    return _make_map(sample, coef, intercept, LIME, fx), fidelity, intercept


# -- batch explanation -------------------------------------------------------

def explain_dataset(model, dataset: TemporalDataset, background, config: ExplainConfig,
                    method=KERNEL_SHAP, threads=None):
    """Explain every sample of ``dataset``; output order follows the dataset.

    Each sample draws from its own stream keyed by ``(seed, sample_id)``, so
    the result does not depend on ``threads``.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown explanation method {method!r}")
    config.validate()
    if method == LIME:
        def one(s):
            return lime_explain(model, s, config)[0]
    elif method == EXACT_SHAPLEY:
        def one(s):
            return exact_shapley(model, s, background)
    else:
        def one(s):
            return kernel_shap(model, s, background, config)
    samples = dataset.samples
    workers = threads or os.cpu_count() or 1
    if workers <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, samples))


# -- global aggregation ------------------------------------------------------

@dataclass
class GlobalImportance:
    signed_mean: np.ndarray
    abs_mean: np.ndarray
    signed_mean_static: np.ndarray
    abs_mean_static: np.ndarray
    per_feature: np.ndarray
    n_samples: int
    method: str
    feature_names: list | None = None

    @property
    def shape(self):
        return (*self.abs_mean.shape, self.abs_mean_static.size)

    def to_dict(self):
        return {
            "format": "prunexai.global_importance",
            "version": 1,
            "method": self.method,
            "n_samples": self.n_samples,
            "shape": list(self.shape),
            "feature_names": self.feature_names,
            "signed_mean": self.signed_mean.reshape(-1).tolist(),
            "abs_mean": self.abs_mean.reshape(-1).tolist(),
            "signed_mean_static": self.signed_mean_static.tolist(),
            "abs_mean_static": self.abs_mean_static.tolist(),
            "per_feature": self.per_feature.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        t, f_t, _ = d["shape"]
        return cls(
            np.asarray(d["signed_mean"], dtype=float).reshape(t, f_t),
            np.asarray(d["abs_mean"], dtype=float).reshape(t, f_t),
            np.asarray(d["signed_mean_static"], dtype=float),
            np.asarray(d["abs_mean_static"], dtype=float),
            np.asarray(d["per_feature"], dtype=float),
            int(d["n_samples"]),
            d["method"],
            d.get("feature_names"),
        )


def global_heatmap(maps, feature_names=None) -> GlobalImportance:
    """Cellwise signed and absolute means of per-sample maps.

    ``per_feature`` averages the absolute map over time for temporal
    features; static features keep their absolute mean directly.
    """
    maps = list(maps)
    if not maps:
        raise DataError("no attribution maps to aggregate")
    shape, method = maps[0].shape, maps[0].method
    for m in maps:
        if m.shape != shape:
            raise DataError(f"attribution shapes differ: {m.shape} vs {shape}")
        if m.method != method:
            raise DataError(f"attribution methods differ: {m.method} vs {method}")
    temporal = np.stack([m.temporal for m in maps])
    static = np.stack([m.static for m in maps])
    abs_t = np.abs(temporal).mean(axis=0)
    abs_s = np.abs(static).mean(axis=0)
    return GlobalImportance(
        temporal.mean(axis=0), abs_t, static.mean(axis=0), abs_s,
        np.concatenate([abs_t.mean(axis=0), abs_s]), len(maps), method,
        list(feature_names) if feature_names is not None else None,
    )


def rank_features(global_importance: GlobalImportance):
    """``(feature_index, score)`` by descending score, ties by ascending index."""
    scores = global_importance.per_feature
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order]


def heatmap_csv(global_importance: GlobalImportance) -> str:
    """Long-format grid for external plotting: one row per cell."""
    g = global_importance
    t, f_t, f_s = g.shape
    names = g.feature_names or [f"f{i}" for i in range(f_t + f_s)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "time_index", "feature", "signed_mean", "abs_mean"])
    for ti in range(t):
        for j in range(f_t):
            w.writerow(["temporal", ti, names[j], "%.17g" % g.signed_mean[ti, j],
                        "%.17g" % g.abs_mean[ti, j]])
    for j in range(f_s):
        w.writerow(["static", "", names[f_t + j], "%.17g" % g.signed_mean_static[j],
                    "%.17g" % g.abs_mean_static[j]])
    return buf.getvalue()
