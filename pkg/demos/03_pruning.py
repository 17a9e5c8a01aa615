"""From attributions to a prune plan, then residual-based sample pruning.

Trains the default MLP, explains the validation split, ranks features by
their mean absolute attribution and compares the two feature strategies.
The second half corrupts some targets and checks that out-of-fold residuals
find them.
"""

import numpy as np

from prunexai._rng import derive_rng
from prunexai.dataset import SyntheticConfig, generate_synthetic, noise_indices, normalize, split
from prunexai.explain import ExplainConfig, explain_dataset, global_heatmap, rank_features, select_background
from prunexai.model import RegressorConfig, train
from prunexai.prune import (
    FeaturePruneConfig,
    SamplePruneConfig,
    apply,
    plan_feature_prune,
    plan_sample_prune,
    score_samples,
    size_percent,
)


def main():
    data, _ = normalize(generate_synthetic(SyntheticConfig(seed=7)))
    tr, va, te = split(data, seed=7)
    model, rep = train(tr, va, RegressorConfig(seed=7))
    print(f"MLP: {rep.epochs_run} epochs, halted by {rep.halted_by}, val MSE {rep.final_val_mse:.5f}")

    maps = explain_dataset(model, va, select_background(tr, 50, 7), ExplainConfig(n_coalitions=512))
    gi = global_heatmap(maps, data.feature_names)
    ranking = rank_features(gi)
    print("\ntop 5:   ", ", ".join(f"{data.feature_names[i]} ({s:.3f})" for i, s in ranking[:5]))
    print("bottom 5:", ", ".join(f"{data.feature_names[i]} ({s:.3f})" for i, s in ranking[-5:]))

    noise = set(noise_indices(data))
    for cfg in (FeaturePruneConfig("selective", tau=0.05), FeaturePruneConfig("max", top_k=12)):
        plan = plan_feature_prune(gi, cfg)
        hit = len(noise & set(plan.features_removed))
        print(f"\n{cfg.strategy:9s} removes {len(plan.features_removed)} features "
              f"({hit} of 10 noise), keeps {size_percent(data, apply(data, plan)):.1f}% of cells")
        print("  removed:", ", ".join(plan.params["removed_names"]))

    # corrupt 10% of training targets and look for them
    rng = derive_rng(7, "demo-corrupt")
    idx = rng.choice(tr.n_samples, tr.n_samples // 10, replace=False)
    y = tr.targets.copy()
    y[idx] += 5 * tr.targets.std()
    scores = score_samples(tr.with_targets(y), RegressorConfig(kind="ridge"), SamplePruneConfig(seed=7))
    plan = plan_sample_prune(scores, SamplePruneConfig(quantile_q=0.1))
    found = len({tr.ids[i] for i in idx} & set(plan.samples_removed))
    print(f"\nsample pruning: {len(plan.samples_removed)} removed, {found}/{len(idx)} corrupted ids among them")
    print(f"residual cutoff {plan.params['cutoff']:.4f}; median score {np.median(list(scores.values())):.5f}")


if __name__ == "__main__":
    main()
