"""Synthetic benchmark: 20 structured features drive the target, 10 do not.

Generates the default dataset, normalizes it and shows which columns
carry signal. Structured weights decay as 1/i, so the later ones are
faint; the noise columns should sit near zero correlation.
"""

import numpy as np

from prunexai.dataset import SyntheticConfig, generate_synthetic, normalize, split, synthetic_weights


def main():
    cfg = SyntheticConfig(n_samples=1000, seed=42)
    raw = generate_synthetic(cfg)
    data, spec = normalize(raw)
    tr, va, te = split(data, seed=42)
    print(f"{data.n_samples} samples, shape (T, F_t, F_s) = {data.shape}")
    print(f"split sizes: train {tr.n_samples}, val {va.n_samples}, test {te.n_samples}")

    weights = synthetic_weights(cfg.n_structured)
    x = data.temporal[:, 0, :]
    print("\nfeature   weight   corr(feature, y)")
    for j, name in enumerate(data.feature_names):
        w = weights[j] if j < cfg.n_structured else 0.0
        r = np.corrcoef(x[:, j], data.targets)[0, 1]
        print(f"{name:>6}   {w:6.3f}   {r:+.3f}")
    # sin(pi u) is symmetric around 0.5, so x_3, x_6, ... show ~0 linear correlation
    # even though they matter; linear screening alone would drop them.


if __name__ == "__main__":
    main()
