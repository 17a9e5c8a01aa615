"""Small model builders and an independent Shapley enumerator for tests."""

import itertools
import math

import numpy as np

from prunexai.model import TrainedModel


def random_mlp(rng, d, hidden=(6, 4)):
    sizes = [d, *hidden, 1]
    params = {}
    for k in range(len(sizes) - 1):
        params[f"W{k}"] = rng.normal(scale=1.0, size=(sizes[k], sizes[k + 1]))
        params[f"b{k}"] = rng.normal(scale=0.3, size=sizes[k + 1])
    return TrainedModel("mlp", params, (1, d, 0))


def random_ridge(rng, d):
    return TrainedModel("ridge", {"coef": rng.normal(size=d), "intercept": rng.normal(size=1)},
                        (1, d, 0))


def permutation_shapley(f, x, B):
    """Average marginal contribution over every ordering of the players,
    with v(S) memoized per frozenset and built one row at a time."""
    d = len(x)
    cache = {}

    def v(S):
        if S not in cache:
            total = 0.0
            for b in B:
                z = np.array([x[j] if j in S else b[j] for j in range(d)])
                total += float(f(z[None, :])[0])
            cache[S] = total / len(B)
        return cache[S]

    phi = np.zeros(d)
    for perm in itertools.permutations(range(d)):
        S = frozenset()
        for j in perm:
            T = S | {j}
            phi[j] += v(T) - v(S)
            S = T
    return phi / math.factorial(d)
