"""Independent reference computations used as test oracles."""

import math

import numpy as np

from pase.nn import init_mlp
from pase.rng import SplitMix64


def naive_nearest(features, ids, q):
    """Double-loop squared-L2 scan; ties go to the lowest id."""
    best_id, best_d = None, None
    for row, sid in zip(features, ids):
        d = 0.0
        for a, b in zip(row, q):
            d += (a - b) * (a - b)
        if best_d is None or d < best_d or (d == best_d and sid < best_id):
            best_id, best_d = sid, d
    return int(best_id), best_d


def reference_loss(weights, biases, x, y):
    """Per-sample loop, written independently of the library's forward pass."""
    total = 0.0
    for xi, yi in zip(x, y):
        h = list(xi)
        for l, (w, b) in enumerate(zip(weights, biases)):
            z = [sum(w[r][c] * h[c] for c in range(len(h))) + b[r] for r in range(len(b))]
            h = z if l == len(weights) - 1 else [max(v, 0.0) for v in z]
        m = max(h)
        log_norm = m + math.log(sum(math.exp(v - m) for v in h))
        total += log_norm - h[yi]
    return total / len(y)


def finite_difference_grads(model, x, y, h=1e-5):
    """Central differences of :func:`reference_loss` for every parameter entry."""
    params = [p.copy() for p in model.params()]
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1, -1):
                trial = [q.copy() for q in params]
                trial[k][idx] += sign * h
                vals.append(reference_loss(trial[0::2], trial[1::2], x, y))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def random_instance(seed):
    """Random MLP (all widths <= 8, 1-3 layers) with a small random batch."""
    rng = SplitMix64(seed)
    depth = 1 + int(rng.below([3])[0])
    dims = [1 + int(v) for v in rng.below([8] * (depth + 1))]
    dims[-1] = max(dims[-1], 2)
    model = init_mlp(dims, seed)
    for b in model.biases:
        b[:] = rng.normal(len(b)) * 0.1
    n = 1 + int(rng.below([6])[0])
    x = rng.normal(n * dims[0]).reshape(n, dims[0])
    y = rng.below([dims[-1]] * n)
    return model, x, y


def max_relative_error(a, b, floor=1e-6):
    return max(float(np.max(np.abs(p - q) / np.maximum(np.maximum(np.abs(p), np.abs(q)), floor)))
               for p, q in zip(a, b))
