"""Independent oracles used across the test suite.

These deliberately avoid the library's own computation paths: numeric
differentiation for gradients, a straight-line numpy forward pass for the
model, brute-force assignment for optimal transport, and a direct
double-loop effect-error evaluation.
"""

import itertools

import numpy as np


def numeric_gradient(f, x, step=1e-5):
    """Central finite differences of a scalar function at x (elementwise)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = f(x)
        flat[k] = orig - step
        lo = f(x)
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def mlp_forward(x, weights, biases, scales, activation="elu", last_linear=False):
    """Plain numpy re-implementation of a scaled affine + activation stack."""
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(weights)
    for k in range(n_layers):
        h = h @ weights[k] * scales[k] + biases[k]
        if last_linear and k == n_layers - 1:
            continue
        if activation == "elu":
            h = np.where(h > 0, h, np.expm1(np.minimum(h, 0.0)))
        else:
            h = np.maximum(h, 0.0)
    return h


def brute_force_matching_distance(p, q):
    """Optimal-assignment mean distance between equal-size clouds (<= 7 pts)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64).T).T
    q = np.atleast_2d(np.asarray(q, dtype=np.float64).T).T
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    m = p.shape[0]
    assert q.shape[0] == m and m <= 7
    cost = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for perm in itertools.permutations(range(m)):
        best = min(best, cost[np.arange(m), perm].mean())
    return best


def brute_force_pehe(alpha_hat, alpha_true):
    """Direct double-loop mean over ordered treatment pairs of mean squared tau.

    alpha_hat, alpha_true: (b, n, n) effect matrices over b contexts.
    """
    b, n, _ = alpha_hat.shape
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            tau = alpha_hat[:, i, j] - alpha_true[:, i, j]
            total += float(np.mean(tau ** 2))
    return total / (n * (n - 1))
