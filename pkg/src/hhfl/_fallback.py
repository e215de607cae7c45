"""Pure-numpy implementations of the hot kernels.

Semantics match ``_kernels.pyx``; ``combine`` also matches it bit for bit
because both accumulate in the same index order.
"""
import numpy as np


def combine(coeffs, vectors):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    out = np.zeros((coeffs.shape[0], vectors.shape[1]))
    for m in range(coeffs.shape[0]):
        row = out[m]
        for k in range(coeffs.shape[1]):
            c = coeffs[m, k]
            if c != 0.0:
                row += c * vectors[k]
    return out


def softmax_local_step(params, X, y, idx, offsets, lr, num_classes):
    params = np.asarray(params, dtype=np.float64)
    num_features = X.shape[1]
    split = num_features * num_classes
    out = params.copy()
    for k in range(params.shape[0]):
        rows = idx[offsets[k]:offsets[k + 1]]
        if len(rows) == 0:
            continue
        w = params[k, :split].reshape(num_features, num_classes)
        b = params[k, split:]
        xb = X[rows]
        z = xb @ w + b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        prob = e / e.sum(axis=1, keepdims=True)
        prob[np.arange(len(rows)), y[rows]] -= 1.0
        prob /= len(rows)
        out[k, :split] -= lr * (xb.T @ prob).ravel()
        out[k, split:] -= lr * prob.sum(axis=0)
    return out
