"""Compiled inner loops for the feed-forward networks.

Parameters live in one flat float64 vector. Layer ``l`` maps ``sizes[l]``
inputs to ``sizes[l + 1]`` outputs with a row-major ``(out, in)`` weight
block followed by the bias. Hidden layers use ELU; the output layer is
either the identity or a logistic sigmoid.

Activations are stored batch-major, ``acts[layer, unit, row]``, so that the
innermost loops run contiguously over the rows of a block.
"""
import math

import numpy as np
from numba import njit, prange

BLOCK = 256


@njit(cache=True)
def layer_offsets(sizes):
    n_layers = sizes.shape[0] - 1
    w_off = np.empty(n_layers, np.int64)
    b_off = np.empty(n_layers, np.int64)
    pos = 0
    for l in range(n_layers):
        w_off[l] = pos
        pos += sizes[l] * sizes[l + 1]
        b_off[l] = pos
        pos += sizes[l + 1]
    return w_off, b_off


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def _forward_block(params, sizes, w_off, b_off, sigmoid_head, X, idx, nb, acts):
    """Forward pass for rows ``idx[:nb]`` of ``X``; output in ``acts[-1, 0, :nb]``."""
    n_layers = sizes.shape[0] - 1
    for i in range(sizes[0]):
        for k in range(nb):
            acts[0, i, k] = X[idx[k], i]
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        wo = w_off[l]
        last = l == n_layers - 1
        for j in range(n_out):
            out = acts[l + 1, j]
            bj = params[b_off[l] + j]
            for k in range(nb):
                out[k] = bj
            for i in range(n_in):
                w = params[wo + j * n_in + i]
                src = acts[l, i]
                for k in range(nb):
                    out[k] += w * src[k]
            if not last:
                for k in range(nb):
                    if out[k] <= 0.0:
                        out[k] = math.expm1(out[k])
            elif sigmoid_head:
                for k in range(nb):
                    out[k] = _sigmoid(out[k])


@njit(cache=True, parallel=True)
def mlp_forward(params, sizes, sigmoid_head, X, out):
    n = X.shape[0]
    width = sizes.max()
    n_layers = sizes.shape[0] - 1
    w_off, b_off = layer_offsets(sizes)
    n_blocks = (n + BLOCK - 1) // BLOCK
    for c in prange(n_blocks):
        acts = np.empty((n_layers + 1, width, BLOCK))
        start = c * BLOCK
        nb = min(n, start + BLOCK) - start
        idx = np.arange(start, start + nb)
        _forward_block(params, sizes, w_off, b_off, sigmoid_head, X, idx, nb, acts)
        for k in range(nb):
            out[start + k] = acts[n_layers, 0, k]


@njit(cache=True)
def _accumulate(params, sizes, w_off, b_off, sigmoid_head, X, Y, idx, scale,
                grad, acts, delta, delta_prev):
    """Add ``scale * d(sum sq err)/d params`` over rows ``idx`` into ``grad``.

    ``idx`` must hold at most ``acts.shape[2]`` rows. Returns their summed
    squared error.
    """
    n_layers = sizes.shape[0] - 1
    nb = idx.shape[0]
    _forward_block(params, sizes, w_off, b_off, sigmoid_head, X, idx, nb, acts)
    out = acts[n_layers, 0]
    sse = 0.0
    for k in range(nb):
        err = out[k] - Y[idx[k]]
        sse += err * err
        g = 2.0 * err * scale
        if sigmoid_head:
            g *= out[k] * (1.0 - out[k])
        delta[0, k] = g
    for l in range(n_layers - 1, -1, -1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        wo = w_off[l]
        bo = b_off[l]
        for j in range(n_out):
            dj = delta[j]
            s = 0.0
            for k in range(nb):
                s += dj[k]
            grad[bo + j] += s
            for i in range(n_in):
                src = acts[l, i]
                s = 0.0
                for k in range(nb):
                    s += dj[k] * src[k]
                grad[wo + j * n_in + i] += s
        if l > 0:
            for i in range(n_in):
                dp = delta_prev[i]
                for k in range(nb):
                    dp[k] = 0.0
                for j in range(n_out):
                    w = params[wo + j * n_in + i]
                    dj = delta[j]
                    for k in range(nb):
                        dp[k] += w * dj[k]
                a = acts[l, i]
                for k in range(nb):
                    if a[k] <= 0.0:
                        # ELU'(z) = exp(z) = ELU(z) + 1 for z <= 0
                        dp[k] *= a[k] + 1.0
            for i in range(n_in):
                for k in range(nb):
                    delta[i, k] = delta_prev[i, k]
    return sse


@njit(cache=True)
def mse_and_grad(params, sizes, sigmoid_head, X, Y):
    """Mean squared error over all rows and its exact gradient."""
    n = X.shape[0]
    width = sizes.max()
    n_layers = sizes.shape[0] - 1
    w_off, b_off = layer_offsets(sizes)
    grad = np.zeros_like(params)
    acts = np.empty((n_layers + 1, width, BLOCK))
    delta = np.empty((width, BLOCK))
    delta_prev = np.empty((width, BLOCK))
    sse = 0.0
    for start in range(0, n, BLOCK):
        idx = np.arange(start, min(n, start + BLOCK))
        sse += _accumulate(params, sizes, w_off, b_off, sigmoid_head, X, Y, idx, 1.0 / n,
                           grad, acts, delta, delta_prev)
    return sse / n, grad


@njit(cache=True)
def adam_epochs(params, sizes, sigmoid_head, X, Y, perms, batch_size,
                lr, beta1, beta2, eps, m, v, t, losses):
    """Mini-batch Adam over each row of ``perms`` (one permutation per epoch).

    Updates ``params``, ``m``, ``v`` in place, writes the mean squared error
    seen during each epoch into ``losses`` and returns the new step count.
    """
    n = X.shape[0]
    width = sizes.max()
    n_layers = sizes.shape[0] - 1
    n_par = params.shape[0]
    w_off, b_off = layer_offsets(sizes)
    grad = np.empty(n_par)
    acts = np.empty((n_layers + 1, width, batch_size))
    delta = np.empty((width, batch_size))
    delta_prev = np.empty((width, batch_size))
    for e in range(perms.shape[0]):
        perm = perms[e]
        sse = 0.0
        for start in range(0, n, batch_size):
            stop = min(n, start + batch_size)
            for q in range(n_par):
                grad[q] = 0.0
            sse += _accumulate(params, sizes, w_off, b_off, sigmoid_head, X, Y,
                               perm[start:stop], 1.0 / (stop - start),
                               grad, acts, delta, delta_prev)
            t += 1
            c1 = 1.0 - beta1 ** t
            c2 = 1.0 - beta2 ** t
            for q in range(n_par):
                gq = grad[q]
                m[q] = beta1 * m[q] + (1.0 - beta1) * gq
                v[q] = beta2 * v[q] + (1.0 - beta2) * gq * gq
                params[q] -= lr * (m[q] / c1) / (math.sqrt(v[q] / c2) + eps)
        losses[e] = sse / n
    return t
