"""Pure-numpy kernel backend.

Mirrors the signatures of the compiled ``_core`` extension.  All arrays are
C-contiguous float64; networks are lists of ``(in_dim, out_dim)`` weight
matrices and ``(out_dim,)`` bias vectors with ReLU on hidden layers and an
identity output layer.
"""

import numpy as np

NAME = "python"


def dense_forward(x, weights, biases):
    """Forward pass: x (batch, in_dim) -> (batch, out_dim)."""
    a = x
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        a = a @ w + b
        if l != last:
            np.maximum(a, 0.0, out=a)
    return a


def dense_forward_cached(x, weights, biases):
    """Forward pass keeping post-activation values for the backward pass.

    Returns ``(out, acts)`` where ``acts[0]`` is the input and ``acts[l]``
    the post-ReLU activation of hidden layer ``l`` (``acts[-1]`` is the
    raw output).
    """
    acts = [x]
    a = x
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        a = a @ w + b
        if l != last:
            np.maximum(a, 0.0, out=a)
        acts.append(a)
    return a, acts


def dense_backward(acts, weights, upstream):
    """Gradients of sum(out * upstream) w.r.t. every weight and bias.

    ``acts`` is the cache from :func:`dense_forward_cached`.  The ReLU
    subgradient at exactly zero is taken as zero.
    """
    n = len(weights)
    dws = [None] * n
    dbs = [None] * n
    d = upstream
    for l in range(n - 1, -1, -1):
        a_prev = acts[l]
        dws[l] = a_prev.T @ d
        dbs[l] = d.sum(axis=0)
        if l > 0:
            d = d @ weights[l].T
            d *= a_prev > 0.0
    return dws, dbs


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """One Adam update, in place on flat float64 views.

    ``c1`` and ``c2`` are the bias-correction factors ``1 - beta1**t`` and
    ``1 - beta2**t`` for the post-increment step count ``t``.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def categorical_project(probs, rewards, gammas, atoms):
    """Project shifted/scaled atom masses back onto the fixed atom grid.

    For every row ``b`` and atom ``j`` the mass ``probs[b, j]`` sitting at
    ``rewards[b] + gammas[b] * atoms[j]`` (clipped to the grid range) is
    split linearly between the two neighbouring atoms.  Mass is conserved
    exactly.
    """
    n = atoms.shape[0]
    out = np.zeros_like(probs)
    if n == 1:
        out[:, 0] = probs.sum(axis=1)
        return out
    delta = atoms[1] - atoms[0]
    tz = rewards[:, None] + gammas[:, None] * atoms[None, :]
    np.clip(tz, atoms[0], atoms[-1], out=tz)
    pos = (tz - atoms[0]) / delta
    np.clip(pos, 0.0, n - 1.0, out=pos)
    lo = np.floor(pos).astype(np.int64)
    np.clip(lo, 0, n - 2, out=lo)
    w_hi = pos - lo
    w_lo = 1.0 - w_hi
    rows = np.repeat(np.arange(probs.shape[0]), n)
    np.add.at(out, (rows, lo.ravel()), (probs * w_lo).ravel())
    np.add.at(out, (rows, lo.ravel() + 1), (probs * w_hi).ravel())
    return out
