"""Pure-numpy kernel backend.

Same call surface as the compiled `_kernels` extension; selected at import
time by `microdsm.kernels` when the extension is missing or disabled.
All arrays are C-contiguous float64.
"""

import numpy as np

BACKEND = "py"


def affine(x, w, b):
    """z = x @ w + b for x (B, I), w (I, O), b (O,)."""
    return x @ w + b


def affine_backward(x, w, dz):
    """Gradients of z = x @ w + b given upstream dz (B, O)."""
    dx = dz @ w.T
    dw = x.T @ dz
    db = dz.sum(axis=0)
    return dx, dw, db


def tanh(z):
    return np.tanh(z)


def tanh_backward(a, da):
    """dz for a = tanh(z); a is the forward output."""
    return da * (1.0 - a * a)


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam update on flat views p, g, m, v at step t (1-based)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
