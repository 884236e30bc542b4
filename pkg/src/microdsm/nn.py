"""Minimal dense-network engine with manual backprop and Adam.

One network class serves policy, value and predictor nets: tanh hidden
layers plus either a linear head or a gaussian head that emits (mu, sigma)
pairs with sigma = clip(exp(log_sigma), sigma_min, sigma_max).

Checkpoints are NumPy .npz archives: a JSON ``meta`` entry (sizes, head,
sigma bounds) plus one float64 entry per parameter tensor (w0, b0, w1, ...).
"""

import json

import numpy as np

from . import kernels

LINEAR = "linear"
GAUSSIAN = "gaussian"


def orthogonal(shape, gain, rng):
    """Orthogonal-style init: QR of a random normal matrix, sign-fixed."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class DenseNet:
    """Fully-connected net, tanh hidden activations, float64 throughout.

    For the gaussian head the final layer has 2*A outputs interpreted as
    [mu_1..mu_A, log_sigma_1..log_sigma_A]; forward() returns
    [mu, sigma] and backward() accepts upstream grads in (mu, sigma) space.
    """

    def __init__(self, sizes, head=LINEAR, rng=None, out_scale=1.0,
                 sigma_min=1e-3, sigma_max=12.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if head not in (LINEAR, GAUSSIAN):
            raise ValueError(f"unknown head {head!r}")
        if head == GAUSSIAN and sizes[-1] % 2 != 0:
            raise ValueError("gaussian head needs an even output size")
        self.sizes = [int(s) for s in sizes]
        self.head = head
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        n_layers = len(self.sizes) - 1
        for k in range(n_layers):
            gain = out_scale if k == n_layers - 1 else 1.0
            self.weights.append(orthogonal((self.sizes[k], self.sizes[k + 1]), gain, rng))
            self.biases.append(np.zeros(self.sizes[k + 1]))

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x):
        """Run the net on x (n_in,) or (B, n_in); returns (output, cache)."""
        single = x.ndim == 1
        h = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        n_layers = len(self.weights)
        for k in range(n_layers - 1):
            h = kernels.tanh(kernels.affine(h, self.weights[k], self.biases[k]))
            acts.append(h)
        z = kernels.affine(h, self.weights[-1], self.biases[-1])
        cache = {"acts": acts}
        if self.head == GAUSSIAN:
            half = self.sizes[-1] // 2
            sigma = np.clip(np.exp(z[:, half:]), self.sigma_min, self.sigma_max)
            # exp gradient only where the clip is inactive
            cache["sigma"] = sigma
            cache["interior"] = (sigma > self.sigma_min) & (sigma < self.sigma_max)
            out = np.concatenate([z[:, :half], sigma], axis=1)
        else:
            out = z
        return (out[0] if single else out), cache

    def backward(self, cache, dy):
        """Parameter gradients for the forward pass in `cache`.

        dy has the shape of forward's output (single or batch); gradients
        are summed over the batch. Returns [(dw, db), ...] per layer.
        """
        dz = np.ascontiguousarray(np.atleast_2d(np.asarray(dy, dtype=np.float64)))
        if self.head == GAUSSIAN:
            half = self.sizes[-1] // 2
            dsig = dz[:, half:] * cache["sigma"] * cache["interior"]
            dz = np.ascontiguousarray(np.concatenate([dz[:, :half], dsig], axis=1))
        acts = cache["acts"]
        grads = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            dh, dw, db = kernels.affine_backward(acts[k], self.weights[k], dz)
            grads[k] = (dw, db)
            if k > 0:
                dz = kernels.tanh_backward(acts[k], dh)
        return grads

    # -- parameter plumbing -------------------------------------------------

    def copy_params(self):
        return [(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)]

    def load_params(self, params):
        for k, (w, b) in enumerate(params):
            self.weights[k][...] = w
            self.biases[k][...] = b

    def params_finite(self):
        return all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases))

    def save(self, path):
        meta = {
            "sizes": self.sizes,
            "head": self.head,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
        }
        arrays = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{k}"] = w
            arrays[f"b{k}"] = b
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            net = cls(meta["sizes"], head=meta["head"],
                      sigma_min=meta["sigma_min"], sigma_max=meta["sigma_max"])
            for k in range(len(net.weights)):
                net.weights[k][...] = data[f"w{k}"]
                net.biases[k][...] = data[f"b{k}"]
        return net


def linear_lr(base_lr, episode, total_episodes):
    """Linear decay: full rate at episode 0, zero after the last episode."""
    if total_episodes <= 0:
        return base_lr
    return base_lr * max(0.0, 1.0 - episode / total_episodes)


class Adam:
    """Adam state for one DenseNet; `lr` is reassigned by the schedule."""

    def __init__(self, net, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [(np.zeros_like(w), np.zeros_like(b))
                  for w, b in zip(net.weights, net.biases)]
        self.v = [(np.zeros_like(w), np.zeros_like(b))
                  for w, b in zip(net.weights, net.biases)]

    def step(self, grads):
        """Apply one update. Returns False (and skips) on non-finite grads."""
        for dw, db in grads:
            if not (np.isfinite(dw).all() and np.isfinite(db).all()):
                return False
        self.t += 1
        for k, (dw, db) in enumerate(grads):
            kernels.adam_step(self.net.weights[k].reshape(-1), dw.reshape(-1),
                              self.m[k][0].reshape(-1), self.v[k][0].reshape(-1),
                              self.t, self.lr, self.beta1, self.beta2, self.eps)
            kernels.adam_step(self.net.biases[k].reshape(-1), db.reshape(-1),
                              self.m[k][1].reshape(-1), self.v[k][1].reshape(-1),
                              self.t, self.lr, self.beta1, self.beta2, self.eps)
        if not self.net.params_finite():
            raise FloatingPointError("non-finite parameters after update")
        return True


def clip_grad_norm(grads, max_norm):
    """Scale grads in place so the global L2 norm is at most max_norm."""
    total = 0.0
    for dw, db in grads:
        total += float((dw * dw).sum() + (db * db).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for dw, db in grads:
            dw *= scale
            db *= scale
    return norm


def add_grads(acc, grads):
    """Sum gradient lists elementwise into acc (for merging rollout shards)."""
    if acc is None:
        return [(dw.copy(), db.copy()) for dw, db in grads]
    for (aw, ab), (dw, db) in zip(acc, grads):
        aw += dw
        ab += db
    return acc
