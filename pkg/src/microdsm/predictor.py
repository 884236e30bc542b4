"""Supervised forecasting of the community's per-slot market behavior.

A dense network maps the current public summary of the microgrid plus a
sliding window of the last ``n`` slots' (summary, realized behavior)
pairs to the current slot's expected behavior: total sell kWh, total buy
kWh, and the EV charging-rate histogram. Positivity of the totals and
normalization of the histogram are enforced by the output transform
(softplus and softmax), so any parameter vector yields a valid
prediction.

The reference point is a lag baseline that simply replays the realized
behavior from the same slot one day earlier. Both sources produce
``MarketBehavior`` values, so consumers are agnostic to which one is
feeding them.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .market import MarketBehavior, SlotPrices

__all__ = [
    "HistoryWindow",
    "PredictorDataset",
    "build_summary",
    "summary_dim",
    "behavior_dim",
    "predictor_input_dim",
    "build_predictor_input",
    "make_predictor",
    "behavior_base_raw",
    "transform_outputs",
    "predict",
    "train_predictor",
    "lag_baseline",
    "behavior_mse",
]


def summary_dim(slots_per_day: int = 24) -> int:
    """Slot one-hot + three prices + mean home SOC + mean EV SOC + EV
    availability fraction."""
    return slots_per_day + 6


def behavior_dim(k: int) -> int:
    """Length of a MarketBehavior feature vector: two totals + K bins."""
    return 2 + k


def build_summary(slot_of_day: int, prices: SlotPrices,
                  mean_home_soc: float, mean_ev_soc: float,
                  ev_fraction: float,
                  slots_per_day: int = 24) -> np.ndarray:
    """Public pre-action state of the community for one slot.

    Contains only information known before anyone acts: time of day,
    the posted prices, and aggregate battery levels.
    """
    if not 0 <= slot_of_day < slots_per_day:
        raise ValueError(f"slot_of_day {slot_of_day} outside "
                         f"[0, {slots_per_day})")
    out = np.zeros(summary_dim(slots_per_day))
    out[slot_of_day] = 1.0
    out[slots_per_day:slots_per_day + 3] = (prices.p_os, prices.p_in,
                                            prices.p_ob)
    out[slots_per_day + 3] = mean_home_soc
    out[slots_per_day + 4] = mean_ev_soc
    out[slots_per_day + 5] = ev_fraction
    return out


class HistoryWindow:
    """Ring buffer of the last ``n`` slots' (summary, behavior features).

    Emits a flattened, slot-ordered (oldest first) vector once full;
    callers fall back to the lag baseline until then.
    """

    def __init__(self, n: int, summary_size: int, feature_size: int):
        if n < 1:
            raise ValueError("window length must be >= 1")
        self.n = n
        self.entry_size = summary_size + feature_size
        self._buf = np.zeros((n, self.entry_size))
        self._count = 0
        self._head = 0  # next write position

    @property
    def full(self) -> bool:
        return self._count >= self.n

    def push(self, summary: np.ndarray, features: np.ndarray) -> None:
        entry = np.concatenate((summary, features))
        if entry.shape != (self.entry_size,):
            raise ValueError(f"entry has {entry.shape[0]} values, "
                             f"expected {self.entry_size}")
        self._buf[self._head] = entry
        self._head = (self._head + 1) % self.n
        self._count = min(self._count + 1, self.n)

    def flatten(self) -> np.ndarray:
        """Oldest-to-newest concatenation of all entries."""
        if not self.full:
            raise ValueError("history window is not full yet")
        return np.concatenate((self._buf[self._head:],
                               self._buf[:self._head])).ravel()

    def clear(self) -> None:
        self._buf[:] = 0.0
        self._count = 0
        self._head = 0


def predictor_input_dim(slots_per_day: int, k: int, n: int) -> int:
    s, b = summary_dim(slots_per_day), behavior_dim(k)
    return s + n * (s + b) + b


def build_predictor_input(current_summary: np.ndarray,
                          window: HistoryWindow,
                          anchor_features: np.ndarray) -> np.ndarray:
    """Current summary, the flattened window, then the anchor's features.

    The network's outputs are offsets from the anchor (the lag
    baseline), so the anchor itself must be visible in the input — a
    correction to a reference the network cannot see would have to be
    guessed blind.
    """
    return np.concatenate((current_summary, window.flatten(),
                           anchor_features))


def make_predictor(input_dim: int, k: int, rng,
                   hidden=(64, 64)) -> nn.DenseNet:
    """Raw-output network; positivity/normalization live in
    transform_outputs."""
    return nn.DenseNet([input_dim, *hidden, 2 + k], head=nn.LINEAR,
                       rng=rng)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# Floors keeping the anchor encoding finite and its gradients alive when
# the anchor behavior has empty totals or histogram bins.
_TOTAL_FLOOR = 5e-3
_HIST_FLOOR = 1e-6


def behavior_base_raw(behavior: MarketBehavior,
                      total_scale: float) -> np.ndarray:
    """Encode a behavior as raw head outputs that reproduce it exactly.

    The network's raw outputs are *offsets* added to this anchor, so a
    zero-output (freshly initialized) model predicts the anchor behavior
    itself and training only has to learn corrections. Totals go through
    the softplus inverse log(e^y - 1); histogram bins become log-space
    logits.
    """
    totals = np.array([behavior.sell_total, behavior.buy_total],
                      dtype=np.float64) / total_scale
    t_raw = np.log(np.expm1(np.maximum(totals, _TOTAL_FLOOR)))
    h_raw = np.log(np.asarray(behavior.ev_hist, dtype=np.float64)
                   + _HIST_FLOOR)
    return np.concatenate((t_raw, h_raw))


def transform_outputs(raw: np.ndarray, total_scale: float,
                      base_raw: np.ndarray | None = None):
    """Map raw network outputs to (totals kWh, normalized histogram).

    Totals pass through softplus and are rescaled to kWh; histogram
    logits pass through softmax, so the result is a valid distribution
    for any raw values. With ``base_raw`` the outputs are treated as
    offsets from that anchor encoding.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if base_raw is not None:
        raw = raw + base_raw
    totals = _softplus(raw[..., :2]) * total_scale
    hist = _softmax(raw[..., 2:])
    return totals, hist


def predict(model: nn.DenseNet, current_summary: np.ndarray,
            window: HistoryWindow, total_scale: float,
            base: MarketBehavior | None = None) -> MarketBehavior:
    """Forecast the current slot's behavior from a full history window.

    ``base`` anchors the prediction: the network output is an offset
    from that behavior's encoding (use the lag behavior, so an untrained
    model starts at the lag baseline instead of an arbitrary point).
    """
    if not window.full:
        raise ValueError("cannot predict before the window is full")
    k = model.sizes[-1] - 2
    anchor = (np.zeros(behavior_dim(k)) if base is None
              else base.features(total_scale))
    x = build_predictor_input(current_summary, window, anchor)
    raw, _ = model.forward(x[None, :])
    base_raw = None if base is None else behavior_base_raw(base, total_scale)
    totals, hist = transform_outputs(np.atleast_2d(raw)[0], total_scale,
                                     base_raw)
    return MarketBehavior(float(totals[0]), float(totals[1]), hist)


class PredictorDataset:
    """FIFO replay of (input vector, realized behavior) training pairs.

    Targets are stored pre-normalized: totals divided by total_scale
    (matching the softplus output before rescaling) and the histogram
    as-is. A capacity bound drops the oldest pairs first.
    """

    def __init__(self, input_dim: int, k: int, total_scale: float,
                 capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.input_dim = input_dim
        self.k = k
        self.total_scale = total_scale
        self.capacity = capacity
        self._inputs: list[np.ndarray] = []
        self._totals: list[np.ndarray] = []
        self._hists: list[np.ndarray] = []
        self._bases: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._inputs)

    def add(self, input_vec: np.ndarray, realized: MarketBehavior,
            base: MarketBehavior | None = None) -> None:
        if input_vec.shape != (self.input_dim,):
            raise ValueError(f"input has shape {input_vec.shape}, "
                             f"expected ({self.input_dim},)")
        self._inputs.append(np.asarray(input_vec, dtype=np.float64))
        self._totals.append(np.array([realized.sell_total,
                                      realized.buy_total])
                            / self.total_scale)
        self._hists.append(np.asarray(realized.ev_hist, dtype=np.float64))
        self._bases.append(np.zeros(2 + self.k) if base is None
                           else behavior_base_raw(base, self.total_scale))
        if self.capacity is not None and len(self._inputs) > self.capacity:
            self._inputs.pop(0)
            self._totals.pop(0)
            self._hists.pop(0)
            self._bases.pop(0)

    def arrays(self):
        return (np.stack(self._inputs), np.stack(self._totals),
                np.stack(self._hists), np.stack(self._bases))

    def split(self, n_tail: int):
        """(head, tail) datasets, the tail holding the last n_tail pairs.

        Rows are stored in insertion order, so with time-ordered data
        this is a chronological holdout split.
        """
        if not 0 < n_tail < len(self):
            raise ValueError(f"n_tail must be in (0, {len(self)}), "
                             f"got {n_tail}")
        parts = []
        for sl in (slice(None, -n_tail), slice(-n_tail, None)):
            ds = PredictorDataset(self.input_dim, self.k, self.total_scale)
            ds._inputs = [v.copy() for v in self._inputs[sl]]
            ds._totals = [v.copy() for v in self._totals[sl]]
            ds._hists = [v.copy() for v in self._hists[sl]]
            ds._bases = [v.copy() for v in self._bases[sl]]
            parts.append(ds)
        return tuple(parts)


def _batch_loss_grads(model, x, t_totals, t_hist, base_raw):
    """Loss and logit-space gradients for one minibatch.

    Loss per sample: squared error on the normalized totals plus squared
    error on the histogram bins, summed — the same feature space the
    prediction-quality metric scores, so training and evaluation cannot
    pull in different directions (a likelihood loss on the bins would
    favor smoothed histograms that score worse on squared error).
    Network outputs are offsets from each sample's stored anchor
    encoding; the batch loss is the sample mean.
    """
    b = x.shape[0]
    raw, cache = model.forward(x)
    raw = np.atleast_2d(raw) + base_raw
    sp = _softplus(raw[:, :2])
    probs = _softmax(raw[:, 2:])
    err = sp - t_totals
    herr = probs - t_hist
    loss = float((err ** 2).sum(axis=1).mean()
                 + (herr ** 2).sum(axis=1).mean())
    draw = np.empty_like(raw)
    draw[:, :2] = 2.0 * err * _sigmoid(raw[:, :2]) / b
    # Softmax Jacobian applied to the squared-error gradient.
    draw[:, 2:] = (2.0 * probs
                   * (herr - (herr * probs).sum(axis=1, keepdims=True)) / b)
    grads = model.backward(cache, draw)
    return loss, grads


def train_predictor(model: nn.DenseNet, dataset: PredictorDataset,
                    epochs: int, rng, lr: float = 1e-3,
                    minibatch: int = 64,
                    val_dataset: PredictorDataset | None = None
                    ) -> list[float]:
    """Adam minibatch training; returns the mean loss of each epoch.

    With ``val_dataset`` the parameters revert afterwards to the epoch
    with the lowest validation loss. The pre-training state is a
    candidate too, so on anchored models training can only improve on
    the anchor's holdout loss, never regress it.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x, t_totals, t_hist, base_raw = dataset.arrays()
    opt = nn.Adam(model, lr)
    m = x.shape[0]
    curve = []

    def snapshot():
        return ([w.copy() for w in model.weights],
                [b.copy() for b in model.biases])

    best, best_val = None, np.inf
    if val_dataset is not None:
        best, best_val = snapshot(), dataset_loss(model, val_dataset)

    for _ in range(epochs):
        order = rng.permutation(m)
        total, seen = 0.0, 0
        for lo in range(0, m, minibatch):
            idx = order[lo:lo + minibatch]
            loss, grads = _batch_loss_grads(model, x[idx], t_totals[idx],
                                            t_hist[idx], base_raw[idx])
            opt.step(grads)
            total += loss * idx.size
            seen += idx.size
        curve.append(total / seen)
        if val_dataset is not None:
            val = dataset_loss(model, val_dataset)
            if val < best_val:
                best, best_val = snapshot(), val
    if best is not None:
        model.weights, model.biases = best
    return curve


def dataset_loss(model: nn.DenseNet, dataset: PredictorDataset) -> float:
    """Mean training-objective loss over a dataset, without updating."""
    x, t_totals, t_hist, base_raw = dataset.arrays()
    loss, _ = _batch_loss_grads(model, x, t_totals, t_hist, base_raw)
    return loss


def lag_baseline(log: list[MarketBehavior], t: int, slots_per_day: int,
                 k: int) -> MarketBehavior:
    """Realized behavior at the same slot one day earlier.

    ``log`` holds one entry per elapsed slot, in order. Slots in the
    first day have no predecessor and get the neutral cold-start value,
    so every behavior source starts from the same features.
    """
    if t < slots_per_day:
        return MarketBehavior.cold_start(k)
    return log[t - slots_per_day].copy()


def behavior_mse(pred: MarketBehavior, realized: MarketBehavior,
                 total_scale: float) -> float:
    """Mean squared error over the shared feature encoding."""
    d = pred.features(total_scale) - realized.features(total_scale)
    return float((d ** 2).mean())
