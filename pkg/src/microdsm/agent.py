"""Shared Gaussian PPO policy and value function.

One policy network serves every household: each agent feeds its own
19-dimensional input (7 observation values, 2 normalized market totals,
K histogram bins) through the same parameters and samples its continuous
(trade, EV-rate) pair from the emitted diagonal Gaussian. Advantages use
GAE over each household's trajectory stream; updates maximize the
clipped surrogate with minibatch Adam steps and a mean-squared value
regression.

Raw Gaussian samples carry the log-probabilities; feasibility is the
environment projection's job, so the density stays well-defined.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn

__all__ = [
    "PpoConfig",
    "ObsNorm",
    "policy_input_dim",
    "build_policy_input",
    "gaussian_log_prob",
    "log_prob_grad",
    "sample_action",
    "mean_action",
    "compute_gae",
    "policy_surrogate",
    "value_loss_grads",
    "ppo_update",
    "make_policy",
    "make_value_net",
]


@dataclass(frozen=True)
class PpoConfig:
    """Optimization hyperparameters for the shared policy."""

    gamma: float = 0.99
    lam: float = 0.95
    eps_clip: float = 0.2
    lr: float = 3e-4
    episodes: int = 125
    epochs: int = 4
    minibatch: int = 256
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma in (0,1], lam in [0,1]")
        if self.eps_clip <= 0:
            raise ValueError("eps_clip must be positive")


@dataclass(frozen=True)
class ObsNorm:
    """Fixed scales mapping raw observations to O(1) network inputs.

    Static scales keep inputs deterministic across runs and identical
    between training and evaluation; defaults suit the synthetic
    scenario's magnitudes.
    """

    price_scale: float = 0.3  # $/kWh: TOU peak magnitude
    power_scale: float = 6.0  # kW: the maximum EV rate
    hours_scale: float = 24.0  # slots per day

    def apply(self, obs: np.ndarray) -> np.ndarray:
        """Normalize (N, 7) raw observations (price, H_l, H_b, H_p, E_a,
        E_b, E_d) column-wise; SOCs and availability are already O(1)."""
        out = np.array(obs, dtype=np.float64, copy=True)
        out[..., 0] /= self.price_scale
        out[..., 1] /= self.power_scale
        out[..., 3] /= self.power_scale
        out[..., 6] /= self.hours_scale
        return out


def policy_input_dim(k_bins: int) -> int:
    """7 observation values + 2 market totals + K histogram bins."""
    return 7 + 2 + k_bins


def build_policy_input(obs: np.ndarray, behavior_feats: np.ndarray,
                       norm: ObsNorm) -> np.ndarray:
    """Assemble the (N, 7+2+K) network input from raw observations and
    one slot's behavior feature vector (shared by all households)."""
    obs = np.atleast_2d(obs)
    n = obs.shape[0]
    feats = np.broadcast_to(behavior_feats, (n, behavior_feats.shape[-1]))
    return np.ascontiguousarray(
        np.concatenate([norm.apply(obs), feats], axis=1))


# -- Gaussian policy math -----------------------------------------------------

_LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_prob(mu, sigma, action):
    """Diagonal-Gaussian log density, summed over action dimensions."""
    z = (action - mu) / sigma
    per_dim = -0.5 * z**2 - np.log(sigma) - 0.5 * _LOG_2PI
    return per_dim.sum(axis=-1)


def log_prob_grad(mu, sigma, action):
    """Closed-form gradients of the log density per dimension:
    d/dmu = (a - mu)/sigma^2,  d/dsigma = (a - mu)^2/sigma^3 - 1/sigma."""
    diff = action - mu
    dmu = diff / sigma**2
    dsigma = diff**2 / sigma**3 - 1.0 / sigma
    return dmu, dsigma


def split_head(out: np.ndarray, n_actions: int = 2):
    """(mu, sigma) views of a gaussian-head output batch."""
    return out[..., :n_actions], out[..., n_actions:]


def sample_action(policy: nn.DenseNet, inputs: np.ndarray,
                  rng: np.random.Generator):
    """Draw a = mu + xi*sigma for each row; returns (actions, log_probs,
    mu, sigma)."""
    out, _ = policy.forward(inputs)
    mu, sigma = split_head(np.atleast_2d(out))
    xi = rng.standard_normal(mu.shape)
    actions = mu + xi * sigma
    return actions, gaussian_log_prob(mu, sigma, actions), mu, sigma


def mean_action(policy: nn.DenseNet, inputs: np.ndarray):
    """Deterministic greedy action (the Gaussian mean), for evaluation."""
    out, _ = policy.forward(inputs)
    mu, _ = split_head(np.atleast_2d(out))
    return mu


# -- advantage estimation -----------------------------------------------------


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float,
                lam: float, last_values=None):
    """Generalized advantage estimation over (N, T) household streams.

    last_values (N,) bootstraps past the final slot; omit it (None) for
    a terminal boundary. Returns (advantages, returns), both (N, T).
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n, t = rewards.shape
    if last_values is None:
        last_values = np.zeros(n)
    adv = np.empty_like(rewards)
    carry = np.zeros(n)
    next_value = np.asarray(last_values, dtype=np.float64)
    for step in range(t - 1, -1, -1):
        delta = rewards[:, step] + gamma * next_value - values[:, step]
        carry = delta + gamma * lam * carry
        adv[:, step] = carry
        next_value = values[:, step]
    return adv, adv + values


# -- PPO update ---------------------------------------------------------------


def policy_surrogate(policy: nn.DenseNet, inputs, actions, old_log_probs,
                     advantages, eps_clip: float):
    """Clipped-surrogate loss and parameter gradients on one minibatch.

    Maximizes E[min(r*A, clip(r, 1-eps, 1+eps)*A)] by returning its
    negation as a loss to descend. Also reports the mean ratio and the
    fraction of samples whose ratio left the trust interval.
    """
    out, cache = policy.forward(inputs)
    mu, sigma = split_head(np.atleast_2d(out))
    new_log_probs = gaussian_log_prob(mu, sigma, actions)
    ratio = np.exp(new_log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip)
    unclipped_term = ratio * advantages
    clipped_term = clipped * advantages
    objective = np.minimum(unclipped_term, clipped_term)
    loss = -float(objective.mean())

    b = ratio.shape[0]
    # Gradient flows only where the unclipped branch attains the min
    # (ties included: there clip is inactive and both branches agree).
    active = unclipped_term <= clipped_term
    dlogp = np.where(active, -ratio * advantages / b, 0.0)
    dmu, dsigma = log_prob_grad(mu, sigma, actions)
    upstream = np.concatenate([dlogp[:, None] * dmu, dlogp[:, None] * dsigma],
                              axis=1)
    grads = policy.backward(cache, upstream)
    stats = {
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > eps_clip).mean()),
    }
    return loss, grads, stats


def value_loss_grads(value_net: nn.DenseNet, inputs, returns,
                     vf_coef: float):
    """MSE regression loss (scaled by vf_coef) and its gradients."""
    v, cache = value_net.forward(inputs)
    v = np.atleast_2d(v)
    err = v[:, 0] - returns
    loss = vf_coef * float((err**2).mean())
    dv = (vf_coef * 2.0 * err / err.shape[0])[:, None]
    grads = value_net.backward(cache, dv)
    return loss, grads


def ppo_update(policy: nn.DenseNet, value_net: nn.DenseNet,
               policy_opt: nn.Adam, value_opt: nn.Adam, batch: dict,
               cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """Run cfg.epochs of shuffled minibatch updates on one rollout batch.

    batch holds flat arrays: inputs (M, D), actions (M, 2), log_probs
    (M,), advantages (M,), returns (M,). Advantages are normalized here,
    once per update. A non-finite loss aborts the whole update and
    restores both networks' pre-update parameters.
    """
    m = batch["inputs"].shape[0]
    adv = batch["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    policy_snapshot = policy.copy_params()
    value_snapshot = value_net.copy_params()

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "mean_ratio": 0.0,
              "clip_fraction": 0.0}
    n_batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        for start in range(0, m, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            p_loss, p_grads, stats = policy_surrogate(
                policy, batch["inputs"][idx], batch["actions"][idx],
                batch["log_probs"][idx], adv[idx], cfg.eps_clip)
            v_loss, v_grads = value_loss_grads(
                value_net, batch["inputs"][idx], batch["returns"][idx],
                cfg.vf_coef)
            if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
                policy.load_params(policy_snapshot)
                value_net.load_params(value_snapshot)
                return {"aborted": True, "policy_loss": p_loss,
                        "value_loss": v_loss, "mean_ratio": float("nan"),
                        "clip_fraction": float("nan")}
            nn.clip_grad_norm(p_grads, cfg.max_grad_norm)
            nn.clip_grad_norm(v_grads, cfg.max_grad_norm)
            policy_opt.step(p_grads)
            value_opt.step(v_grads)
            totals["policy_loss"] += p_loss
            totals["value_loss"] += v_loss
            totals["mean_ratio"] += stats["mean_ratio"]
            totals["clip_fraction"] += stats["clip_fraction"]
            n_batches += 1

    out = {k: v / max(n_batches, 1) for k, v in totals.items()}
    out["aborted"] = False
    return out


# -- network factories --------------------------------------------------------


def make_policy(input_dim: int, cfg: PpoConfig, max_ev_rate: float,
                rng: np.random.Generator) -> nn.DenseNet:
    """Gaussian-head policy over (trade, EV rate): sigma capped at twice
    the maximum EV rate, output layer initialized small so early actions
    hug the mean.

    The sigma floor of 0.75 kW keeps both dimensions explorable for the
    whole run, and the EV-rate mean starts well above the forced-charge
    floor: below that floor the feasibility projection makes the reward
    flat in this dimension, so a pessimistic start would never see a
    gradient, and samples straddling the floor are what keep the gradient
    alive while the mean walks across it. Off-peak slot timing is itself
    a near-flat direction under discounting, so the start value also
    decides how front-loaded cheap-window charging ends up.
    """
    sizes = [input_dim, *cfg.hidden, 4]
    net = nn.DenseNet(sizes, head=nn.GAUSSIAN, rng=rng, out_scale=0.01,
                      sigma_min=0.75, sigma_max=2.0 * max_ev_rate)
    net.biases[-1][1] = 2.5
    return net


def make_value_net(input_dim: int, cfg: PpoConfig,
                   rng: np.random.Generator) -> nn.DenseNet:
    sizes = [input_dim, *cfg.hidden, 1]
    return nn.DenseNet(sizes, head=nn.LINEAR, rng=rng, out_scale=1.0)
