"""Collective-behavior reward shaping for EV charging.

The shaping term compares three univariate Gaussians over the EV
charging rate: the individual policy pi_i, the crowd's empirical policy
pi_col, and a fixed "extreme" policy pi_ext concentrated at maximum-rate
charging. The shaping value is the product of two KL divergences,

    E = KL(pi_col || pi_i) * KL(pi_ext || pi_i),

and the shaped reward subtracts beta / E. The penalty is large only when
an individual simultaneously matches the crowd *and* the crowd sits near
max-rate charging; moderate synchronized charging far from the maximum
keeps the second factor large and the penalty negligible.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianSpec",
    "CbeConfig",
    "kl_gaussian",
    "estimate_collective_policy",
    "cbe_value",
    "shaped_reward",
]


@dataclass(frozen=True)
class GaussianSpec:
    """Univariate Gaussian (mean, std) over a charging rate in kW."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0.0:
            raise ValueError(f"std must be positive, got {self.std}")


@dataclass(frozen=True)
class CbeConfig:
    """Shaping parameters.

    beta scales the penalty (0 disables shaping bit-exactly). The extreme
    policy defaults to mean eta, std 0.1*eta for the configured maximum
    EV rate; sigma_floor keeps degenerate empirical stds usable; kl_floor
    bounds each KL factor away from zero so the reciprocal stays finite.
    population_variance selects the variance estimator for the crowd
    policy: True divides the squared deviations by N, False keeps the
    raw unnormalized sum (scale-dependent, kept for fidelity checks).
    """

    beta: float = 1.0
    ext_mean: float = 6.0
    ext_std: float = 0.6
    sigma_floor: float = 6e-3
    kl_floor: float = 1e-3
    population_variance: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.kl_floor <= 0:
            raise ValueError("kl_floor must be > 0")
        if self.ext_std < self.sigma_floor:
            raise ValueError("ext_std below sigma_floor")

    @classmethod
    def for_max_rate(cls, eta: float, beta: float = 1.0,
                     **overrides) -> "CbeConfig":
        """Defaults tied to the maximum EV charging rate eta."""
        kw = dict(beta=beta, ext_mean=eta, ext_std=0.1 * eta,
                  sigma_floor=1e-3 * eta)
        kw.update(overrides)
        return cls(**kw)

    @property
    def extreme_policy(self) -> GaussianSpec:
        return GaussianSpec(self.ext_mean, self.ext_std)


def kl_gaussian(p: GaussianSpec, q: GaussianSpec) -> float:
    """KL(p || q) between univariate Gaussians, closed form:
    log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2.
    """
    return (np.log(q.std / p.std)
            + (p.std**2 + (p.mean - q.mean) ** 2) / (2.0 * q.std**2)
            - 0.5)


def estimate_collective_policy(ev_actions, cfg: CbeConfig):
    """Fit a Gaussian to the available EVs' charging rates this slot.

    Returns None when no EV acted (no shaping that slot). The std is
    floored at cfg.sigma_floor so identical actions still yield a valid
    spec.
    """
    acts = np.asarray(ev_actions, dtype=np.float64)
    if acts.size == 0:
        return None
    mean = float(acts.mean())
    sq_dev = float(((acts - mean) ** 2).sum())
    var = sq_dev / acts.size if cfg.population_variance else sq_dev
    return GaussianSpec(mean, max(np.sqrt(var), cfg.sigma_floor))


def cbe_value(pi_i: GaussianSpec, pi_col: GaussianSpec,
              cfg: CbeConfig) -> float:
    """Product of the two KL factors, each floored at cfg.kl_floor."""
    kl_col = max(kl_gaussian(pi_col, pi_i), cfg.kl_floor)
    kl_ext = max(kl_gaussian(cfg.extreme_policy, pi_i), cfg.kl_floor)
    return kl_col * kl_ext


def shaped_reward(base_reward: float, e_cbe: float, cfg: CbeConfig) -> float:
    """base reward minus beta / E; beta = 0 returns base unchanged."""
    if cfg.beta == 0.0:
        return base_reward
    return base_reward - cfg.beta / e_cbe
