"""microdsm: collective multi-agent PPO for microgrid demand-side management."""

__version__ = "0.1.0"
