"""Multi-view information-bottleneck representation learning for RL at desk scale."""

__version__ = "0.1.0"
