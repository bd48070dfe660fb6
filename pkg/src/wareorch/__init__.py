"""Seedable warehouse-orchestration benchmark: synthetic corpus, simulator, DQN and baselines."""

__version__ = "0.1.0"
