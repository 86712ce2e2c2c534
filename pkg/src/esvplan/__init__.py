"""Ecosystem-service-value land-use allocation: grid MDP, reward, baselines."""

__version__ = "0.1.0"
