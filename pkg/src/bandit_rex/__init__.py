"""
bandit-rex

Diversity-constrained contextual Thompson sampling for weekly health-challenge
recommendation, with doubly-robust off-policy evaluation and a synthetic platform to
run experiments on.
"""

__version__ = "0.1.0"
