"""Simulator for centralized, federated, split, and hybrid training of
two-head uplift models, with membership-inference auditing, positivity-aware
uplift evaluation, and byte-exact communication accounting."""

__version__ = "0.1.0"
