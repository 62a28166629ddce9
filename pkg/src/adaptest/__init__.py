"""Adaptive testing toolkit.

Student models (3PL IRT, discrete Bayesian networks, feedforward neural
scoring), classical psychometrics, a model-agnostic adaptive-test engine,
a simulation harness, and a session HTTP service.
"""

__version__ = "0.1.0"
