"""Prediction-powered semi-supervised estimation with cross-fitted labelers.

Subpackages: ``datasets``, ``losses``, ``labelers``, ``estimators``,
``tuning``, ``meta``, ``wireless`` and ``harness``.
"""

__version__ = "0.1.0"
