"""Causal structure learning over repeated measurements.

PC / PC-stable and their chronologically ordered variants, local IDA with
Firth-penalized logistic regression for a binary outcome, stability
selection with a per-comparison error bound, and a simulation harness.
"""

__version__ = "0.1.0"
