"""Deterministic federated-learning simulator.

Simulates communication rounds of federated averaging with optional
distillation on the client and server sides, tracks per-class accuracy over
the rounds, and quantifies round-level knowledge loss.
"""

__version__ = "0.1.0"
