"""Robust feedback linearization with minimax LQG outer-loop design."""

__version__ = "0.1.0"
