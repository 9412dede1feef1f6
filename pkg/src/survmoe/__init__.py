"""Dual mixture-of-experts discrete-time survival analysis."""

__version__ = "0.1.0"
