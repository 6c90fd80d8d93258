"""Grounding spatial references with text-conditioned relation networks."""
__version__ = "0.1.0"
