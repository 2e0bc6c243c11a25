"""Image restoration via feedback-controlled hybrid propagation:
proximal warm starts, learned or classical residual descent, and a
box-projection step governed by a sub-gradient error bound."""

__version__ = "0.1.0"
