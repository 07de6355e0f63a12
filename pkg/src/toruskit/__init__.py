"""Secondary Hopf (Neimark-Sacker) bifurcations and normally hyperbolic invariant tori."""

__version__ = "0.1.0"
