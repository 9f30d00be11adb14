"""Blood flow in 1-D arterial networks with a parametric stenosis, kernel surrogates
of the stenosis-to-curve map, and stenosis-degree estimation from noisy curves."""

__version__ = "0.1.0"
