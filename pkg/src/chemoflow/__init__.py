"""Semi-implicit simulation of a truncated stochastic chemotaxis-fluid
system on a staggered grid, with a diagnostics suite that verifies the
scheme's discrete energy structure."""

__version__ = "0.1.0"
