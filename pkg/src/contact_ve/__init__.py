"""Cox-model VE bias from temporally correlated exposure: simulation, fitting and correction."""

__version__ = "0.1.0"
