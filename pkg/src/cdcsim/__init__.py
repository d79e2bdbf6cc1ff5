"""cdcsim: collective pension scheme simulation and optimization engine."""

__version__ = "0.1.0"
