"""Open-system simulation of a mechanical mode coupled to a small bath of two-level defects,
with the readout and fitting chain used to analyse it."""

__version__ = "0.1.0"
