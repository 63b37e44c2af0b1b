"""First-occurrence disease prediction from longitudinal medical-event data."""

__version__ = "0.1.0"
