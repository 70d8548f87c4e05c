"""Local/cloud collaborative inference with step-level escalation."""

__version__ = "0.1.0"
