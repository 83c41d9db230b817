"""Grant-free SCMA detection with BiG-AMP dictionary learning."""

__version__ = "0.1.0"
