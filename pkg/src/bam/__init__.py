"""Frame-level localization of spliced audio with boundary-gated attention."""

__version__ = "0.1.0"
