"""Committee BFT consensus with beacon-driven leader election."""

__version__ = "0.1.0"
