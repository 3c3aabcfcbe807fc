"""Physics-informed networks trained segment by segment with a backward-compatibility penalty."""

__version__ = "0.1.0"
