"""Session pi-calculus processes decomposed into minimally typed fragments."""

__version__ = "0.1.0"
