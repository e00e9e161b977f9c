"""Open interpreters: modular tree-walking interpreters with a reflective API."""

__version__ = "0.1.0"
