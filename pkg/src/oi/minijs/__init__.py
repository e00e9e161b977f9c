"""MiniJS: a small dynamically typed language built from slices."""

from oi.minijs.language import CATALOG, minijs_spec

__all__ = ["CATALOG", "minijs_spec"]
