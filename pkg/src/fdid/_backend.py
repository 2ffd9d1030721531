"""Pick the CART kernel implementation at import time.

The compiled extension is used when importable; ``FDID_BACKEND=python``
forces the numpy fallback (both grow identical trees).
"""
import os

BACKEND = "python"
if os.environ.get("FDID_BACKEND", "").lower() != "python":
    try:
        from fdid._cart import build_tree, predict_tree
        BACKEND = "compiled"
    except ImportError:  # extension not built
        pass
if BACKEND == "python":
    from fdid._cart_py import build_tree, predict_tree

__all__ = ["BACKEND", "build_tree", "predict_tree"]
