import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdid import _backend, _cart_py

_cart = pytest.importorskip("fdid._cart")


def tree_args(seed, n, p, q):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.standard_normal((n, p)))
    X[:, 0] = np.round(X[:, 0])  # ties in a split feature
    Y = np.ascontiguousarray(rng.standard_normal((n, q)))
    sample = rng.integers(0, n, n).astype(np.int64)
    return X, Y, sample


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 80), st.integers(1, 6), st.integers(1, 4),
       st.integers(-1, 6), st.integers(1, 6))
def test_compiled_matches_python(seed, n, p, q, depth, min_leaf):
    X, Y, sample = tree_args(seed, n, p, q)
    mtry = max(1, p // 2)
    a = _cart.build_tree(X, Y, sample, depth, min_leaf, mtry, seed)
    b = _cart_py.build_tree(X, Y, sample, depth, min_leaf, mtry, seed)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    np.testing.assert_array_equal(_cart.predict_tree(X, *a), _cart_py.predict_tree(X, *b))


def test_backend_selected():
    assert _backend.BACKEND == "compiled"


def test_env_forces_python():
    env = dict(os.environ, FDID_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import fdid; print(fdid.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
