"""Shared numeric helpers for the test suite."""

import numpy as np
import pytest


def finite_diff(f, x, h=1e-5):
    """Central finite differences of scalar f() w.r.t. array x (in place)."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f()
        x[idx] = orig - h
        f_minus = f()
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(floor, np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return np.abs(a - b).max(initial=0.0) / denom


def causal_oracle(taps, x, order):
    """Direct-summation causal convolution: y_i = sum_k Re(h_k^i) x_{i-k}."""
    taps = np.asarray(taps)
    x = np.asarray(x, dtype=float)
    y = np.zeros_like(x)
    n = x.shape[0]
    for i in range(n):
        for k in range(min(i, order) + 1):
            y[i] += taps[i, k].real * x[i - k]
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
