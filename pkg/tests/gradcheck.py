"""Shared central-difference gradient checking for the test suite."""

import numpy as np


def central_difference(f, x0, h=1e-5):
    """Numerical gradient of scalar f at x0, one central difference per entry."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-4):
    """Componentwise |a - n| / max(|a|, |n|, floor), maximized.

    The floor turns the comparison into an absolute one (tolerance
    scaled by floor) where both gradients are tiny, where central
    differences are dominated by roundoff rather than signal.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradient(f, x0, analytic, h=1e-5, floor=1e-4):
    return max_relative_error(analytic, central_difference(f, x0, h=h), floor=floor)
