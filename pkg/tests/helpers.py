"""Shared assertions for the test suite."""
import numpy as np


def assert_reports_equal(a, b):
    assert a.estimates == b.estimates
    assert a.free_mask == b.free_mask
    for key in ("std_errors", "wald_ci95", "relative_changes"):
        x, y = getattr(a, key), getattr(b, key)
        assert (x is None) == (y is None)
        if x is not None:
            assert set(x) == set(y)
            for n in x:
                np.testing.assert_array_equal(np.array(x[n]), np.array(y[n]))
    for key in ("correlation", "hessian"):
        x, y = getattr(a, key), getattr(b, key)
        assert (x is None) == (y is None)
        if x is not None:
            np.testing.assert_array_equal(x, y)
    for key in ("neg_log_lik", "converged", "iterations", "n_evals", "hessian_pd", "warnings"):
        assert getattr(a, key) == getattr(b, key)
    assert len(a.restarts) == len(b.restarts)
    for r, s in zip(a.restarts, b.restarts):
        np.testing.assert_array_equal(np.array(r[:2]), np.array(s[:2]))
        assert r[2:] == s[2:]
