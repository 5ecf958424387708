import math

import numpy as np
import pytest

from loss_bench.roots import newton_bisection


def square_minus_two(x):
    return x * x - 2.0, 2.0 * x


def test_finds_square_root():
    result = newton_bisection(square_minus_two, 0.0, 2.0)
    assert result.converged.all()
    assert float(result.root) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert abs(float(result.residual)) < 1e-12


def test_vectorised_brackets():
    targets = np.array([0.5, 2.0, 9.0])

    def func(x):
        return x**3 - targets, 3 * x**2

    result = newton_bisection(func, np.zeros(3), np.full(3, 3.0))
    assert result.converged.all()
    assert np.allclose(result.root, np.cbrt(targets), atol=1e-12)


def test_invalid_bracket_is_reported():
    result = newton_bisection(square_minus_two, np.array([0.0, 2.0]), np.array([2.0, 3.0]))
    assert result.converged.tolist() == [True, False]
    assert math.isnan(result.root[1])
    assert math.isnan(result.residual[1])


def test_decreasing_function():
    result = newton_bisection(lambda x: (math.e - np.exp(x), -np.exp(x)), -3.0, 4.0)
    assert result.converged.all()
    assert float(result.root) == pytest.approx(1.0, abs=1e-10)


def test_zero_derivative_falls_back_to_bisection():
    # the bracket midpoint is a stationary point
    result = newton_bisection(lambda x: (x**3 - 1.0, 3 * x**2), -2.0, 2.0)
    assert result.converged.all()
    assert float(result.root) == pytest.approx(1.0, abs=1e-10)


def test_flat_start_is_not_mistaken_for_a_root():
    # the function is flat at the bracket midpoint, so the first step bisects
    def step(x):
        return np.tanh(10 * (x - 3.0)), 10 / np.cosh(10 * (x - 3.0)) ** 2

    result = newton_bisection(step, -12.0, 12.0)
    assert result.converged.all()
    assert float(result.root) == pytest.approx(3.0, abs=1e-10)
    assert abs(float(result.residual)) < 1e-9


if __name__ == "__main__":
    test_finds_square_root()
    test_vectorised_brackets()
