import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from loss_bench import DomainError, InconclusiveFitError
from loss_bench.calibration import (
    ReturnSample,
    effective_correlation,
    fit_n,
    log_likelihood,
    return_density,
)
from loss_bench.oracle import sample_compound_returns

from tests.scenarios import empirical, rng

PARAMS = empirical()
SIGMA = np.array([[0.1225, 0.0343], [0.0343, 0.1225]])


def test_single_return_density_is_normalised():
    for n_fluct in (1.5, 6.0, 40.0):
        total, _ = integrate.quad(
            lambda r: return_density(r, [[0.1225]], n_fluct), -50, 50, points=[0.0], limit=400
        )
        assert total == pytest.approx(1.0, rel=1e-6)


def test_return_density_is_symmetric():
    r = np.array([[0.1, -0.3], [0.5, 0.2]])
    assert np.allclose(return_density(r, SIGMA, 6.0), return_density(-r, SIGMA, 6.0), rtol=1e-14)
    assert isinstance(return_density([0.1, -0.3], SIGMA, 6.0), float)


def test_weak_fluctuations_give_the_gaussian():
    gaussian = stats.multivariate_normal(np.zeros(2), SIGMA)
    assert return_density([0.0, 0.0], SIGMA, 1e4) == pytest.approx(gaussian.pdf([0.0, 0.0]), rel=0.01)


def test_return_density_validation():
    pytest.raises(DomainError, return_density, [0.1, 0.1], [[1.0, 1.0], [1.0, 1.0]], 6.0)
    pytest.raises(DomainError, return_density, [0.1, 0.1], SIGMA, 0.0)
    pytest.raises(DomainError, return_density, [0.1, 0.1], SIGMA, 6.0, 3)
    pytest.raises(DomainError, return_density, [0.1, np.inf], SIGMA, 6.0)


def test_effective_correlation_examples():
    assert effective_correlation([[1.0, 0.3], [0.3, 1.0]]) == pytest.approx(0.3)
    corr = np.array([[1.0, 0.2, 0.4], [0.2, 1.0, 0.6], [0.4, 0.6, 1.0]])
    scale = np.diag([0.1, 2.0, 5.0])
    assert effective_correlation(scale @ corr @ scale) == pytest.approx(0.4)
    pytest.raises(DomainError, effective_correlation, [[0.1225]])


def test_fit_recovers_the_fluctuation_strength():
    sample = ReturnSample(sample_compound_returns(PARAMS, 5_000, rng(), 5))
    result = fit_n(sample)
    assert result.converged
    assert not result.boundary
    assert 4.5 < result.n_hat < 8.0
    assert result.log_likelihood >= result.profile["log_likelihood"].max() - 1e-3
    report = result.report()
    assert len(report["profile"]["n"]) == 48


def test_gaussian_returns_hit_the_grid_boundary():
    returns = rng().multivariate_normal(np.zeros(3), np.eye(3) * 0.1225, size=2_000)
    result = fit_n(ReturnSample(returns), grid=np.geomspace(0.5, 20, 30))
    assert result.boundary
    assert result.n_hat == pytest.approx(20.0)
    assert "boundary_solution" in result.flags


def test_fit_is_scale_invariant():
    returns = sample_compound_returns(PARAMS, 2_000, rng(3), 4)
    unscaled = fit_n(ReturnSample(returns))
    scaled = fit_n(ReturnSample(returns * 10))
    assert scaled.n_hat == pytest.approx(unscaled.n_hat, rel=1e-4)


def test_flat_profile_is_inconclusive():
    sample = ReturnSample(sample_compound_returns(PARAMS, 200, rng(), 2))
    pytest.raises(InconclusiveFitError, fit_n, sample, [5.0, 5.0, 5.0])
    pytest.raises(DomainError, fit_n, sample, [1.0, 2.0])
    pytest.raises(DomainError, fit_n, sample, [0.0, 1.0, 2.0])


def test_short_samples_use_the_pseudo_inverse():
    sample = ReturnSample(sample_compound_returns(PARAMS, 4, rng(), 10))
    assert not sample.full_rank
    assert np.isfinite(log_likelihood(sample, 6.0))


def test_return_sample_shapes():
    sample = ReturnSample(np.array([0.01, -0.02, 0.03]))
    assert (sample.m_observations, sample.k_dim) == (3, 1)
    pytest.raises(DomainError, ReturnSample, np.array([[0.01, 0.02]]))
    pytest.raises(DomainError, ReturnSample, np.array([0.01, np.nan]))


def test_return_sample_from_csv(tmp_path):
    frame = pd.DataFrame({"AAA": [0.01, -0.02, 0.005], "BBB": [0.03, 0.01, -0.04]})
    with_header = tmp_path / "with_header.csv"
    frame.to_csv(with_header, index=False)
    sample = ReturnSample.from_csv(with_header)
    assert sample.names == ["AAA", "BBB"]
    assert np.allclose(sample.returns, frame.to_numpy())

    headerless = tmp_path / "headerless.csv"
    frame.to_csv(headerless, index=False, header=False)
    sample = ReturnSample.from_csv(headerless)
    assert sample.m_observations == 3
    assert np.allclose(sample.returns, frame.to_numpy())


def test_average_correlation_estimate():
    sample = ReturnSample(sample_compound_returns(PARAMS, 5_000, rng(), 20))
    assert effective_correlation(sample.sample_covariance) == pytest.approx(PARAMS.c, abs=0.05)


if __name__ == "__main__":
    test_single_return_density_is_normalised()
    test_weak_fluctuations_give_the_gaussian()
    test_fit_recovers_the_fluctuation_strength()
