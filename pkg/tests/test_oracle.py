import numpy as np
import pytest
from parameterized import parameterized
from scipy import stats

from loss_bench import BudgetExceededError, DomainError, OverlapSpec
from loss_bench.losses import density_grid, loss_correlation, no_default_probability
from loss_bench.oracle import (
    McConfig,
    agreement,
    estimate,
    evaluate_losses,
    pair_order,
    sample_compound,
    sample_compound_returns,
    sample_wishart,
    wishart_covariances,
)
from loss_bench.oracle.samplers import ObligorTable, SamplerKind

from tests.scenarios import (
    FACE,
    SUBORDINATION,
    disjoint_halves,
    empirical,
    rng,
    small_mc,
    subordinated,
)

PARAMS = empirical()


def test_losses_of_safe_obligors_vanish():
    values = np.full((3, 4), 1000.0)
    assert np.all(evaluate_losses(values, SUBORDINATION) == 0)
    assert np.all(evaluate_losses(values, OverlapSpec.disjoint(0.5), 4) == 0)


def test_subordinated_loss_example():
    losses = evaluate_losses(np.array([[10.0, 50.0]]), SUBORDINATION)
    assert losses[0, 0] == pytest.approx((27 / 37) / 2)
    assert losses[0, 1] == pytest.approx((1 + 25 / 38) / 2)


def test_band_values_only_hit_the_junior_creditor():
    losses = evaluate_losses(np.array([[40.0, 74.0, 37.0]]), SUBORDINATION)
    assert losses[0, 0] == 0.0
    assert losses[0, 1] == pytest.approx((35 / 38 + 1 / 38 + 1) / 3)


def test_disjoint_loss_example():
    losses = evaluate_losses(np.array([[30.0, 100.0]]), OverlapSpec.disjoint(0.5), 2)
    assert losses.tolist() == [[pytest.approx(0.6), 0.0]]
    pytest.raises(DomainError, evaluate_losses, np.ones((1, 2)), np.zeros((2, 1)), 2)


def test_subordinated_categories_partition_the_samples():
    run = estimate(PARAMS, SUBORDINATION, 10, small_mc(keep_samples=True))
    assert run.counts["ordering_violations"] == 0
    assert np.all(run.samples[:, 0] <= run.samples[:, 1])
    assert run.atoms[0] == run.counts["origin"]
    assert run.atoms.sum() + run.counts["senior_zero"] + run.histogram.sum() == run.n
    assert run.n == 20_000
    assert "below_acceptance_sample_size" not in run.flags


def test_runs_are_reproducible():
    config = small_mc()
    first = estimate(PARAMS, SUBORDINATION, 10, config)
    second = estimate(PARAMS, SUBORDINATION, 10, config)
    parallel = estimate(PARAMS, SUBORDINATION, 10, McConfig(**(config.as_dict() | {"workers": 2})))
    for run in (second, parallel):
        assert np.array_equal(run.mean, first.mean)
        assert np.array_equal(run.covariance, first.covariance)
        assert np.array_equal(run.histogram, first.histogram)
        assert run.counts == first.counts


def test_returns_are_fat_tailed():
    returns = sample_compound_returns(PARAMS, 200_000, rng(), 1)
    assert stats.kurtosis(returns[:, 0], fisher=False) > 3.5


def test_return_correlation_is_the_average_correlation():
    returns = sample_compound_returns(PARAMS, 200_000, rng(), 2)
    assert np.corrcoef(returns.T)[0, 1] == pytest.approx(PARAMS.c, abs=0.02)


def test_weak_fluctuations_recover_the_fixed_covariance():
    params = empirical(c=0.0, n_fluct=1e4)
    returns = sample_compound_returns(params, 200_000, rng(), 3)
    assert np.allclose(np.cov(returns.T), np.eye(3) * 0.35**2, atol=0.002)


def test_wishart_ensemble_averages_to_the_mean_covariance():
    covariances = wishart_covariances(PARAMS, 20_000, rng(), 3)
    expected = ObligorTable.build(PARAMS, 3).covariance()
    assert np.allclose(covariances.mean(axis=0), expected, atol=0.005)


@parameterized.expand([(5,), (50,)])
def test_wishart_and_compound_portfolio_losses_agree(k):
    faces = np.full((k, 1), FACE)
    compound = evaluate_losses(sample_compound(PARAMS, 100_000, rng(1), k), faces, k)[:, 0]
    wishart = evaluate_losses(sample_wishart(PARAMS, 100_000, rng(2), k), faces, k)[:, 0]
    assert stats.ks_2samp(compound, wishart).pvalue > 0.01


def test_wishart_limits():
    pytest.raises(BudgetExceededError, wishart_covariances, PARAMS, 1, rng(), 501)
    pytest.raises(DomainError, sample_wishart, empirical(n_fluct=6.5), 10, rng(), 3)
    pytest.raises(DomainError, sample_compound, PARAMS, 10, rng())


def test_no_default_mass_matches_analytic_value():
    faces = np.full((10, 1), FACE)
    run = estimate(PARAMS, faces, 10, small_mc(100_000))
    p, se = run.no_default
    assert p == pytest.approx(no_default_probability(10, FACE, PARAMS), abs=4 * se + 1e-3)


def test_antithetic_pairs_keep_the_mean():
    plain = estimate(PARAMS, SUBORDINATION, 10, small_mc())
    paired = estimate(PARAMS, SUBORDINATION, 10, small_mc(antithetic=True))
    tolerance = 4 * np.hypot(plain.mean_se, paired.mean_se)
    assert np.all(np.abs(plain.mean - paired.mean) < tolerance)


def test_antithetic_partners_share_a_batch():
    paired = pair_order(np.arange(8)[:, None])
    assert paired[:, 0].tolist() == [0, 4, 1, 5, 2, 6, 3, 7]
    assert pair_order(np.zeros((6, 2))).shape == (6, 2)


def test_config_validation():
    pytest.raises(DomainError, McConfig, 1)
    pytest.raises(DomainError, McConfig, 1000, antithetic=True, partition_size=999)
    assert McConfig(sampler="wishart").sampler is SamplerKind.WISHART
    assert not McConfig(n_samples=100).acceptance_grade


def test_agreement_of_a_run_with_itself():
    run = estimate(PARAMS, SUBORDINATION, 50, small_mc(bins=10))
    histogram, se = run.density_grid()
    assert se.shape == histogram.values.shape
    report = agreement(histogram, run, threshold=1e-3)
    assert report.compared_cells > 0
    assert report.max_z == 0.0
    assert report.passed()
    assert set(report.cells.columns) >= {"analytic", "monte_carlo", "standard_error", "z_score"}
    other = estimate(PARAMS, SUBORDINATION, 50, small_mc(bins=5))
    pytest.raises(DomainError, agreement, histogram, other)


def test_summary_reports_line_masses_and_tails():
    run = estimate(PARAMS, disjoint_halves(10).overlap, 10, small_mc())
    summary = run.summary()
    assert {"origin", "zero_creditor_0", "zero_creditor_1"} <= set(summary["line_masses"])
    assert "creditor_1>0.3" in summary["tail_probabilities"]
    p, se = run.tail_probability(0, 0.1)
    assert 0 <= p <= 1 and se >= 0
    assert np.isfinite(run.correlation_se())


@pytest.mark.slow
def test_analytic_correlation_at_acceptance_sample_size():
    scenario = disjoint_halves(100)
    config = McConfig(n_samples=1_000_000)
    run = estimate(scenario.params, scenario.structure, 100, config)
    analytic = loss_correlation(scenario, method="analytic")
    assert analytic == pytest.approx(run.correlation(), abs=4 * run.correlation_se() + 0.005)


@pytest.mark.slow
def test_disjoint_halves_correlation_without_asset_correlation():
    scenario = disjoint_halves(100, c=0.0)
    run = estimate(scenario.params, scenario.structure, 100, McConfig(n_samples=200_000))
    assert run.correlation() == pytest.approx(0.71, abs=0.03)


@pytest.mark.slow
def test_large_equal_portfolios_lose_together_in_simulation():
    scenario = disjoint_halves(5000)
    config = McConfig(n_samples=20_000, partition_size=2000)
    run = estimate(scenario.params, scenario.structure, 5000, config)
    assert run.correlation() >= 0.99


@pytest.mark.slow
def test_continuous_part_and_delta_masses_add_up_to_one():
    scenario = disjoint_halves(100)
    grid = density_grid(scenario, points=50)
    face = float(scenario.face_matrix().sum(axis=1)[0])
    p_nd = no_default_probability(100, face, scenario.params)
    run = estimate(scenario.params, scenario.structure, 100, small_mc(200_000))
    lines = sum(run.line_masses()[f"zero_creditor_{b}"][0] for b in range(2))
    assert grid.mass() + p_nd + lines == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("scenario", [subordinated(200), disjoint_halves(100)])
def test_analytic_density_agrees_with_the_histogram(scenario):
    config = McConfig(n_samples=200_000, bins=50)
    run = estimate(scenario.params, scenario.structure, scenario.k_obligors, config)
    report = agreement(density_grid(scenario, points=50), run, boundary_width=0.1)
    z = report.cells["z_score"][~report.cells["boundary"]].dropna()
    assert report.compared_cells == len(z) > 0
    assert (z > 3).mean() < 0.05


if __name__ == "__main__":
    test_subordinated_loss_example()
    test_subordinated_categories_partition_the_samples()
    test_runs_are_reproducible()
