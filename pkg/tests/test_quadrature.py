import numpy as np
import pytest
from parameterized import parameterized

from loss_bench.errors import (
    BudgetExceededError,
    ConvergenceError,
    DomainError,
    UnsupportedDimensionError,
)
from loss_bench.quadrature import (
    MAX_TENSOR_NODES,
    MIN_NODES,
    CompoundRule,
    QuadratureMode,
    QuadratureSpec,
    chi2_rule,
    integrate_chi2,
    integrate_gauss,
    integrate_gauss_multi,
    refine,
    tensor_gauss_rule,
)

FIXED = QuadratureSpec()
ADAPTIVE = QuadratureSpec(mode="adaptive")
N = 6.0


@parameterized.expand([("fixed", FIXED, 1e-10), ("adaptive", ADAPTIVE, 1e-5)])
def test_chi2_moments(_, spec, rel):
    assert integrate_chi2(lambda z: np.ones_like(z), N, spec) == pytest.approx(1.0, rel=rel)
    assert integrate_chi2(lambda z: z, N, spec) == pytest.approx(N, rel=rel)
    assert integrate_chi2(lambda z: z**2, N, spec) == pytest.approx(N * (N + 2), rel=rel)


@parameterized.expand([("fixed", FIXED, 1e-10), ("adaptive", ADAPTIVE, 1e-5)])
def test_gauss_moments(_, spec, rel):
    assert integrate_gauss(lambda u: np.ones_like(u), N, spec) == pytest.approx(1.0, rel=rel)
    assert integrate_gauss(lambda u: u, N, spec) == pytest.approx(0.0, abs=1e-12)
    assert integrate_gauss(lambda u: u**2, N, spec) == pytest.approx(1 / N, rel=rel)


def test_gauss_multi_moments():
    spec = QuadratureSpec(u_nodes=16)
    assert integrate_gauss_multi(lambda u: np.ones(len(u)), 3, N, spec) == pytest.approx(1.0)
    assert integrate_gauss_multi(lambda u: u[:, 0] * u[:, 1], 2, N, spec) == pytest.approx(0.0, abs=1e-14)
    assert integrate_gauss_multi(lambda u: (u**2).sum(axis=1), 2, N, spec) == pytest.approx(2 / N)


def test_tensor_rule_dimension_limit():
    pytest.raises(UnsupportedDimensionError, tensor_gauss_rule, N, 8, 5)
    pytest.raises(UnsupportedDimensionError, tensor_gauss_rule, N, 8, 0)
    nodes, weights = tensor_gauss_rule(N, 8, 2)
    assert nodes.shape == (64, 2)
    assert weights.sum() == pytest.approx(1.0)


def test_chi2_rule_is_normalised():
    z, w = chi2_rule(2.5, 32)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(z > 0)


def test_spec_validation():
    pytest.raises(DomainError, QuadratureSpec, 4, 64)
    pytest.raises(DomainError, QuadratureSpec, 64, 64, "fixed", 0.1)
    pytest.raises(ValueError, QuadratureSpec, 64, 64, "simpson")
    assert QuadratureSpec(mode="adaptive").mode is QuadratureMode.ADAPTIVE


def test_resolution_grows_with_portfolio_size():
    assert FIXED.resolved_for(1) == FIXED
    resolved = FIXED.resolved_for(100)
    assert (resolved.z_nodes, resolved.u_nodes) == (120, 240)
    capped = FIXED.resolved_for(10_000)
    assert (capped.z_nodes, capped.u_nodes) == (256, 512)
    tensor = FIXED.resolved_for(100, beta=2)
    assert tensor.z_nodes * tensor.u_nodes**2 <= 500_000
    assert tensor.u_nodes >= FIXED.u_nodes


def test_four_factor_rules_stay_within_the_node_budget():
    small = FIXED.resolved_for(8, beta=4)
    assert small.node_count(4) <= MAX_TENSOR_NODES
    assert small.u_nodes >= MIN_NODES
    # at the z node cap even the smallest u rule is too large
    large = FIXED.resolved_for(1_000, beta=4)
    assert large.u_nodes == MIN_NODES
    assert large.node_count(4) > MAX_TENSOR_NODES
    pytest.raises(BudgetExceededError, CompoundRule.build, N, large, 4)
    assert CompoundRule.build(N, small, 4).size == small.node_count(4)


def test_refine_reports_missing_agreement():
    spec = QuadratureSpec(mode="adaptive")
    pytest.raises(ConvergenceError, refine, lambda s: float(s.z_nodes), spec)
    assert refine(lambda s: 2.0, spec) == 2.0
    assert refine(lambda s: float(s.z_nodes), FIXED) == 64.0


def test_compound_rule_size():
    rule = CompoundRule.build(N, QuadratureSpec(16, 8), beta=2)
    assert rule.size == 16 * 64
    assert rule.u.shape == (64, 2)


if __name__ == "__main__":
    test_chi2_moments("fixed", FIXED, 1e-10)
    test_gauss_multi_moments()
    test_resolution_grows_with_portfolio_size()
