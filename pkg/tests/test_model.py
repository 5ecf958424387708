import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from parameterized import parameterized
from scipy import integrate, stats

from loss_bench.errors import DomainError
from loss_bench.model import (
    MarketBlock,
    MarketParams,
    MultiMarketParams,
    OverlapSpec,
    SubordinationSpec,
    Tranche,
    default_threshold,
    junior_mean,
    moment_junior,
    moment_plain,
    moment_senior,
    phi,
    tau,
    threshold,
    truncated_moment,
    truncated_moment_gradient,
)

from tests.scenarios import SUBORDINATION, empirical

PARAMS = empirical()


def brute_force_moment(j, level, divisor, limit, z, u, params):
    """E[(level - V/divisor)^j ; V < limit | z, u] by adaptive quadrature."""
    s, g = params.residual_scale, params.factor_loading
    a = (threshold(limit, params, z) + g * u) / s

    def integrand(x):
        v = params.v0 * math.exp(params.drift + math.sqrt(z) * (-g * u + s * x))
        return stats.norm.pdf(x) * (level - v / divisor) ** j

    value, _ = integrate.quad(integrand, min(a - 12, -12.0), a, epsabs=0, epsrel=1e-12, limit=200)
    return value


def test_phi_examples():
    assert phi(0.0) == 0.5
    assert phi(40.0) == 1.0
    expected, _ = integrate.quad(stats.norm.pdf, -40, 1.0, epsabs=1e-15, epsrel=1e-14)
    assert phi(1.0) == pytest.approx(expected, abs=1e-12)


def test_default_threshold_examples():
    params = MarketParams(mu=0.35**2 / 2, rho=0.35, c=0.28, n_fluct=6, t_mat=2.5)
    assert default_threshold(100.0, params, 1.0).f_hat == pytest.approx(0.0, abs=1e-15)
    face = PARAMS.v0 * math.exp(PARAMS.drift)
    assert default_threshold(face, PARAMS, 4.0).f_hat == pytest.approx(0.0, abs=1e-14)
    f_hat = default_threshold(75.0, PARAMS, 1.0).f_hat
    assert f_hat == pytest.approx(math.log(0.75) - 0.10875, rel=1e-12)
    assert f_hat == pytest.approx(-0.39643, abs=1e-5)


def test_default_threshold_rejects_nonpositive_arguments():
    pytest.raises(DomainError, default_threshold, 0.0, PARAMS, 1.0)
    pytest.raises(DomainError, default_threshold, 75.0, PARAMS, 0.0)


@parameterized.expand(
    [
        ("negative_rho", dict(rho=-0.1)),
        ("c_one", dict(c=1.0)),
        ("zero_n", dict(n_fluct=0.0)),
        ("zero_maturity", dict(t_mat=0.0)),
        ("zero_v0", dict(v0=0.0)),
    ]
)
def test_market_params_validation(_, changes):
    pytest.raises(DomainError, PARAMS.replace, **changes)


def test_market_blocks_share_one_n():
    blocks = (MarketBlock(PARAMS, 5), MarketBlock(PARAMS.replace(n_fluct=7), 5))
    pytest.raises(DomainError, MultiMarketParams, blocks)
    pytest.raises(DomainError, MarketBlock, PARAMS, 0)
    market = MultiMarketParams.identical(PARAMS, [3, 2])
    assert market.beta == 2
    assert market.k_obligors == 5
    assert market.block_index().tolist() == [0, 0, 0, 1, 1]


def test_overlap_validation():
    pytest.raises(DomainError, OverlapSpec, 0.8, 0.4)
    pytest.raises(DomainError, OverlapSpec, -0.1, 0.2)
    pytest.raises(DomainError, OverlapSpec, 0.5, 0.0, 0.5, 0.0)
    pytest.raises(DomainError, OverlapSpec(0.5, 0.0).counts, 7)
    assert OverlapSpec(0.4, 0.2).counts(10) == (4, 2, 4)


def test_overlap_face_matrix():
    faces = OverlapSpec(0.4, 0.2, gamma=0.25, f0=80.0).face_matrix(10)
    assert faces.shape == (10, 2)
    assert np.allclose(faces.sum(axis=1), 80.0)
    assert faces[4].tolist() == [20.0, 60.0]
    assert faces[:4, 1].tolist() == [0.0] * 4
    assert faces[6:, 0].tolist() == [0.0] * 4


@parameterized.expand(
    [
        (j, iota, lam, z, u)
        for j in (0, 1, 2)
        for iota in Tranche
        for lam in Tranche
        for z, u in ((2.0, 0.3), (4.0, -0.3), (8.0, 0.0))
    ]
)
def test_tau_matches_quadrature(j, iota, lam, z, u):
    level, divisor = (1.0, 37.0) if iota is Tranche.SENIOR else (75.0 / 38.0, 38.0)
    limit = 37.0 if lam is Tranche.SENIOR else 75.0
    expected = brute_force_moment(j, level, divisor, limit, z, u, PARAMS)
    assert tau(j, iota, lam, z, u, SUBORDINATION, PARAMS) == pytest.approx(expected, rel=1e-8)


def test_tau_zero_order_limits():
    assert truncated_moment(0, 1.0, 1e12, 1e12, 1.0, 0.3, PARAMS) == pytest.approx(1.0)
    flat = PARAMS.replace(c=0.0)
    f_hat = float(threshold(75.0, flat, 2.0))
    expected = phi(math.sqrt(flat.n_fluct / (flat.t_mat * flat.rho**2)) * f_hat)
    assert truncated_moment(0, 1.0, 75.0, 75.0, 2.0, 0.0, flat) == pytest.approx(expected, rel=1e-12)


def test_senior_moments_vanish_with_senior_face():
    spec = SubordinationSpec(f_senior=1e-9, f_junior=75.0)
    assert moment_senior(0, 4.0, 0.2, spec, PARAMS) == pytest.approx(0.0, abs=1e-12)
    assert moment_senior(1, 4.0, 0.2, spec, PARAMS) == pytest.approx(0.0, abs=1e-12)


def test_moments_are_vectorised():
    z = np.array([[1.0], [4.0]])
    u = np.array([[-0.2, 0.0, 0.2]])
    values = moment_senior(1, z, u, SUBORDINATION, PARAMS)
    assert values.shape == (2, 3)
    assert values[1, 2] == pytest.approx(moment_senior(1, 4.0, 0.2, SUBORDINATION, PARAMS))


def test_moments_reject_bad_nodes():
    pytest.raises(DomainError, moment_senior, 3, 1.0, 0.0, SUBORDINATION, PARAMS)
    pytest.raises(DomainError, moment_senior, 1, 0.0, 0.0, SUBORDINATION, PARAMS)


@parameterized.expand([(0,), (1,)])
def test_gradients_match_finite_differences(j):
    z, u, h = 3.0, 0.4, 1e-6
    args = (j, 75.0 / 38.0, 38.0, 75.0)
    d_z, d_u = truncated_moment_gradient(*args, z, u, PARAMS)
    fd_z = (truncated_moment(*args, z + h, u, PARAMS) - truncated_moment(*args, z - h, u, PARAMS)) / (2 * h)
    fd_u = (truncated_moment(*args, z, u + h, PARAMS) - truncated_moment(*args, z, u - h, PARAMS)) / (2 * h)
    assert float(d_z) == pytest.approx(fd_z, rel=1e-5)
    assert float(d_u) == pytest.approx(fd_u, rel=1e-5)


@settings(max_examples=100, deadline=None)
@given(
    z=st.floats(min_value=0.05, max_value=40.0),
    u=st.floats(min_value=-4.0, max_value=4.0),
)
def test_junior_loses_at_least_the_senior_loss(z, u):
    senior = moment_senior(1, z, u, SUBORDINATION, PARAMS)
    junior = junior_mean(z, u, SUBORDINATION, PARAMS)
    assert -1e-12 <= senior <= 1 + 1e-12
    assert -1e-12 <= junior <= 1 + 1e-12
    assert junior >= senior - 1e-12


@settings(max_examples=100, deadline=None)
@given(
    z=st.floats(min_value=0.05, max_value=40.0),
    u=st.floats(min_value=-4.0, max_value=4.0),
)
def test_moments_are_ordered(z, u):
    families = [
        [moment_senior(j, z, u, SUBORDINATION, PARAMS) for j in range(3)],
        [moment_junior(j, z, u, SUBORDINATION, PARAMS) for j in range(3)],
        [moment_plain(j, z, u, 75.0, PARAMS) for j in range(3)],
    ]
    for m0, m1, m2 in families:
        assert -1e-12 <= m2 <= m1 + 1e-12
        assert m1 <= m0 + 1e-12
        assert m0 <= 1 + 1e-12
        assert m2 - m1**2 >= -1e-12


if __name__ == "__main__":
    test_phi_examples()
    test_default_threshold_examples()
    test_overlap_face_matrix()
    test_tau_zero_order_limits()
