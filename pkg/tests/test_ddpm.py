"""Tests for the diffusion kernel."""

import numpy as np
import pytest

from mesh3d_bench.ddpm import (
    GaussianOptimalPredictor,
    LinearNoisePredictor,
    NoiseSchedule,
    OraclePredictor,
    SigmaMode,
    forward_sample,
    forward_step,
    latent,
    linear_schedule,
    reverse_step,
    sample,
    simplified_loss,
)
from mesh3d_bench.errors import InvalidRange, ShapeMismatch
from mesh3d_bench.geometry import make_rng


@pytest.fixture
def schedule():
    return linear_schedule()


class TestSchedule:
    """Test noise schedules."""

    def test_linear_defaults(self, schedule):
        """Test endpoints and cumulative products."""
        assert schedule.T == 1000
        assert schedule.beta(1) == pytest.approx(1e-4)
        assert schedule.beta(1000) == pytest.approx(0.02)
        assert schedule.alpha_bar(3) == pytest.approx(np.prod(1.0 - schedule.betas[:3]))
        assert 0.0 < schedule.alpha_bar(1000) < schedule.alpha_bar(1) < 1.0

    @pytest.mark.parametrize("betas", [[], [0.0, 0.1], [0.1, 1.0], [0.2, 0.1]])
    def test_invalid_betas(self, betas):
        """Test that betas must be increasing and inside (0, 1)."""
        with pytest.raises(InvalidRange):
            NoiseSchedule(np.array(betas))

    def test_step_range(self, schedule):
        """Test that steps are 1-based."""
        with pytest.raises(InvalidRange):
            schedule.beta(0)
        with pytest.raises(InvalidRange):
            schedule.alpha_bar(1001)

    def test_sigma_modes(self, schedule):
        """Test the reverse-step noise scales."""
        assert schedule.sigma(10) == pytest.approx(np.sqrt(schedule.beta(10)))
        assert schedule.sigma(10, SigmaMode.ZERO) == 0.0
        assert schedule.sigma(1, SigmaMode.POSTERIOR) == 0.0
        assert schedule.sigma(10, "posterior") < schedule.sigma(10)


class TestForward:
    """Test forward noising."""

    def test_first_step_inverts(self, schedule):
        """Test that one reverse step with the true noise recovers x0."""
        rng = make_rng(1)
        x0 = rng.standard_normal((4, 8))
        eps = rng.standard_normal((4, 8))
        x1 = forward_sample(x0, 1, eps, schedule)
        recovered = reverse_step(x1, 1, eps, np.zeros_like(x0), 0.0, schedule)
        np.testing.assert_allclose(recovered, x0, rtol=0, atol=1e-12)

    def test_marginal_matches_chain(self, schedule):
        """Test that chaining single steps reproduces the closed-form marginal."""
        n, t = 100_000, 50
        rng = make_rng(2)
        x = np.full(n, 2.0)
        for step in range(1, t + 1):
            x = forward_step(x, step, rng.standard_normal(n), schedule)
        abar = schedule.alpha_bar(t)
        mean, var = 2.0 * np.sqrt(abar), 1.0 - abar
        assert abs(x.mean() - mean) < 3 * np.sqrt(var / n)
        assert abs(x.var() - var) < 3 * var * np.sqrt(2.0 / n)

        direct = forward_sample(np.full(n, 2.0), t, rng.standard_normal(n), schedule)
        assert abs(direct.mean() - mean) < 3 * np.sqrt(var / n)

    def test_last_step_is_standard_normal(self, schedule):
        """Test that the marginal at t=T has forgotten the data."""
        n = 100_000
        rng = make_rng(9)
        x0 = rng.uniform(-1.0, 1.0, n)
        x = forward_sample(x0, schedule.T, rng.standard_normal(n), schedule)
        assert schedule.alpha_bar(schedule.T) < 1e-4
        assert abs(x.mean()) < 3 * np.sqrt(1.0 / n)
        assert abs(x.var() - 1.0) < 3 * np.sqrt(2.0 / n)

    def test_shape_mismatch(self, schedule):
        """Test that noise must match the latent shape."""
        with pytest.raises(ShapeMismatch):
            forward_sample(np.zeros(3), 5, np.zeros(4), schedule)


class TestLoss:
    """Test the simplified training loss."""

    def test_oracle_has_zero_loss(self, schedule):
        """Test that predicting the true noise costs nothing."""
        rng = make_rng(3)
        x0, eps = rng.standard_normal(16), rng.standard_normal(16)
        assert simplified_loss(x0, 200, eps, OraclePredictor(eps), schedule) == 0.0

    @pytest.mark.parametrize("weight", [0.3, np.linspace(-0.5, 0.5, 6)])
    def test_gradient_matches_finite_differences(self, schedule, weight):
        """Test the analytic weight gradient with central differences."""
        rng = make_rng(4)
        x0, eps = rng.standard_normal(6), rng.standard_normal(6)
        predictor = LinearNoisePredictor(weight)
        grad = predictor.loss_gradient(x0, 300, eps, schedule)

        base = np.asarray(weight, dtype=np.float64)
        numeric = np.zeros_like(base)
        step = 1e-6
        for k in np.ndindex(base.shape):
            up, down = base.copy(), base.copy()
            up[k] += step
            down[k] -= step
            numeric[k] = (
                simplified_loss(x0, 300, eps, LinearNoisePredictor(up), schedule)
                - simplified_loss(x0, 300, eps, LinearNoisePredictor(down), schedule)
            ) / (2 * step)
        np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-6)


class TestSampler:
    """Test ancestral sampling."""

    @pytest.mark.parametrize("c", [0.5, 1.0])
    def test_gaussian_data_variance_is_recovered(self, schedule, c):
        """Test that the exact predictor for N(0, c^2) data samples variance c^2."""
        x = sample(GaussianOptimalPredictor(c, schedule), schedule, (20_000,), seed=7)
        assert x.var() == pytest.approx(c**2, rel=0.05)
        assert abs(x.mean()) < 0.05

    def test_deterministic(self):
        """Test that a seed fixes the output."""
        s = linear_schedule(T=50)
        predictor = GaussianOptimalPredictor(0.5, s)
        a = sample(predictor, s, (3, 4), seed=11)
        b = sample(predictor, s, (3, 4), seed=11)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, sample(predictor, s, (3, 4), seed=11, stream=1))

    def test_predictor_shape_checked(self):
        """Test that a predictor returning the wrong shape is rejected."""
        s = linear_schedule(T=5)
        with pytest.raises(ShapeMismatch):
            sample(lambda x, t: np.zeros(2), s, (3,), seed=0)


class TestLatent:
    """Test latent tensor construction."""

    def test_reshape(self):
        """Test flat values filling a shape."""
        assert latent(range(6), (2, 3)).shape == (2, 3)

    def test_wrong_size(self):
        """Test that the value count must fill the shape."""
        with pytest.raises(ShapeMismatch):
            latent([1.0, 2.0], (3,))

    def test_non_finite(self):
        """Test that NaN is rejected."""
        with pytest.raises(InvalidRange):
            latent([1.0, float("nan")])
