import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from nrlangevin.gaussian_analysis import solve_lyapunov_continuous
from nrlangevin.kernels import (
    ProposalError,
    ReversibleKernel,
    detailed_balance_residual,
    kernel_step,
)
from nrlangevin.targets import (
    GaussianTarget,
    LogGaussianCoxTarget,
    LogisticRegressionTarget,
    WarpedGaussianTarget,
    bin_points,
    synthetic_pima,
    synthetic_pine_points,
)

WARPED = WarpedGaussianTarget(0.05)


def _targets():
    X, y = synthetic_pima(0, m=80, n_covariates=3)
    return {
        "warped": (WARPED, 4.0, 0.0),
        "gaussian": (GaussianTarget(np.array([[2.0, 0.4], [0.4, 1.0]])), 1.0, 0.0),
        "logistic": (LogisticRegressionTarget(X, y), 0.3, 0.0),
        "cox": (LogGaussianCoxTarget(bin_points(synthetic_pine_points(0), 3)), 0.5, np.log(126) - 1.91 / 2),
    }


class TestDetailedBalance:
    @pytest.mark.parametrize("kind", ["mala", "rwmh", "mala_barker"])
    @pytest.mark.parametrize("name", ["warped", "gaussian", "logistic", "cox"])
    def test_residual_vanishes(self, kind, name):
        target, scale, center = _targets()[name]
        k = ReversibleKernel(kind, target)
        rng = np.random.default_rng(7)
        x = center + scale * rng.standard_normal((1000, target.dim))
        y = x + 0.3 * scale * rng.standard_normal((1000, target.dim))
        assert np.max(detailed_balance_residual(k, x, y, 0.1)) <= 1e-10

    def test_linear_kind_rejected(self):
        with pytest.raises(ValueError):
            detailed_balance_residual(ReversibleKernel("exact_ou", A=np.eye(2)), np.zeros(2), np.ones(2), 0.1)


class TestMetropolized:
    def test_mala_acceptance_near_one_for_small_dt(self):
        t = GaussianTarget(np.eye(2))
        k = ReversibleKernel("mala", t)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(2)
        acc = 0
        for _ in range(10_000):
            x, rec = kernel_step(k, x, 1e-3, rng)
            acc += rec.accepted
        assert acc / 10_000 >= 0.95

    def test_rejection_leaves_state_bitwise(self):
        k = ReversibleKernel("mala", WARPED)
        state, _ = k.init_state(np.array([[3.1, 0.7], [0.2, 4.9]]))
        xi = np.random.default_rng(1).standard_normal((2, 2))
        new, rec = k.advance(state, 5.0, xi, np.array([0.0, 0.0]))  # log u = 0 rejects unless ratio >= 1
        for i in np.flatnonzero(~rec.accepted):
            assert new.x[i].tobytes() == state.x[i].tobytes()
            assert new.logp[i] == state.logp[i]

    @pytest.mark.parametrize("kind,cost", [("mala", (1, 1)), ("mala_barker", (1, 1)), ("rwmh", (1, 0)), ("exact_ou", (0, 0))])
    def test_costs(self, kind, cost):
        k = ReversibleKernel(kind, WARPED, A=np.eye(2))
        _, rec = kernel_step(k, np.array([1.0, 2.0]), 0.1, np.random.default_rng(0))
        assert (rec.n_density_evals, rec.n_grad_evals) == cost

    def test_barker_accepts_less_often(self):
        rng = np.random.default_rng(2)
        x = WARPED.sample_exact(4000, rng)
        xi = rng.standard_normal(x.shape)
        log_u = np.log(rng.random(4000))
        rates = {}
        for kind in ("mala", "mala_barker"):
            k = ReversibleKernel(kind, WARPED)
            state, _ = k.init_state(x)
            _, rec = k.advance(state, 0.3, xi, log_u)
            rates[kind] = rec.accepted.mean()
        assert rates["mala_barker"] < rates["mala"]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_proposal_raises(self):
        k = ReversibleKernel("mala", WARPED)
        with pytest.raises(ProposalError):
            kernel_step(k, np.array([1e200, 1e200]), 1.0, np.random.default_rng(0))

    def test_mala_preserves_warped_moments(self):
        rng = np.random.default_rng(5)
        x = WARPED.sample_exact(50_000, rng)
        k = ReversibleKernel("mala", WARPED)
        for _ in range(3):
            x, _ = kernel_step(k, x, 0.4, rng)
        f = (x**2).sum(axis=1)
        assert abs(f.mean() - 69.25) < 4 * f.std() / np.sqrt(f.size)

    def test_needs_target(self):
        with pytest.raises(ValueError):
            ReversibleKernel("mala")
        with pytest.raises(ValueError):
            ReversibleKernel("hmc", WARPED)


class TestLinearKernels:
    A = np.array([[1.0, 0.4], [-0.2, 0.7]])

    def test_exact_ou_isotropic_covariance(self):
        alpha, dt = 1.3, 0.2
        k = ReversibleKernel("exact_ou", A=alpha * np.eye(2))
        R, C, _ = k.ou_transition(dt)
        np.testing.assert_allclose(C, (1 - np.exp(-2 * alpha * dt)) / (2 * alpha) * np.eye(2), rtol=1e-14)
        np.testing.assert_allclose(R, np.exp(-alpha * dt) * np.eye(2))

    @pytest.mark.parametrize("noise,D", [("unit_diffusion", 1.0), ("sqrt2_diffusion", 2.0)])
    def test_exact_ou_general_matches_quadrature(self, noise, D):
        dt = 0.37
        k = ReversibleKernel("exact_ou", A=self.A, noise=noise)
        R, C, _ = k.ou_transition(dt)
        want, _ = quad_vec(lambda s: D * expm(-self.A * s) @ expm(-self.A.T * s), 0, dt, epsabs=1e-14)
        np.testing.assert_allclose(C, want, atol=1e-13)
        np.testing.assert_allclose(R, expm(-self.A * dt), atol=1e-14)

    def test_exact_ou_keeps_stationary_law(self):
        S = solve_lyapunov_continuous(self.A, np.eye(2))
        rng = np.random.default_rng(0)
        n = 100_000
        x = rng.standard_normal((n, 2)) @ np.linalg.cholesky(S).T
        k = ReversibleKernel("exact_ou", A=self.A)
        y, _ = kernel_step(k, x, 0.5, rng)
        se = np.sqrt(np.diag(S) / n)
        assert np.all(np.abs(y.mean(axis=0)) < 4 * se)
        # standard error of a sample variance is about sqrt(2/n) s^2
        assert np.all(np.abs(np.var(y, axis=0) - np.diag(S)) < 4 * np.sqrt(2 / n) * np.diag(S))

    def test_theta_half_keeps_gaussian_exactly(self):
        for dt in (0.01, 0.3, 2.0):
            k = ReversibleKernel("theta_half", A=self.A)
            M, N = k.theta_matrices(dt)
            S = solve_lyapunov_continuous(self.A, np.eye(2))
            np.testing.assert_allclose(M @ S @ M.T + N @ N.T, S, atol=1e-12)

    def test_theta_half_isotropic_fixed_point(self):
        alpha, dt = 2.0, 0.3
        k = ReversibleKernel("theta_half", A=alpha * np.eye(2))
        M, N = k.theta_matrices(dt)
        m, n2 = M[0, 0], (N @ N.T)[0, 0]
        assert n2 / (1 - m * m) == pytest.approx(1 / (2 * alpha), rel=1e-13)

    def test_unstable_drift_rejected(self):
        with pytest.raises(ValueError):
            ReversibleKernel("exact_ou", A=-np.eye(2))
