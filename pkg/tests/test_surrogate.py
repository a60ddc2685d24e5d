import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levelset_abc.design import Bounds, Design, evaluate_design, latin_hypercube
from levelset_abc.errors import FormatError, InvalidArgumentError, NumericalError, OutOfSupportError
from levelset_abc.surrogate import (
    FitConfig,
    GpHyperparams,
    GpSurrogate,
    fit_gp,
    kernel,
    kernel_matrix,
    load_gp,
    log_marginal_likelihood,
    save_gp,
    stack_means,
)
from levelset_abc.targets import get_target

UNIT1 = Bounds([0.0], [1.0])


def dense_predict(X, y, hyper, u):
    """Oracle: explicit inverse of K + nugget I."""
    n = X.shape[0]
    K = np.array([[kernel(X[i], X[j], hyper) for j in range(n)] for i in range(n)]) + hyper.nugget * np.eye(n)
    k = np.array([kernel(u, X[i], hyper) for i in range(n)])
    Kinv = np.linalg.inv(K)
    off = y.mean()
    return k @ Kinv @ (y - off) + off, hyper.signal_variance + hyper.nugget - k @ Kinv @ k


@pytest.fixture(scope="module")
def two_bump_gp():
    t = get_target("two_bump")
    design = evaluate_design(latin_hypercube(50, t.bounds, 1), t)
    return design, fit_gp(design)


class TestKernel:
    def test_zero_distance(self):
        h = GpHyperparams([0.3, 2.0], 1.7, 0.0)
        assert kernel([0.2, 0.4], [0.2, 0.4], h) == 1.7

    def test_infinite_lengthscale_limit(self):
        h = GpHyperparams([1e12, 1e12], 2.5, 0.0)
        assert kernel([0.0, 0.0], [1.0, 1.0], h) == pytest.approx(2.5, rel=1e-15)

    def test_value(self):
        h = GpHyperparams([1.0], 2.0, 0.0)
        assert kernel([0.0], [1.0], h) == pytest.approx(2 * math.exp(-0.5), rel=1e-14)
        assert kernel([0.0], [1.0], h) == pytest.approx(1.21306, abs=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            kernel([0.0], [0.0, 1.0], GpHyperparams([1.0], 1.0, 0.0))

    def test_matrix_agrees_with_pointwise(self, rng):
        h = GpHyperparams([0.4, 0.9, 0.2], 1.3, 0.0)
        A, B = rng.random((4, 3)), rng.random((5, 3))
        expected = np.array([[kernel(a, b, h) for b in B] for a in A])
        np.testing.assert_allclose(kernel_matrix(A, B, h), expected, rtol=1e-12)

    @pytest.mark.parametrize("ls, sv, nug", [([0.0], 1.0, 0.0), ([1.0], 0.0, 0.0), ([1.0], 1.0, -1e-3)])
    def test_invalid_hyper(self, ls, sv, nug):
        with pytest.raises(InvalidArgumentError):
            GpHyperparams(ls, sv, nug)


class TestPrediction:
    X = np.array([[0.1], [0.5], [0.8]])
    y = np.array([1.0, -0.5, 2.0])
    H = GpHyperparams([0.3], 1.5, 1e-3)

    def gp(self):
        return GpSurrogate(self.H, self.X, self.y, UNIT1)

    @pytest.mark.parametrize("u", [0.0, 0.3, 0.65, 1.0])
    def test_dense_oracle(self, u):
        mean, var = dense_predict(self.X, self.y, self.H, np.array([u]))
        gp = self.gp()
        assert gp.predict_mean([u]) == pytest.approx(mean, abs=1e-10)
        assert gp.predict_var([u]) == pytest.approx(var, abs=1e-10)

    def test_interpolates_at_floor_nugget(self):
        h = GpHyperparams([0.3], 1.5, 1.5e-8)
        gp = GpSurrogate(h, self.X, self.y, UNIT1)
        for x, y in zip(self.X, self.y):
            assert gp.predict_mean(x) == pytest.approx(y, abs=1e-4)
            assert gp.predict_var(x) <= 2 * h.nugget + 1e-8

    def test_variance_collapses_with_nugget(self):
        # predictive variance includes the nugget: latent variance (<= nugget at a
        # datum) plus the nugget itself
        gp = self.gp()
        for x in self.X:
            assert gp.predict_var(x) <= 2 * self.H.nugget + 1e-8

    def test_far_point_recovers_prior(self):
        h = GpHyperparams([0.01], 0.7, 1e-4)
        gp = GpSurrogate(h, np.array([[0.0], [0.05]]), np.array([1.0, 2.0]), UNIT1)
        assert gp.predict_var([1.0]) == pytest.approx(0.7 + 1e-4, abs=1e-6)

    def test_constant_data(self):
        gp = GpSurrogate(self.H, self.X, np.full(3, 4.2), UNIT1)
        for u in np.linspace(0, 1, 11):
            assert gp.predict_mean([u]) == pytest.approx(4.2, abs=1e-8)

    def test_cholesky_reconstruction(self):
        gp = self.gp()
        K = kernel_matrix(self.X, self.X, self.H) + self.H.nugget * np.eye(3)
        L = gp.chol_factor
        assert np.allclose(L, np.tril(L))
        assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8

    def test_outside_cube(self):
        with pytest.raises(OutOfSupportError):
            self.gp().predict_mean([1.2])
        with pytest.raises(OutOfSupportError):
            self.gp().mean_at([-0.1])

    def test_vectorized_moments(self):
        gp = self.gp()
        U = np.linspace(0, 1, 7)[:, None]
        means, variances = gp.moments(U)
        for u, m, v in zip(U, means, variances):
            assert m == pytest.approx(gp.predict_mean(u), abs=1e-12)
            assert v == pytest.approx(gp.predict_var(u), abs=1e-12)

    def test_immutable(self):
        with pytest.raises(ValueError):
            self.gp().alpha[0] = 1.0

    @given(
        n=st.integers(1, 10),
        d=st.integers(1, 3),
        seed=st.integers(0, 10_000),
    )
    def test_oracle_equivalence_property(self, n, d, seed):
        r = np.random.default_rng(seed)
        X, y = r.random((n, d)), r.normal(size=n)
        sv = float(r.uniform(0.5, 2.0))
        h = GpHyperparams(r.uniform(0.1, 1.0, d), sv, float(r.uniform(1e-3, 1e-1)) * sv)
        gp = GpSurrogate(h, X, y, Bounds.cube(0, 1, d))
        for u in r.random((3, d)):
            mean, var = dense_predict(X, y, h, u)
            assert gp.predict_mean(u) == pytest.approx(mean, abs=1e-10)
            assert gp.predict_var(u) == pytest.approx(var, abs=1e-10)

    @given(u=st.floats(0, 1), seed=st.integers(0, 1000))
    def test_variance_bounds_property(self, u, seed):
        r = np.random.default_rng(seed)
        h = GpHyperparams([float(r.uniform(0.05, 1))], 1.0, 1e-6)
        gp = GpSurrogate(h, r.random((6, 1)), r.normal(size=6), UNIT1)
        v = gp.predict_var([u])
        assert 0.0 <= v <= h.signal_variance + h.nugget + 1e-8


class TestSampleMarginal:
    def test_zero_variance_returns_mean(self):
        h = GpHyperparams([0.3], 1.0, 0.0)
        gp = GpSurrogate(h, np.array([[0.2], [0.7]]), np.array([1.0, 3.0]), UNIT1)
        gp_var = gp.predict_var([0.2])
        assert gp_var == pytest.approx(0.0, abs=1e-12)
        # exact zero after clamping at a training point of a noise-free GP is not
        # guaranteed in floating point, so use a surrogate whose variance is 0 by clamp
        class Degenerate:
            def moments(self, u):
                return 2.5, 0.0

        assert GpSurrogate.sample_marginal(Degenerate(), [0.5], np.random.default_rng(0)) == 2.5

    def test_moments_of_draws(self):
        gp = TestPrediction().gp()
        u = [0.3]
        mean, var = gp.predict_mean(u), gp.predict_var(u)
        rng = np.random.default_rng(99)
        draws = np.array([gp.sample_marginal(u, rng) for _ in range(100_000)])
        assert abs(draws.mean() - mean) < 4 * math.sqrt(var / 1e5)
        assert draws.var() == pytest.approx(var, rel=0.05)

    def test_deterministic_given_state(self):
        gp = TestPrediction().gp()
        a = gp.sample_marginal([0.4], np.random.default_rng(5))
        b = gp.sample_marginal([0.4], np.random.default_rng(5))
        assert a == b


class TestLogMarginalLikelihood:
    def test_single_point_rejected(self):
        d = Design(np.array([[0.5]]), UNIT1, responses=np.array([1.0]))
        with pytest.raises(InvalidArgumentError):
            log_marginal_likelihood(GpHyperparams([1.0], 1.0, 0.1), d)

    def test_missing_responses_rejected(self):
        d = Design(np.array([[0.1], [0.5]]), UNIT1)
        with pytest.raises(InvalidArgumentError):
            log_marginal_likelihood(GpHyperparams([1.0], 1.0, 0.1), d)

    def test_two_point_closed_form(self):
        x1, x2, y1, y2 = 0.2, 0.7, 1.3, -0.4
        ls, sv, nug = 0.4, 1.7, 0.05
        d = Design(np.array([[x1], [x2]]), UNIT1, responses=np.array([y1, y2]))
        # hand-expanded 2x2: centred data are (+-h), a = sv + nug, b = cross covariance
        h = (y1 - y2) / 2
        a = sv + nug
        b = sv * math.exp(-((x1 - x2) ** 2) / (2 * ls**2))
        det = a * a - b * b
        quad = (a * h * h + a * h * h + 2 * b * h * h) / det  # y^T K^-1 y with y = (h, -h)
        expected = -0.5 * quad - 0.5 * math.log(det) - math.log(2 * math.pi)
        assert log_marginal_likelihood(GpHyperparams([ls], sv, nug), d) == pytest.approx(expected, abs=1e-10)

    def test_scaling_identity(self):
        X = np.array([[0.0], [0.35], [0.7], [1.0]])
        y = np.array([0.3, -1.0, 0.8, 0.1])
        f = 3.7
        h1 = GpHyperparams([0.2], 1.1, 0.0)
        h2 = GpHyperparams([0.2], 1.1 * f * f, 0.0)
        l1 = log_marginal_likelihood(h1, Design(X, UNIT1, responses=y))
        l2 = log_marginal_likelihood(h2, Design(X, UNIT1, responses=f * y))
        assert l2 - l1 == pytest.approx(-(4 / 2) * math.log(f * f), abs=1e-10)

    def test_singular_without_nugget(self):
        X = np.array([[0.5], [0.5], [0.2]])
        d = Design(X, UNIT1, responses=np.array([1.0, 2.0, 0.0]))
        with pytest.raises(NumericalError):
            log_marginal_likelihood(GpHyperparams([0.3], 1.0, 0.0), d)

    def test_finite_difference_gradient_grid(self, rng):
        X = rng.random((8, 2))
        d = Design(X, Bounds.cube(0, 1, 2), responses=np.sin(4 * X[:, 0]) + X[:, 1])
        step = 1e-5
        for ll in np.linspace(math.log(0.05), math.log(5.0), 10):
            for lsv in np.linspace(math.log(0.1), math.log(10.0), 10):
                base = np.array([ll, ll, lsv, math.log(1e-4)])

                def lml(p):
                    return log_marginal_likelihood(GpHyperparams(np.exp(p[:2]), math.exp(p[2]), math.exp(p[3])), d)

                for k in range(4):
                    e = np.zeros(4)
                    e[k] = step
                    g = (lml(base + e) - lml(base - e)) / (2 * step)
                    assert math.isfinite(g)


class TestFit:
    def test_evidence_not_below_any_start(self, two_bump_gp):
        _, gp = two_bump_gp
        info = gp.fit_info
        assert len(info["start_log_marginal_likelihoods"]) == 8
        assert all(info["log_marginal_likelihood"] >= s - 1e-9 for s in info["start_log_marginal_likelihoods"])

    def test_reported_evidence_matches_hyper(self, two_bump_gp):
        design, gp = two_bump_gp
        assert log_marginal_likelihood(gp.hyper, design) == pytest.approx(
            gp.fit_info["log_marginal_likelihood"], rel=1e-6, abs=1e-6
        )

    def test_two_bump_interpolation(self, two_bump_gp):
        design, gp = two_bump_gp
        pred = np.array([gp.mean_at(p) for p in design.points])
        assert np.max(np.abs(pred - design.responses[:, 0])) < 0.05

    def test_nugget_floor(self, two_bump_gp):
        _, gp = two_bump_gp
        assert gp.hyper.nugget >= 1e-8 * gp.hyper.signal_variance * (1 - 1e-9)

    def test_constant_responses(self):
        d = Design(np.array([[0.0], [0.5], [1.0]]), UNIT1, responses=np.ones(3))
        gp = fit_gp(d, config=FitConfig(starts=3))
        for u in np.linspace(0, 1, 21):
            assert gp.predict_mean([u]) == pytest.approx(1.0, abs=0.01)

    def test_too_few_points(self):
        with pytest.raises(InvalidArgumentError):
            fit_gp(Design(np.array([[0.5]]), UNIT1, responses=np.array([1.0])))

    def test_scale_invariance_of_fit(self):
        t = get_target("two_bump")
        d = evaluate_design(latin_hypercube(20, t.bounds, 4), t)
        d_big = Design(d.points, d.bounds, responses=1e4 * d.responses)
        cfg = FitConfig(starts=3)
        g1, g2 = fit_gp(d, config=cfg), fit_gp(d_big, config=cfg)
        np.testing.assert_allclose(g1.hyper.lengthscales, g2.hyper.lengthscales, rtol=1e-4)
        assert g2.hyper.signal_variance == pytest.approx(1e8 * g1.hyper.signal_variance, rel=1e-4)

    def test_deterministic(self):
        t = get_target("goldstein_price")
        d = evaluate_design(latin_hypercube(15, t.bounds, 2), t)
        cfg = FitConfig(starts=2)
        assert fit_gp(d, config=cfg).hyper == fit_gp(d, config=cfg).hyper


class TestSerialization:
    def test_round_trip(self, tmp_path, two_bump_gp):
        _, gp = two_bump_gp
        back = load_gp(save_gp(gp, tmp_path / "m.json"))
        for th in ([0.0, 0.0], [-2.0, -2.0], [3.3, -1.1]):
            assert back.mean_at(th) == pytest.approx(gp.mean_at(th), abs=1e-10)
            assert back.moments_at(th)[1] == pytest.approx(gp.moments_at(th)[1], abs=1e-10)
        assert "chol_factor" not in (tmp_path / "m.json").read_text()

    def test_wrong_format(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(FormatError):
            load_gp(p)
        p.write_text("{not json")
        with pytest.raises(FormatError):
            load_gp(p)

    def test_stack_means(self):
        b = Bounds.cube(0, 1, 1)
        h = GpHyperparams([0.3], 1.0, 1e-6)
        X = np.array([[0.1], [0.9]])
        g1 = GpSurrogate(h, X, np.array([0.0, 1.0]), b)
        g2 = GpSurrogate(h, X, np.array([5.0, 3.0]), b)
        f = stack_means([g1, g2])
        np.testing.assert_allclose(f([0.1]), [0.0, 5.0], atol=1e-4)
        g3 = GpSurrogate(h, X, np.array([0.0, 1.0]), Bounds([0.0], [2.0]))
        with pytest.raises(InvalidArgumentError):
            stack_means([g1, g3])
