import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, sparse

from tensor_ising import covariate as C
from tensor_ising.cw_exact import CwSpec, magnetization_pmf
from tensor_ising.errors import DimensionMismatch, ParseError, SpecError


def random_model(seed, n=60, d=4, beta=0.2):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, d))
    theta = rng.normal(scale=0.3, size=d)
    return C.CovariateModel(C.ring_network(n, 2), Z, beta, theta), rng


def naive_neg_log_pl(A, Z, x, gamma):
    A = A.toarray()
    total = 0.0
    for i in range(len(x)):
        a = gamma[0] * A[i] @ x + Z[i] @ gamma[1:]
        total += math.log(math.exp(x[i] * a) / (math.exp(a) + math.exp(-a)))
    return -total / len(x)


class TestModel:
    def test_validation(self):
        with pytest.raises(SpecError):
            C.CovariateModel(sparse.eye(3, format="csr"), np.ones((3, 1)))
        with pytest.raises(DimensionMismatch):
            C.CovariateModel(C.ring_network(6, 1), np.ones((5, 1)))
        with pytest.raises(SpecError):
            C.CovariateModel(sparse.csr_matrix(np.triu(np.ones((3, 3)), 1)), np.ones((3, 1)))

    def test_ring(self):
        A = C.ring_network(10, 2)
        np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0)
        assert A[0, 9] == A[9, 0] == 0.25


class TestObjective:
    def test_log2_at_zero(self):
        model, rng = random_model(0)
        x = rng.choice([-1, 1], size=model.n)
        assert C.neg_log_pl(model, x, np.zeros(model.d + 1)) == pytest.approx(math.log(2), abs=1e-15)

    def test_naive_oracle(self):
        model, rng = random_model(1)
        x = rng.choice([-1, 1], size=model.n)
        g = rng.normal(size=model.d + 1)
        expect = naive_neg_log_pl(model.A, model.Z, x, g)
        assert C.neg_log_pl(model, x, g) == pytest.approx(expect, abs=1e-12)

    def test_stable_for_large_arguments(self):
        model, rng = random_model(2)
        x = rng.choice([-1, 1], size=model.n)
        assert math.isfinite(C.neg_log_pl(model, x, np.full(model.d + 1, 500.0)))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_gradient_fd(self, seed):
        model, rng = random_model(seed)
        x = rng.choice([-1, 1], size=model.n)
        g = rng.normal(size=model.d + 1)
        grad = C.grad_neg_log_pl(model, x, g)
        step = 1e-6
        for k in range(model.d + 1):
            e = np.zeros(model.d + 1)
            e[k] = step
            fd = (C.neg_log_pl(model, x, g + e) - C.neg_log_pl(model, x, g - e)) / (2 * step)
            assert grad[k] == pytest.approx(fd, abs=1e-7)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000), w=st.floats(0, 1))
    def test_convex(self, seed, w):
        model, rng = random_model(seed)
        x = rng.choice([-1, 1], size=model.n)
        a, b = rng.normal(size=(2, model.d + 1))
        mid = C.neg_log_pl(model, x, w * a + (1 - w) * b)
        assert mid <= w * C.neg_log_pl(model, x, a) + (1 - w) * C.neg_log_pl(model, x, b) + 1e-12

    def test_gradient_centred_at_truth(self):
        model, _ = random_model(3, n=200, d=2)
        grads = [C.grad_neg_log_pl(model, C.sample_covariate(model, burn_in=200, rng=s), model.gamma)
                 for s in range(60)]
        G = np.array(grads)
        se = G.std(axis=0) / math.sqrt(len(G))
        assert np.all(np.abs(G.mean(axis=0)) < 4 * se + 1e-12)

    def test_gradient_at_zero_without_network(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(30, 3))
        Z -= Z.mean(axis=0)
        model = C.CovariateModel(sparse.csr_matrix((30, 30)), Z)
        x = rng.choice([-1, 1], size=30)
        grad = C.grad_neg_log_pl(model, x, np.zeros(4))
        assert grad[0] == 0
        np.testing.assert_allclose(grad[1:], -Z.T @ x / 30, atol=1e-15)


class TestFit:
    def test_large_lambda_gives_zero(self):
        model, rng = random_model(4)
        x = rng.choice([-1, 1], size=model.n)
        fit = C.fit_penalized(model, x, lam=10.0)
        assert np.all(fit.gamma_hat == 0) and fit.converged

    def test_unpenalized_stationary(self):
        model, rng = random_model(6, n=300)
        x = C.sample_covariate(model, burn_in=200, rng=1)
        fit = C.fit_penalized(model, x, lam=0.0)
        assert np.abs(C.grad_neg_log_pl(model, x, fit.gamma_hat)).max() < 1e-6

    def test_kkt_and_monotone(self):
        model, _ = random_model(7, n=300, d=10)
        x = C.sample_covariate(model, burn_in=200, rng=2)
        fit = C.fit_penalized(model, x, delta=1.0)
        assert fit.converged and fit.kkt < 1e-7
        tr = np.array(fit.objective_trace)
        assert np.all(np.diff(tr) <= 1e-12)
        assert fit.lam == pytest.approx(math.sqrt(math.log(11) / 300))

    def test_matches_split_variable_oracle(self):
        # no network: the beta coordinate is inert and the problem is L1 logistic regression
        rng = np.random.default_rng(8)
        n, d = 200, 5
        Z = rng.normal(size=(n, d))
        theta = np.array([0.8, -0.5, 0, 0, 0.3])
        x = np.where(rng.random(n) < 1 / (1 + np.exp(-2 * Z @ theta)), 1, -1)
        model = C.CovariateModel(sparse.csr_matrix((n, n)), Z)
        lam = 0.05
        fit = C.fit_penalized(model, x, lam=lam)

        def obj(v):
            th = v[:d] - v[d:]
            a = Z @ th
            f = np.mean(np.logaddexp(a, -a) - x * a) + lam * v.sum()
            r = x - np.tanh(a)
            g = -Z.T @ r / n
            return f, np.concatenate([g + lam, -g + lam])

        res = optimize.minimize(obj, np.zeros(2 * d), jac=True, method="L-BFGS-B",
                                bounds=[(0, None)] * (2 * d), options={"ftol": 1e-15, "gtol": 1e-12})
        oracle = res.x[:d] - res.x[d:]
        assert fit.gamma_hat[0] == 0
        np.testing.assert_allclose(fit.gamma_hat[1:], oracle, atol=1e-6)

    def test_to_dict(self):
        model, rng = random_model(9)
        fit = C.fit_penalized(model, rng.choice([-1, 1], size=model.n), delta=0.5)
        d = fit.to_dict()
        assert set(d) >= {"beta", "theta", "lambda", "converged", "kkt_residual", "support"}


class TestSampler:
    def test_independent_spins(self):
        rng = np.random.default_rng(0)
        n = 400
        Z = rng.normal(size=(n, 1))
        model = C.CovariateModel(sparse.csr_matrix((n, n)), Z, 0.0, [0.7])
        X = np.array([C.sample_covariate(model, burn_in=1, rng=s) for s in range(200)])
        q = 1 / (1 + np.exp(-2 * 0.7 * Z[:, 0]))
        z = (X == 1).mean(axis=0) - q
        assert np.abs(z).max() < 5 * math.sqrt(0.25 / 200)

    def test_curie_weiss_reduction(self):
        n = 8
        model = C.CovariateModel(C.curie_weiss_matrix(n), np.zeros((n, 1)), 0.8, [0.0])
        chain = C.CovariateChain(model, rng=1)
        chain.sweep(100)
        ks = np.empty(100_000, dtype=int)
        for r in range(len(ks)):
            ks[r] = int((chain.sweep(1) > 0).sum())
        got = np.bincount(ks, minlength=n + 1) / len(ks)
        exact = magnetization_pmf(CwSpec(0.4, 0.0, 2, n)).probs
        assert 0.5 * np.abs(got - exact).sum() < 0.02

    def test_zero_covariates_same_as_zero_theta(self):
        n = 30
        A = C.ring_network(n)
        a = C.CovariateModel(A, np.zeros((n, 2)), 0.4, [1.0, -1.0])
        b = C.CovariateModel(A, np.ones((n, 2)), 0.4, [0.0, 0.0])
        assert np.array_equal(C.sample_covariate(a, 50, rng=3), C.sample_covariate(b, 50, rng=3))


class TestAssumptions:
    def test_curie_weiss_passes(self):
        rng = np.random.default_rng(0)
        model = C.CovariateModel(C.curie_weiss_matrix(50), rng.choice([-1.0, 1.0], size=(50, 3)), 0.1,
                                 [0.5, 0, 0])
        rep = C.assumption_report(model, theta_bound=1.0, z_bound=2.0)
        assert not any(rep["violations"].values())
        assert rep["Z_gram_min_eig"] > 0.5

    def test_zero_column_flagged(self):
        Z = np.ones((20, 2))
        Z[:, 1] = 0
        rep = C.assumption_report(C.CovariateModel(C.ring_network(20), Z))
        assert rep["violations"]["covariate_eigenvalue"]

    def test_row_sum_and_beta(self):
        model = C.CovariateModel(C.curie_weiss_matrix(10, scale=3.0), np.eye(10)[:, :2], 0.5)
        v = C.assumption_report(model)["violations"]
        assert v["row_sum_norm"] and v["beta_bound"]


class TestFiles:
    def test_network(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0 1 0.5\n# comment\n1 2 1\n")
        A = C.read_network(p)
        assert A.shape == (3, 3) and A[1, 0] == 0.5 and A[2, 1] == 1
        p.write_text("0 0 1\n")
        with pytest.raises(ParseError):
            C.read_network(p)

    def test_covariates(self, tmp_path):
        p = tmp_path / "z.csv"
        p.write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(C.read_covariates(p), [[1, 2], [3, 4]])
        p.write_text("1,2\n3\n")
        with pytest.raises(ParseError) as err:
            C.read_covariates(p)
        assert err.value.line == 2

    def test_responses(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("1\n-1\n")
        assert list(C.read_responses(p)) == [1, -1]
        p.write_text("1\n2\n")
        with pytest.raises(ParseError):
            C.read_responses(p)
