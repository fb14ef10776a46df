import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensor_ising import zoo as Z
from tensor_ising.cw_exact import beta_tilde
from tensor_ising.errors import ParseError, SpecError
from tensor_ising.tensor import local_interaction_norm


def rate(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(t < 1, (1 - t) * np.log1p(-t), 0.0)
    return 0.5 * ((1 + t) * np.log1p(t) + a)


def grid_threshold(p, theta):
    t = np.linspace(1e-6, 1.0, 1_000_001)
    return float(np.min(rate(t) / (theta * t**p)))


class TestGenerators:
    def test_sk_shape(self):
        t = Z.gen_sk(3, 10, seed=0)
        assert t.num_edges == math.comb(10, 3)
        assert np.std(t.coef) * 10 == pytest.approx(1.0, abs=0.15)

    def test_sk_deterministic(self):
        assert np.array_equal(Z.gen_sk(2, 30, seed=4).coef, Z.gen_sk(2, 30, seed=4).coef)
        assert not np.array_equal(Z.gen_sk(2, 30, seed=4).coef, Z.gen_sk(2, 30, seed=5).coef)

    def test_sk_norm_bounded(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            t = Z.gen_sk(2, 100, seed=seed)
            assert local_interaction_norm(t, rng.choice([-1, 1], size=100)) < 4

    def test_complete(self):
        t = Z.gen_er(3, 8, 1.0, seed=0)
        assert t.num_edges == math.comb(8, 3)
        np.testing.assert_allclose(t.coef, 8.0**-2)

    def test_er_count(self):
        n, theta = 30, 0.3
        total = math.comb(n, 3)
        got = Z.gen_er(3, n, theta, seed=1).num_edges
        assert abs(got - theta * total) < 4 * math.sqrt(total * theta * (1 - theta))

    def test_block_labels(self):
        lab = Z.block_labels(np.array([0.25, 0.75]), 8)
        assert list(lab) == [0, 0, 1, 1, 1, 1, 1, 1]
        assert np.all(np.diff(Z.block_labels(np.array([0.2, 0.3, 0.5]), 31)) >= 0)

    def test_two_block_cross_fraction(self):
        th = np.zeros((2, 2))
        th[0, 1] = th[1, 0] = 1.0
        spec = Z.HsbmSpec(2, (0.5, 0.5), th)
        t = Z.gen_hsbm(spec, 10, seed=0)
        assert t.num_edges == 25
        assert all((i < 5) != (j < 5) for i, j in t.index)

    def test_partite(self):
        t = Z.gen_partite(3, [2, 2, 2], 1.0, seed=0)
        assert t.num_edges == 8
        parts = np.array([0, 0, 1, 1, 2, 2])
        assert all(len(set(parts[row])) == 3 for row in t.index)

    def test_partite_count(self):
        got = Z.gen_partite(3, [5, 5, 4], 0.5, seed=3).num_edges
        assert abs(got - 50) < 4 * math.sqrt(25)

    def test_partite_bad_sizes(self):
        with pytest.raises(SpecError):
            Z.gen_partite(3, [2, 2], 0.5, seed=0)

    def test_triangles_brute_force(self):
        g = Z.gen_er(2, 15, 0.4, seed=2)
        edges = {tuple(r) for r in g.index.tolist()}
        expect = {tri for tri in itertools.combinations(range(15), 3)
                  if all(pair in edges for pair in itertools.combinations(tri, 2))}
        tri = Z.triangle_tensor(g, scale=0.5)
        assert set(tri.edges()) == expect
        assert np.all(tri.coef == 0.5)


class TestSpec:
    def test_rejects_asymmetric(self):
        th = np.array([[0.1, 0.2], [0.3, 0.4]])
        with pytest.raises(SpecError):
            Z.HsbmSpec(2, (0.5, 0.5), th)

    @pytest.mark.parametrize("lam", [(0.5, 0.4), (-0.1, 1.1)])
    def test_rejects_lambda(self, lam):
        with pytest.raises(SpecError):
            Z.HsbmSpec(2, lam, np.full((2, 2), 0.5))

    def test_read_symmetrizes(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text("2 2\n0.5 0.5\n0.1 0.2\n0.4 0.3\n")
        spec = Z.read_hsbm_spec(path)
        assert spec.theta[0, 1] == pytest.approx(0.3) and spec.theta[1, 0] == pytest.approx(0.3)

    def test_read_errors(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text("2 2\n0.5 0.5\n0.1 0.2\n0.4\n")
        with pytest.raises(ParseError):
            Z.read_hsbm_spec(path)
        path.write_text("2 1\n1\nabc\n")
        with pytest.raises(ParseError) as err:
            Z.read_hsbm_spec(path)
        assert err.value.line == 3


class TestPhi:
    def test_zero_at_origin(self):
        spec = Z.equipartite_spec(3, 0.7)
        assert Z.phi_eval(spec, 2.0, np.zeros(3)) == 0.0

    def test_single_block(self):
        spec = Z.HsbmSpec.erdos_renyi(3, 0.5)
        t = 0.6
        assert Z.phi_eval(spec, 1.2, [t]) == pytest.approx(1.2 * 0.5 * t**3 - float(rate(t)), abs=1e-14)

    def test_batch_matches_scalar(self):
        spec = Z.equipartite_spec(3, 1.0)
        T = np.random.default_rng(0).random((20, 3))
        got = Z.phi_batch(spec, 5.0, T)
        np.testing.assert_allclose(got, [Z.phi_eval(spec, 5.0, row) for row in T], atol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        th = Z.symmetrize(rng.random((2, 2, 2)))
        spec = Z.HsbmSpec(3, (0.3, 0.7), th)
        t = rng.uniform(0.05, 0.9, size=2)
        g = Z.phi_grad(spec, 1.7, t)
        step = 1e-6
        for k in range(2):
            e = np.eye(2)[k] * step
            fd = (Z.phi_eval(spec, 1.7, t + e) - Z.phi_eval(spec, 1.7, t - e)) / (2 * step)
            assert g[k] == pytest.approx(fd, abs=1e-7)


class TestThresholds:
    @pytest.mark.parametrize("p", [2, 3, 4, 5])
    def test_matches_grid_oracle(self, p):
        assert Z.threshold_er(p, 1.0, tol=1e-8) == pytest.approx(grid_threshold(p, 1.0), abs=1e-5)

    def test_matches_cw(self):
        for p in (3, 4, 6):
            assert Z.threshold_er(p, 1.0, tol=1e-8) == pytest.approx(beta_tilde(p), abs=1e-6)

    @pytest.mark.parametrize("theta", [0.25, 0.5, 1.0])
    def test_scaling(self, theta):
        assert Z.threshold_er(3, theta) * theta == pytest.approx(Z.threshold_er(3, 1.0), rel=1e-5)

    def test_table(self):
        rows = Z.cw_threshold_table(10)
        vals = [v for _, v in rows]
        assert rows[0] == (2, pytest.approx(0.5, abs=1e-5))
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert all(v < math.log(2) for v in vals)
        assert vals[-1] > 0.69

    def test_equipartite(self):
        for p in (2, 3):
            got = Z.threshold_equipartite(p, 1.0)
            assert got == pytest.approx(p**p * Z.threshold_er(p, 1.0), rel=1e-5)

    def test_equipartite_scaling(self):
        a = Z.threshold_equipartite(3, 0.5)
        b = Z.threshold_equipartite(3, 1.0)
        assert a / b == pytest.approx(2.0, rel=1e-5)

    def test_two_block_between_extremes(self):
        th = np.full((2, 2, 2), 0.2)
        th[0, 0, 0] = 1.0
        spec = Z.HsbmSpec(3, (0.5, 0.5), th)
        b = Z.threshold_hsbm(spec).beta_star
        # entrywise between the uniform 0.2 and uniform 1 tensors
        assert Z.threshold_er(3, 1.0) <= b <= Z.threshold_er(3, 0.2) * 1.000001

    def test_zero_theta(self):
        from tensor_ising.errors import SolverError
        with pytest.raises(SolverError):
            Z.threshold_hsbm(Z.HsbmSpec.erdos_renyi(3, 0.0))

    def test_sup_monotone_in_beta(self):
        spec = Z.equipartite_spec(3, 1.0)
        vals = [Z.sup_phi(spec, b)[0] for b in (10, 15, 20, 25, 30)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
