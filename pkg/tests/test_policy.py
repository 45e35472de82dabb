"""Tests for policy construction, inference, Jacobians and checkpoints."""

import numpy as np
import pytest

import stablebc.autodiff as ad
import stablebc.policy as pol
from stablebc.errors import DimensionError, UnsupportedConfigError


class TestInit:
    def test_shapes(self):
        p = pol.init_policy(m=2, d=3, n=2, hidden=(16, 8), seed=0)
        assert [w.shape for w in p.weights] == [(16, 5), (8, 16), (2, 8)]
        assert [b.shape for b in p.biases] == [(16,), (8,), (2,)]
        assert np.array_equal(p.in_mean, np.zeros(5))
        assert np.array_equal(p.in_std, np.ones(5))

    def test_seed_reproducible(self):
        a = pol.init_policy(2, 2, 1, (8,), seed=77)
        b = pol.init_policy(2, 2, 1, (8,), seed=77)
        c = pol.init_policy(2, 2, 1, (8,), seed=78)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_glorot_bound(self):
        p = pol.init_policy(4, 4, 2, (64,), seed=1)
        bound = np.sqrt(6.0 / (8 + 64))
        assert np.abs(p.weights[0]).max() <= bound
        assert np.all(p.biases[0] == 0.0)

    def test_bad_dims(self):
        with pytest.raises(DimensionError):
            pol.init_policy(0, 1, 1)
        with pytest.raises(DimensionError):
            pol.init_policy(1, 1, 1, hidden=())
        with pytest.raises(UnsupportedConfigError):
            pol.init_policy(1, 1, 1, activation="elu")


class TestAct:
    def test_matches_graph_forward(self):
        p = pol.init_policy(2, 3, 2, (8, 8), seed=3)
        p.in_mean = np.arange(5, dtype=float) * 0.1
        p.in_std = np.ones(5) * 1.5
        x = np.array([0.3, -0.2])
        y = np.array([1.0, 0.5, -0.4])
        u = pol.act(p, x, y)
        g = pol.graph(p)
        out = g.forward(np.concatenate([x, y]).reshape(1, -1))
        np.testing.assert_allclose(u, out.value[0], rtol=1e-13)

    def test_fixed_seed_regression(self):
        # pinned output of a known-seed network at a known input; guards
        # against silent changes to initialization or the forward pass
        p = pol.init_policy(2, 2, 2, (4, 4), seed=123)
        u = pol.act(p, np.array([0.5, -0.5]), np.array([1.0, 2.0]))
        expected = np.array([1.4615206982961557, -0.2375576531030526])
        np.testing.assert_allclose(u, expected, rtol=0, atol=0)

    def test_shape_errors(self):
        p = pol.init_policy(2, 2, 1, (4,), seed=0)
        with pytest.raises(DimensionError):
            pol.act(p, np.zeros(3), np.zeros(2))
        with pytest.raises(DimensionError):
            pol.act(p, np.zeros(2), np.zeros(1))


class TestInputJacobian:
    def test_matches_graph_jacobian(self):
        p = pol.init_policy(2, 3, 2, (8, 8), seed=5)
        p.in_mean = np.linspace(-0.2, 0.2, 5)
        p.in_std = np.linspace(0.5, 2.0, 5)
        x = np.array([0.1, 0.7])
        y = np.array([-0.3, 0.2, 0.9])
        fast = pol.input_jacobian_values(p, x, y)
        g = pol.graph(p)
        g.forward(np.concatenate([x, y]).reshape(1, -1))
        np.testing.assert_allclose(fast, g.input_jacobian(0).value, rtol=1e-12)

    def test_matches_fd(self):
        p = pol.init_policy(2, 2, 2, (8,), seed=6)
        x = np.array([0.2, -0.1])
        y = np.array([0.4, 0.3])
        jac = pol.input_jacobian_values(p, x, y)
        h = 1e-6
        z = np.concatenate([x, y])
        for j in range(4):
            zp = z.copy()
            zm = z.copy()
            zp[j] += h
            zm[j] -= h
            fd = (
                pol.act(p, zp[:2], zp[2:]) - pol.act(p, zm[:2], zm[2:])
            ) / (2 * h)
            np.testing.assert_allclose(jac[:, j], fd, rtol=1e-5, atol=1e-9)

    def test_relu_rejected(self):
        p = pol.init_policy(2, 2, 1, (4,), seed=0, activation="relu")
        with pytest.raises(UnsupportedConfigError):
            pol.input_jacobian_values(p, np.zeros(2), np.zeros(2))


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        p = pol.init_policy(2, 3, 2, (8, 4), seed=9)
        p.in_mean = np.random.default_rng(0).normal(size=5)
        p.in_std = np.abs(np.random.default_rng(1).normal(size=5)) + 0.5
        path = tmp_path / "ck.json"
        pol.save_policy(path, p, {"method": "bc", "epochs": 3})
        ck = pol.load_policy(path)
        q = ck.policy
        assert (q.m, q.d, q.n, q.hidden, q.activation, q.seed) == (
            p.m,
            p.d,
            p.n,
            p.hidden,
            p.activation,
            p.seed,
        )
        for wa, wb in zip(p.weights, q.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(p.biases, q.biases):
            assert np.array_equal(ba, bb)
        assert np.array_equal(p.in_mean, q.in_mean)
        assert np.array_equal(p.in_std, q.in_std)
        assert ck.metadata == {"method": "bc", "epochs": 3}

    def test_save_deterministic_bytes(self, tmp_path):
        p = pol.init_policy(2, 2, 1, (4,), seed=2)
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        pol.save_policy(a, p, {"k": 1})
        pol.save_policy(b, p, {"k": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(UnsupportedConfigError):
            pol.load_policy(path)
