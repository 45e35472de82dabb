"""Tests for error-dynamics assembly and the training losses.

The assembly oracle is a central finite difference of the closed-loop flow
F(x, y) = [f(x, pi(x,y)); g(x, y, pi(x,y))]: its Jacobian at a point IS the
error-dynamics matrix. Loss gradients are checked against finite
differences of the loss value over every network parameter.
"""

import numpy as np
import pytest

import stablebc.autodiff as ad
import stablebc.policy as pol
import stablebc.stability as stb
from stablebc.errors import DimensionError


def smooth_model():
    """Synthetic smooth dynamics with analytic jacobians (m=2, d=2, n=2).

    The control Jacobians are constant in u so loss finite differences stay
    comparable to backprop (the losses treat system Jacobians as constants
    of the current action).
    """

    def f(x, u):
        return np.array(
            [0.2 * x[1] + u[0] + 0.3 * u[1], -0.15 * x[0] * x[1] + 0.7 * u[1]]
        )

    def f_jac(x, u):
        dfdx = np.array([[0.0, 0.2], [-0.15 * x[1], -0.15 * x[0]]])
        dfdu = np.array([[1.0, 0.3], [0.0, 0.7]])
        return dfdx, dfdu

    def g(x, y, u):
        return np.array(
            [0.5 * (x[0] - y[0]) + 0.1 * u[1], np.sin(x[1]) - 0.8 * y[1] + 0.2 * u[0]]
        )

    def g_jac(x, y, u):
        dgdx = np.array([[0.5, 0.0], [0.0, np.cos(x[1])]])
        dgdy = np.array([[-0.5, 0.0], [0.0, -0.8]])
        dgdu = np.array([[0.0, 0.1], [0.2, 0.0]])
        return dgdx, dgdy, dgdu

    model = stb.SystemModel(m=2, d=2, n=2, f_jacobians=f_jac, g_jacobians=g_jac)
    return model, f, g


def fd_closed_loop_a(policy, f, g, x, y, h=1e-6):
    """Finite-difference Jacobian of the closed-loop flow at (x, y)."""
    p0 = np.concatenate([x, y])
    m = len(x)
    a = np.zeros((len(p0), len(p0)))
    for j in range(len(p0)):
        pp = p0.copy()
        pm = p0.copy()
        pp[j] += h
        pm[j] -= h
        up = pol.act(policy, pp[:m], pp[m:])
        um = pol.act(policy, pm[:m], pm[m:])
        fp = np.concatenate([f(pp[:m], up), g(pp[:m], pp[m:], up)])
        fm = np.concatenate([f(pm[:m], um), g(pm[:m], pm[m:], um)])
        a[:, j] = (fp - fm) / (2 * h)
    return a


class TestAssembly:
    def test_a_matches_closed_loop_fd(self):
        model, f, g = smooth_model()
        policy = pol.init_policy(2, 2, 2, (8, 8), seed=1)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=2)
            y = rng.normal(size=2)
            a = stb.assemble_a_values(model, policy, x, y)
            fd = fd_closed_loop_a(policy, f, g, x, y)
            np.testing.assert_allclose(a, fd, rtol=1e-5, atol=1e-7)

    def test_graph_assembly_matches_values(self):
        model, _, _ = smooth_model()
        policy = pol.init_policy(2, 2, 2, (8,), seed=2)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 2))
        y = rng.normal(size=(3, 2))
        graph = pol.graph(policy)
        graph.forward(np.hstack([x, y]))
        for i in range(3):
            node = stb.assemble_a(model, graph, i, x[i], y[i])
            direct = stb.assemble_a_values(model, policy, x[i], y[i])
            np.testing.assert_allclose(node.value, direct, rtol=1e-12)

    def test_a1_a2_are_top_blocks_of_a(self):
        model, _, _ = smooth_model()
        policy = pol.init_policy(2, 2, 2, (8,), seed=3)
        x = np.array([0.3, -0.4])
        y = np.array([0.1, 0.9])
        a = stb.assemble_a_values(model, policy, x, y)
        a1, a2 = stb.assemble_a1_a2_values(model, policy, x, y)
        np.testing.assert_allclose(a1, a[:2, :2], rtol=1e-14)
        np.testing.assert_allclose(a2, a[:2, 2:], rtol=1e-14)

    def test_default_action_is_policy_action(self):
        model, _, _ = smooth_model()
        policy = pol.init_policy(2, 2, 2, (8,), seed=4)
        x = np.array([0.5, 0.5])
        y = np.array([-0.2, 0.3])
        u = pol.act(policy, x, y)
        a_default = stb.assemble_a_values(model, policy, x, y)
        a_explicit = stb.assemble_a_values(model, policy, x, y, u=u)
        np.testing.assert_array_equal(a_default, a_explicit)

    def test_static_env_zero_bottom_band(self):
        model = stb.SystemModel(
            m=2,
            d=2,
            n=2,
            f_jacobians=lambda x, u: (np.diag([0.1, 0.2]), np.eye(2)),
            g_static=True,
        )
        policy = pol.init_policy(2, 2, 2, (8,), seed=5)
        a = stb.assemble_a_values(model, policy, np.zeros(2), np.ones(2))
        assert np.array_equal(a[2:, :], np.zeros((2, 4)))


def loss_fd_check(build, policy, rel=1e-4, abs_tol=1e-6, h=1e-5):
    """Compare backward grads of build() against FD over all parameters."""
    bundle = build()
    store = ad.backward(bundle.total)
    params = bundle.graph.params()
    arrays = [policy.weights[0], policy.biases[0], policy.weights[1], policy.biases[1]]
    for node, arr in zip(params, arrays):
        got = store.of(node).reshape(arr.shape)
        fd = np.zeros_like(arr)
        for idx in np.ndindex(*arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = build().total_value
            arr[idx] = orig - h
            fm = build().total_value
            arr[idx] = orig
            fd[idx] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(got, fd, rtol=rel, atol=abs_tol)


class TestLosses:
    def setup_method(self):
        self.model, _, _ = smooth_model()
        self.policy = pol.init_policy(2, 2, 2, (8,), seed=6)
        rng = np.random.default_rng(7)
        self.x = rng.normal(size=(4, 2))
        self.y = rng.normal(size=(4, 2))
        self.u = rng.normal(size=(4, 2))

    def test_bc_loss_value(self):
        bundle = stb.build_bc_loss(self.policy, self.x, self.y, self.u)
        pred = np.vstack(
            [pol.act(self.policy, self.x[i], self.y[i]) for i in range(4)]
        )
        expected = np.sum((pred - self.u) ** 2)
        assert bundle.total_value == pytest.approx(expected, rel=1e-12)
        assert bundle.bc_value == bundle.total_value

    def test_bc_grad_matches_fd(self):
        loss_fd_check(
            lambda: stb.build_bc_loss(self.policy, self.x, self.y, self.u),
            self.policy,
        )

    def test_model_based_grad_matches_fd(self):
        bundle = stb.build_model_based_loss(
            self.policy, self.model, self.x, self.y, self.u, lam=0.5
        )
        assert bundle.skipped == 0
        loss_fd_check(
            lambda: stb.build_model_based_loss(
                self.policy, self.model, self.x, self.y, self.u, lam=0.5
            ),
            self.policy,
        )

    def test_model_free_grad_matches_fd(self):
        bundle = stb.build_model_free_loss(
            self.policy, self.model, self.x, self.y, self.u, lam1=0.4, lam2=0.6
        )
        assert bundle.skipped == 0
        assert bundle.penalty_norm is not None
        loss_fd_check(
            lambda: stb.build_model_free_loss(
                self.policy, self.model, self.x, self.y, self.u, lam1=0.4, lam2=0.6
            ),
            self.policy,
        )

    def test_zero_lambda_identical_to_bc(self):
        plain = stb.build_bc_loss(self.policy, self.x, self.y, self.u)
        mb = stb.build_model_based_loss(
            self.policy, self.model, self.x, self.y, self.u, lam=0.0
        )
        mf = stb.build_model_free_loss(
            self.policy, self.model, self.x, self.y, self.u, lam1=0.0, lam2=0.0
        )
        assert mb.total_value == plain.total_value
        assert mf.total_value == plain.total_value
        assert mb.penalty_eig is None and mf.penalty_eig is None
        g_plain = ad.backward(plain.total)
        g_mb = ad.backward(mb.total)
        for p_node, m_node in zip(plain.graph.params(), mb.graph.params()):
            assert np.array_equal(g_plain.of(p_node), g_mb.of(m_node))

    def test_model_based_total_decomposition(self):
        lam = 0.37
        bundle = stb.build_model_based_loss(
            self.policy, self.model, self.x, self.y, self.u, lam=lam
        )
        assert bundle.total_value == pytest.approx(
            bundle.bc_value + lam * bundle.penalty_eig_value, rel=1e-12
        )

    def test_model_free_total_decomposition(self):
        bundle = stb.build_model_free_loss(
            self.policy, self.model, self.x, self.y, self.u, lam1=0.2, lam2=0.3
        )
        assert bundle.total_value == pytest.approx(
            bundle.bc_value
            + 0.2 * bundle.penalty_norm_value
            + 0.3 * bundle.penalty_eig_value,
            rel=1e-12,
        )

    def test_static_fast_path_matches_full_assembly(self):
        # static environment: penalty of the full (block-triangular) A must
        # equal the penalty of A1, in value and in parameter gradients
        f_jac = lambda x, u: (np.array([[0.6, 0.1], [0.0, 0.4]]), np.eye(2))
        static = stb.SystemModel(m=2, d=2, n=2, f_jacobians=f_jac, g_static=True)
        general = stb.SystemModel(
            m=2,
            d=2,
            n=2,
            f_jacobians=f_jac,
            g_jacobians=lambda x, y, u: (np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))),
        )
        fast = stb.build_model_based_loss(
            self.policy, static, self.x, self.y, self.u, lam=0.5
        )
        full = stb.build_model_based_loss(
            self.policy, general, self.x, self.y, self.u, lam=0.5
        )
        assert fast.skipped == 0 and full.skipped == 0
        assert fast.penalty_eig_value == pytest.approx(
            full.penalty_eig_value, rel=1e-9, abs=1e-11
        )
        g_fast = ad.backward(fast.total)
        g_full = ad.backward(full.total)
        for a_node, b_node in zip(fast.graph.params(), full.graph.params()):
            np.testing.assert_allclose(
                g_fast.of(a_node), g_full.of(b_node), rtol=1e-7, atol=1e-10
            )

    def test_degenerate_penalty_skipped_and_counted(self):
        # zero control Jacobian makes A2 identically zero: the spectral term
        # is non-differentiable at every sample, so all penalties drop
        zero_ctrl = stb.SystemModel(
            m=2,
            d=2,
            n=2,
            f_jacobians=lambda x, u: (np.diag([0.5, 0.7]), np.zeros((2, 2))),
        )
        bundle = stb.build_model_free_loss(
            self.policy, zero_ctrl, self.x, self.y, self.u, lam1=0.3, lam2=0.2
        )
        assert bundle.skipped == 4
        assert bundle.penalty_norm is None and bundle.penalty_eig is None
        plain = stb.build_bc_loss(self.policy, self.x, self.y, self.u)
        assert bundle.total_value == plain.total_value

    def test_model_free_on_modelless_system(self):
        no_g = stb.SystemModel(
            m=2, d=2, n=2, f_jacobians=self.model.f_jacobians, g_jacobians=None
        )
        assert not no_g.model_based
        bundle = stb.build_model_free_loss(
            self.policy, no_g, self.x, self.y, self.u, lam1=0.1, lam2=0.1
        )
        assert bundle.total_value > 0

    def test_model_based_requires_g(self):
        no_g = stb.SystemModel(
            m=2, d=2, n=2, f_jacobians=self.model.f_jacobians, g_jacobians=None
        )
        with pytest.raises(DimensionError):
            stb.build_model_based_loss(
                self.policy, no_g, self.x, self.y, self.u, lam=0.1
            )

    def test_batch_shape_errors(self):
        with pytest.raises(DimensionError):
            stb.build_model_based_loss(
                self.policy, self.model, self.x[:, :1], self.y, self.u, lam=0.1
            )
        with pytest.raises(DimensionError):
            stb.build_model_free_loss(
                self.policy,
                self.model,
                self.x[:2],
                self.y[:3],
                self.u[:2],
                lam1=0.1,
                lam2=0.1,
            )
        with pytest.raises(DimensionError):
            stb.build_model_based_loss(
                self.policy,
                self.model,
                np.full((2, 2), np.nan),
                self.y[:2],
                self.u[:2],
                lam=0.1,
            )
