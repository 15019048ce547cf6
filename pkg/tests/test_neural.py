"""Neural runtime: layer forwards against naive oracles, exact gradients."""

import numpy as np
import pytest

from targetvoice import neural as nn
from tests.conftest import finite_difference_params


def layer_loss(layer, x, probe):
    """Scalar loss sum(forward(x) * probe) for gradient checking."""
    return float(np.sum(layer.forward(x) * probe))


def check_layer_gradients(layer, x, seed=0):
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grads()
    y = layer.forward(x)
    dx = layer.backward(probe)
    grads = {k: v.copy() for k, v in layer.grads().items()}
    worst = finite_difference_params(
        lambda: layer_loss(layer, x, probe), layer.params(), grads, rng
    )
    # input gradient via finite differences too
    flat = x.ravel()
    for i in rng.choice(x.size, size=10, replace=False):
        orig = flat[i]
        flat[i] = orig + 1e-5
        up = layer_loss(layer, x, probe)
        flat[i] = orig - 1e-5
        down = layer_loss(layer, x, probe)
        flat[i] = orig
        numeric = (up - down) / 2e-5
        rel = abs(numeric - dx.ravel()[i]) / max(abs(numeric), abs(dx.ravel()[i]), 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------


class TestDense:
    def test_identity_weights(self):
        layer = nn.Dense(4, 4, "linear", np.random.default_rng(0))
        layer.W[...] = np.eye(4)
        layer.b[...] = 0
        x = np.random.default_rng(1).standard_normal((3, 4))
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_sigmoid_at_zero(self):
        layer = nn.Dense(4, 2, "sigmoid", np.random.default_rng(0))
        layer.b[...] = 0
        assert np.all(layer.forward(np.zeros((1, 4))) == 0.5)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        layer = nn.Dense(5, 3, "tanh", rng)
        x = rng.standard_normal((4, 5))
        y = layer.forward(x)
        expected = np.empty((4, 3))
        for t in range(4):
            for j in range(3):
                acc = layer.b[j]
                for i in range(5):
                    acc += x[t, i] * layer.W[i, j]
                expected[t, j] = np.tanh(acc)
        np.testing.assert_allclose(y, expected, atol=1e-6)

    def test_zero_upstream_gradient_zero_param_grads(self):
        rng = np.random.default_rng(11)
        for layer in (nn.Dense(4, 3, "tanh", rng),
                      nn.CausalConv1d(4, 3, 3, "tanh", rng),
                      nn.GRU(4, 3, rng)):
            x = rng.standard_normal((2, 5, 4))
            layer.zero_grads()
            y = layer.forward(x)
            dx = layer.backward(np.zeros_like(y))
            assert np.all(dx == 0)
            for g in layer.grads().values():
                assert np.all(g == 0)

    def test_linear_gradient_is_outer_product(self):
        rng = np.random.default_rng(3)
        layer = nn.Dense(4, 3, "linear", rng)
        x = rng.standard_normal((1, 4))
        dy = rng.standard_normal((1, 3))
        layer.zero_grads()
        layer.forward(x)
        layer.backward(dy)
        np.testing.assert_allclose(layer.dW, np.outer(x[0], dy[0]), atol=1e-12)

    @pytest.mark.parametrize("activation", ["linear", "tanh", "sigmoid"])
    def test_gradients(self, activation):
        rng = np.random.default_rng(5)
        layer = nn.Dense(6, 4, activation, rng)
        x = rng.standard_normal((2, 7, 6))
        assert check_layer_gradients(layer, x) < 1e-4

    def test_shape_mismatch(self):
        layer = nn.Dense(4, 2, "linear", np.random.default_rng(0))
        with pytest.raises(nn.ShapeError):
            layer.forward(np.zeros((3, 5)))

    def test_backward_before_forward(self):
        layer = nn.Dense(4, 2, "linear", np.random.default_rng(0))
        with pytest.raises(RuntimeError, match="before forward"):
            layer.backward(np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# Causal conv
# ---------------------------------------------------------------------------


class TestCausalConv1d:
    def test_kernel1_identity(self):
        layer = nn.CausalConv1d(3, 3, 1, "linear", np.random.default_rng(0))
        layer.W[0] = np.eye(3)
        layer.b[...] = 0
        x = np.random.default_rng(1).standard_normal((2, 6, 3))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-12)

    def test_impulse_reveals_taps(self):
        rng = np.random.default_rng(2)
        layer = nn.CausalConv1d(1, 1, 4, "linear", rng)
        layer.b[...] = 0
        x = np.zeros((1, 10, 1))
        x[0, 3, 0] = 1.0
        y = layer.forward(x)[0, :, 0]
        expected = np.zeros(10)
        expected[3:7] = layer.W[:, 0, 0]
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_direct_convolution_oracle(self):
        rng = np.random.default_rng(3)
        layer = nn.CausalConv1d(2, 3, 3, "tanh", rng)
        x = rng.standard_normal((1, 8, 2))
        y = layer.forward(x)
        for t in range(8):
            acc = layer.b.copy()
            for k in range(3):
                if t - k >= 0:
                    acc = acc + x[0, t - k] @ layer.W[k]
            np.testing.assert_allclose(y[0, t], np.tanh(acc), atol=1e-10)

    def test_causality(self):
        rng = np.random.default_rng(4)
        layer = nn.CausalConv1d(3, 3, 3, "tanh", rng)
        x = rng.standard_normal((1, 10, 3))
        perturbed = x.copy()
        perturbed[0, 6] += 1.0
        y0, y1 = layer.forward(x), layer.forward(perturbed)
        np.testing.assert_array_equal(y0[0, :6], y1[0, :6])
        assert not np.allclose(y0[0, 6:], y1[0, 6:])

    def test_preserves_time_length(self):
        layer = nn.CausalConv1d(3, 5, 5, "tanh", np.random.default_rng(0))
        assert layer.forward(np.zeros((2, 17, 3))).shape == (2, 17, 5)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        layer = nn.CausalConv1d(4, 3, 3, "tanh", rng)
        x = rng.standard_normal((2, 9, 4))
        assert check_layer_gradients(layer, x) < 1e-4


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


class TestGRU:
    def test_zero_weights_zero_state(self):
        layer = nn.GRU(3, 4, np.random.default_rng(0))
        for p in layer.params().values():
            p[...] = 0.0
        y = layer.forward(np.random.default_rng(1).standard_normal((1, 5, 3)))
        assert np.all(y == 0)

    def test_closed_update_gate_keeps_state(self):
        layer = nn.GRU(3, 4, np.random.default_rng(2))
        layer.b[:4] = -60.0  # z ~ 0
        h_prev = 0.5 * np.random.default_rng(3).standard_normal(4)
        h_new = layer.step(np.random.default_rng(4).standard_normal(3), h_prev)
        np.testing.assert_allclose(h_new, h_prev, atol=1e-6)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(5)
        layer = nn.GRU(3, 2, rng)
        x_t = rng.standard_normal(3)
        h = rng.standard_normal(2) * 0.5
        got = layer.step(x_t, h)

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        n = 2
        expected = np.empty(2)
        for j in range(n):
            gz = layer.b[j] + sum(x_t[i] * layer.Wx[i, j] for i in range(3)) \
                + sum(h[i] * layer.Wh[i, j] for i in range(2))
            gr = layer.b[n + j] + sum(x_t[i] * layer.Wx[i, n + j] for i in range(3)) \
                + sum(h[i] * layer.Wh[i, n + j] for i in range(2))
            z, r = sigmoid(gz), sigmoid(gr)
            gn = layer.b[2 * n + j] + sum(x_t[i] * layer.Wx[i, 2 * n + j] for i in range(3)) \
                + r * sum(h[i] * layer.Wh[i, 2 * n + j] for i in range(2))
            expected[j] = (1 - z) * h[j] + z * np.tanh(gn)
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_sequence_forward_equals_stepping(self):
        rng = np.random.default_rng(6)
        layer = nn.GRU(3, 4, rng)
        x = rng.standard_normal((1, 7, 3))
        seq = layer.forward(x)[0]
        h = np.zeros(4)
        for t in range(7):
            h = layer.step(x[0, t], h)
            np.testing.assert_allclose(seq[t], h, atol=1e-12)

    def test_state_bounded_over_many_random_steps(self):
        rng = np.random.default_rng(7)
        layer = nn.GRU(8, 8, rng)
        h = np.zeros(8)
        peak = 0.0
        for chunk in range(100):
            xs = rng.standard_normal((1000, 8)) * 3.0
            for x_t in xs:
                h = layer.step(x_t, h)
            peak = max(peak, float(np.max(np.abs(h))))
        assert peak <= 1.0
        assert np.all(np.isfinite(h))

    def test_gradients(self):
        rng = np.random.default_rng(8)
        layer = nn.GRU(5, 4, rng)
        x = rng.standard_normal((2, 6, 5))
        assert check_layer_gradients(layer, x) < 1e-4

    def test_composed_stack_gradients(self):
        rng = np.random.default_rng(9)
        conv = nn.CausalConv1d(4, 5, 3, "tanh", rng, "c")
        gru = nn.GRU(5, 4, rng, "g")
        dense = nn.Dense(4, 2, "sigmoid", rng, "d")
        layers = [conv, gru, dense]
        x = rng.standard_normal((2, 6, 4))
        probe = rng.standard_normal((2, 6, 2))

        def loss():
            h = x
            for layer in layers:
                h = layer.forward(h)
            return float(np.sum(h * probe))

        for layer in layers:
            layer.zero_grads()
        value = loss()
        d = probe
        for layer in reversed(layers):
            d = layer.backward(d)
        grads = {}
        params = {}
        for layer in layers:
            grads.update({k: v.copy() for k, v in layer.grads().items()})
            params.update(layer.params())
        worst = finite_difference_params(loss, params, grads,
                                         np.random.default_rng(10))
        assert worst < 1e-4


# ---------------------------------------------------------------------------
# Adam, determinism
# ---------------------------------------------------------------------------


class TestAdam:
    def test_descends_quadratic(self):
        p = {"w": np.array([5.0, -3.0])}
        opt = nn.Adam(p, lr=0.05)
        for _ in range(500):
            opt.step({"w": 2.0 * p["w"]})
        np.testing.assert_allclose(p["w"], 0.0, atol=1e-2)

    def test_clips_global_norm(self):
        p = {"w": np.zeros(4)}
        opt = nn.Adam(p, clip_norm=5.0)
        norm = opt.step({"w": np.full(4, 100.0)})
        assert norm == pytest.approx(200.0)
        assert np.all(np.isfinite(p["w"]))

    def test_deterministic_initialization(self):
        a = nn.GRU(6, 5, np.random.default_rng(42))
        b = nn.GRU(6, 5, np.random.default_rng(42))
        for pa, pb in zip(a.params().values(), b.params().values()):
            np.testing.assert_array_equal(pa, pb)

    def test_duplicate_param_names_rejected(self):
        layers = [nn.Dense(2, 2, name="same"), nn.Dense(2, 2, name="same")]
        with pytest.raises(ValueError, match="duplicate"):
            nn.collect_params(layers)
