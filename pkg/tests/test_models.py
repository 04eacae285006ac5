import math

import numpy as np
import pytest

from kanfed import models
from kanfed.errors import ConfigurationError, InternalError
from kanfed.models import (
    KIND_MLP,
    KIND_RBF,
    KIND_SPLINE,
    MODEL_KINDS,
    ModelConfig,
    ModelState,
    backward,
    default_config,
    forward,
    init_params,
    load_state,
    param_count,
    save_state,
)
from kanfed.numerics import RngStream, silu, softmax_cross_entropy

from conftest import rel_err


def small_config(kind, widths=(6, 3, 2)):
    return ModelConfig(kind=kind, layer_widths=widths)


def loss_of(state, x, y):
    logits, _ = forward(state, x)
    return softmax_cross_entropy(logits, y)[0]


def fd_param_grad(state, x, y, h=1e-5):
    out = np.zeros_like(state.params)
    for i in range(len(state.params)):
        state.params[i] += h
        lp = loss_of(state, x, y)
        state.params[i] -= 2 * h
        lm = loss_of(state, x, y)
        state.params[i] += h
        out[i] = (lp - lm) / (2 * h)
    return out


def fd_input_grad(state, x, y, h=1e-5):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            x[i, j] += h
            lp = loss_of(state, x, y)
            x[i, j] -= 2 * h
            lm = loss_of(state, x, y)
            x[i, j] += h
            out[i, j] = (lp - lm) / (2 * h)
    return out


class TestParamCount:
    def test_paper_architectures(self):
        assert param_count(default_config(KIND_MLP)) == 199_210
        assert param_count(default_config(KIND_SPLINE)) == 196_320
        assert param_count(default_config(KIND_RBF)) == 178_410

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_closed_form(self, kind):
        cfg = ModelConfig(kind=kind, layer_widths=(7, 5, 3))
        expected = 0
        for i, o in [(7, 5), (5, 3)]:
            if kind == KIND_MLP:
                expected += i * o + o
            elif kind == KIND_SPLINE:
                expected += i * o * (cfg.grid_size + cfg.spline_order) + 2 * i * o
            else:
                expected += 2 * i + cfg.num_centers * i * o + i * o + o
        assert param_count(cfg) == expected

    def test_layout_contiguous(self):
        for kind in MODEL_KINDS:
            layout = models.build_layout(default_config(kind))
            pos = 0
            for name, shape, offset in layout:
                assert offset == pos
                pos += int(np.prod(shape))


class TestInit:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_deterministic(self, kind):
        cfg = small_config(kind)
        a = init_params(cfg, RngStream(9))
        b = init_params(cfg, RngStream(9))
        assert np.array_equal(a.params, b.params)

    def test_spline_path_starts_small(self):
        cfg = small_config(KIND_SPLINE, (10, 8, 4))
        state = init_params(cfg, RngStream(11))
        x = RngStream(12).gen.uniform(-1, 1, (64, 10))
        grid = cfg.spline_grid()
        from kanfed.splines import bspline_basis

        wb = state.view("l0.base_weight")
        ws = state.view("l0.spline_weight")
        sc = state.view("l0.spline_scaler")
        base = silu(x) @ wb.T
        bas = bspline_basis(x, grid)
        scaled = (ws * sc[:, :, None]).reshape(8, -1)
        spline = bas.reshape(64, -1) @ scaled.T
        assert np.abs(spline).mean() < np.abs(base).mean()


class TestForward:
    def test_mlp_zero_params(self):
        cfg = small_config(KIND_MLP, (4, 3, 10))
        state = ModelState(cfg, np.zeros(param_count(cfg)))
        x = RngStream(1).gen.uniform(-1, 1, (5, 4))
        logits, _ = forward(state, x)
        assert np.all(logits == 0.0)
        loss, _ = softmax_cross_entropy(logits, np.zeros(5, dtype=int))
        assert abs(loss - math.log(10)) < 1e-12

    def test_mlp_single_hidden_unit_hand_example(self):
        cfg = ModelConfig(kind=KIND_MLP, layer_widths=(1, 1, 1))
        state = ModelState(cfg, np.zeros(param_count(cfg)))
        state.view("l0.weight")[:] = 2.0
        state.view("l0.bias")[:] = -1.0
        state.view("l1.weight")[:] = 3.0
        state.view("l1.bias")[:] = 0.5
        logits, _ = forward(state, np.array([[2.0]]))
        # relu(2*2 - 1) * 3 + 0.5 = 9.5
        assert abs(logits[0, 0] - 9.5) < 1e-15
        logits, _ = forward(state, np.array([[-1.0]]))
        assert abs(logits[0, 0] - 0.5) < 1e-15  # hidden unit clamped at 0

    def test_spline_zero_weights_equals_silu_linear(self):
        cfg = small_config(KIND_SPLINE, (5, 4, 3))
        state = init_params(cfg, RngStream(2))
        state.view("l0.spline_weight")[:] = 0.0
        state.view("l0.spline_scaler")[:] = 0.0
        state.view("l1.spline_weight")[:] = 0.0
        state.view("l1.spline_scaler")[:] = 0.0
        x = RngStream(3).gen.uniform(-1, 1, (6, 5))
        logits, _ = forward(state, x)
        h = silu(x) @ state.view("l0.base_weight").T
        oracle = silu(h) @ state.view("l1.base_weight").T
        assert np.abs(logits - oracle).max() < 1e-12

    def test_rows_independent(self):
        for kind in MODEL_KINDS:
            state = init_params(small_config(kind), RngStream(4))
            row = RngStream(5).gen.uniform(-1, 1, (1, 6))
            batch = np.repeat(row, 4, axis=0)
            logits, _ = forward(state, batch)
            assert np.abs(logits - logits[0]).max() < 1e-12

    def test_pure_function_of_params_and_batch(self):
        for kind in MODEL_KINDS:
            state = init_params(small_config(kind), RngStream(6))
            x = RngStream(7).gen.uniform(-1, 1, (3, 6))
            a, _ = forward(state, x)
            b, _ = forward(state, x)
            assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        state = init_params(small_config(KIND_SPLINE), RngStream(8))
        with pytest.raises(ConfigurationError):
            forward(state, np.zeros((2, 7)))

    def test_rbf_layernorm_identity(self):
        x = RngStream(9).gen.uniform(-3, 3, (10, 20))
        zhat, _ = models._layernorm(x)
        assert np.abs(zhat.mean(axis=1)).max() < 1e-9
        assert np.abs(zhat.var(axis=1) - 1.0).max() < 1e-9

    def test_rbf_center_hit_gives_unit_activation(self):
        cfg = small_config(KIND_RBF, (4, 3, 2))
        centers = cfg.rbf_centers()
        # phi is exp(-((z - c)/h)^2): exactly 1 when z equals the center
        z = np.full((1, 4), centers[2])
        u = (z[:, :, None] - centers) / cfg.rbf_bandwidth()
        phi = np.exp(-(u**2))
        assert np.all(phi[0, :, 2] == 1.0)


class TestBackward:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_full_gradient_check(self, kind):
        cfg = small_config(kind, (6, 3, 2))
        state = init_params(cfg, RngStream(20))
        gen = RngStream(21).gen
        x = gen.uniform(-2, 2, (5, 6))
        y = gen.integers(0, 2, 5)
        logits, cache = forward(state, x)
        _, gl = softmax_cross_entropy(logits, y)
        g, gx = backward(state, cache, gl)
        assert rel_err(g, fd_param_grad(state, x, y)) < 1e-5
        assert rel_err(gx, fd_input_grad(state, x, y)) < 1e-5

    def test_zero_upstream_gradient(self):
        for kind in MODEL_KINDS:
            state = init_params(small_config(kind), RngStream(22))
            x = RngStream(23).gen.uniform(-1, 1, (3, 6))
            _, cache = forward(state, x)
            g, gx = backward(state, cache, np.zeros((3, 2)))
            assert np.all(g == 0.0) and np.all(gx == 0.0)

    def test_duplicated_batch_matches_single_row(self):
        for kind in MODEL_KINDS:
            state = init_params(small_config(kind), RngStream(24))
            row = RngStream(25).gen.uniform(-1, 1, (1, 6))
            y1 = np.array([1])
            logits, cache = forward(state, row)
            _, gl = softmax_cross_entropy(logits, y1)
            g1, _ = backward(state, cache, gl)
            batch = np.repeat(row, 4, axis=0)
            logits, cache = forward(state, batch)
            _, gl = softmax_cross_entropy(logits, np.repeat(y1, 4))
            g4, _ = backward(state, cache, gl)
            assert rel_err(g1, g4, floor=1e-9) < 1e-9

    def test_single_coefficient_perturbation(self):
        cfg = small_config(KIND_SPLINE, (6, 3, 2))
        state = init_params(cfg, RngStream(26))
        gen = RngStream(27).gen
        x = gen.uniform(-1, 1, (4, 6))
        y = gen.integers(0, 2, 4)
        logits, cache = forward(state, x)
        loss0, gl = softmax_cross_entropy(logits, y)
        g, _ = backward(state, cache, gl)
        idx = 17
        eps = 1e-6
        state.params[idx] += eps
        loss1 = loss_of(state, x, y)
        assert abs((loss1 - loss0) - eps * g[idx]) < 10 * eps**2

    def test_stale_cache_rejected(self):
        state = init_params(small_config(KIND_MLP), RngStream(28))
        other = init_params(small_config(KIND_MLP), RngStream(29))
        x = np.zeros((2, 6))
        _, cache = forward(state, x)
        with pytest.raises(InternalError):
            backward(other, cache, np.zeros((2, 2)))


class TestSerialization:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_byte_exact_round_trip(self, kind, tmp_path):
        state = init_params(small_config(kind), RngStream(30))
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_state(state, p1)
        loaded = load_state(p1)
        assert loaded.config == state.config
        assert np.array_equal(loaded.params, state.params)
        save_state(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
