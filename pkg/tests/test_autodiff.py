import numpy as np
import pytest

from plitex.engine import EncoderConfig, info_nce, init_params
from plitex.engine.autodiff import Tensor, conv2d, global_avg_pool, linear
from plitex.engine.nn import forward_model, wrap_params


def numeric_gradient(fn, values, h=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(values)
    for i in range(values.size):
        up = values.copy()
        up[i] += h
        down = values.copy()
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2 * h)
    return grad


def check_op(build, shape, rng, h=1e-6, tol=1e-6):
    x0 = rng.normal(size=shape)

    def value(flat):
        t = Tensor(flat.reshape(shape), requires_grad=True)
        return float(build(t).data)

    t = Tensor(x0.copy(), requires_grad=True)
    build(t).backward()
    numeric = numeric_gradient(value, x0.ravel())
    assert np.allclose(t.grad.ravel(), numeric, atol=tol)


class TestElementwiseGradients:
    def test_add_mul_broadcast(self, rng):
        b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)

        def build(t):
            return ((t * 2.0 + b) * t).sum()
        check_op(build, (4, 3), rng)

    def test_div_exp_log(self, rng):
        def build(t):
            return ((t * t + 2.0).log() / (t.exp() + 1.0)).sum()
        check_op(build, (5,), rng)

    def test_relu_sqrt_clip(self, rng):
        def build(t):
            return ((t * t + 0.5).sqrt().relu().clip_min(0.8)).sum()
        check_op(build, (6,), rng)

    def test_matmul_transpose(self, rng):
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def build(t):
            return (t @ w @ (t @ w).T).sum()
        check_op(build, (2, 3), rng)

    def test_reshape_mean_take(self, rng):
        idx = np.array([2, 0, 1, 0])

        def build(t):
            return t.reshape(4, 2).take(idx).mean()
        check_op(build, (8,), rng)

    def test_take_pairs(self, rng):
        rows = np.array([0, 1, 1])
        cols = np.array([1, 0, 2])

        def build(t):
            return (t.take_pairs(rows, cols) * np.array([1.0, 2.0, 3.0])).sum()
        check_op(build, (3, 3), rng)

    def test_unused_parameter_gets_zero(self, rng):
        a = Tensor(rng.normal(size=(3,)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        loss = (a * a).sum()
        loss.backward()
        assert b.grad is None  # not touched: no path to the loss
        assert np.allclose(a.grad, 2 * a.data)

    def test_diamond_reuse_accumulates(self, rng):
        def build(t):
            y = t * 3.0
            return (y * y + y).sum()
        check_op(build, (5,), rng)


class TestConvGradients:
    def test_conv2d_all_inputs(self, rng):
        x0 = rng.normal(size=(2, 3, 6, 6))
        w0 = rng.normal(size=(4, 3, 3, 3))
        b0 = rng.normal(size=(4,))

        def loss_given(x=None, w=None, b=None):
            xt = Tensor(x0 if x is None else x, requires_grad=x is not None)
            wt = Tensor(w0 if w is None else w, requires_grad=w is not None)
            bt = Tensor(b0 if b is None else b, requires_grad=b is not None)
            out = conv2d(xt, wt, bt, stride=2, padding=1)
            return (out * out).sum(), xt, wt, bt

        loss, xt, wt, bt = loss_given(x=x0, w=w0, b=b0)
        loss.backward()
        for t0, tensor in ((x0, xt), (w0, wt), (b0, bt)):
            def value(flat, ref=t0, which=tensor):
                kwargs = {"x": x0, "w": w0, "b": b0}
                if which is xt:
                    kwargs["x"] = flat.reshape(ref.shape)
                elif which is wt:
                    kwargs["w"] = flat.reshape(ref.shape)
                else:
                    kwargs["b"] = flat.reshape(ref.shape)
                return float(loss_given(**kwargs)[0].data)
            numeric = numeric_gradient(value, t0.ravel().copy(), h=1e-6)
            assert np.allclose(tensor.grad.ravel(), numeric, atol=1e-5)

    def test_global_avg_pool(self, rng):
        def build(t):
            return (global_avg_pool(t) ** 2 if False else
                    (global_avg_pool(t) * global_avg_pool(t)).sum())
        check_op(build, (2, 3, 4, 4), rng)

    def test_linear(self, rng):
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(2,)), requires_grad=True)

        def build(t):
            return (linear(t, w, b) * linear(t, w, b)).sum()
        check_op(build, (3, 4), rng)


class TestModelGradientCheck:
    def test_every_parameter_against_finite_differences(self, rng):
        """Full encoder + head + contrastive loss vs central differences."""
        config = EncoderConfig(conv_channels=(4, 6), hidden_dim=8,
                               head_hidden=5, head_out=3)
        params = init_params(config, seed=0)
        x = rng.normal(size=(4, 3, 8, 8))
        pairs = [(0, 2), (1, 3)]

        def loss_value(raw):
            tensors = wrap_params(raw, requires_grad=True)
            _, z = forward_model(tensors, Tensor(x), config)
            loss, _ = info_nce(z, pairs, tau=0.5)
            return loss, tensors

        loss, tensors = loss_value(params)
        loss.backward()
        h = 1e-4
        for name, base in params.items():
            flat = base.ravel()
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                for sign, out in ((1.0, 0), (-1.0, 1)):
                    pass
                up = {k: v.copy() for k, v in params.items()}
                up[name].ravel()[i] += h
                down = {k: v.copy() for k, v in params.items()}
                down[name].ravel()[i] -= h
                numeric[i] = (float(loss_value(up)[0].data)
                              - float(loss_value(down)[0].data)) / (2 * h)
            analytic = tensors[name].grad.ravel()
            # relative error with an absolute guard at the h^2 truncation scale
            err = np.abs(analytic - numeric)
            rel = err / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
            ok = (err < 1e-8) | (rel < 1e-4)
            assert ok.all(), f"{name}: max rel err {rel[~ok].max():.2e}"

    def test_gradient_of_scaled_temperature_consistent(self, rng):
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4,
                               head_out=3)
        params = init_params(config, seed=1)
        x = rng.normal(size=(4, 3, 8, 8))
        pairs = [(0, 2), (1, 3)]
        grads = {}
        for tau in (0.5, 1.0):
            tensors = wrap_params(params, requires_grad=True)
            _, z = forward_model(tensors, Tensor(x), config)
            loss, _ = info_nce(z, pairs, tau=tau)
            loss.backward()
            grads[tau] = {k: t.grad.copy() for k, t in tensors.items()}
        # different temperatures give genuinely different gradients,
        # each matching its own re-evaluated graph
        assert not np.allclose(grads[0.5]["head1.w"], grads[1.0]["head1.w"])
        for tau in (0.5, 1.0):
            def value(flat):
                up = {k: v.copy() for k, v in params.items()}
                up["head1.w"] = flat.reshape(params["head1.w"].shape)
                tensors = wrap_params(up, requires_grad=True)
                _, z = forward_model(tensors, Tensor(x), config)
                loss, _ = info_nce(z, pairs, tau=tau)
                return float(loss.data)
            numeric = numeric_gradient(value, params["head1.w"].ravel().copy(), h=1e-5)
            assert np.allclose(grads[tau]["head1.w"].ravel(), numeric, atol=1e-5)
