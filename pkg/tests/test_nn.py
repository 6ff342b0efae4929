import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgars.errors import DataFormatError, ShapeError
from qgars.nn import (
    Adam,
    LayerSpec,
    Network,
    cross_entropy_loss,
    load_network,
    mse_loss,
    save_network,
)


def finite_difference_grads(net, x, y, loss_fn, h=1e-4):
    """Central finite differences through a train-mode forward pass."""
    grads = []
    for p in net.param_arrays():
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(net.forward(x, train=True).output, y)
            flat[i] = orig - h
            lm, _ = loss_fn(net.forward(x, train=True).output, y)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a_list, b_list):
    a = np.concatenate([g.ravel() for g in a_list])
    b = np.concatenate([g.ravel() for g in b_list])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestForward:
    def test_identity_layer_passthrough(self):
        net = Network([LayerSpec(3, 3)], np.random.default_rng(0))
        net.layers[0].weight = np.eye(3)
        net.layers[0].bias = np.zeros(3)
        x = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_array_equal(net.forward(x).output, x)

    def test_zero_dropout_train_equals_eval(self):
        rng = np.random.default_rng(2)
        net = Network([LayerSpec(4, 5, "relu", dropout=0.0), LayerSpec(5, 2)], rng)
        x = rng.normal(size=(3, 4))
        train_out = net.forward(x, train=True, rng=rng).output
        eval_out = net.forward(x, train=False).output
        np.testing.assert_array_equal(train_out, eval_out)

    def test_golden_two_layer(self):
        rng = np.random.default_rng(3)
        net = Network([LayerSpec(2, 3, "relu"), LayerSpec(3, 2, "tanh")], rng)
        x = np.array([[0.5, -1.0]])
        # independent matrix arithmetic
        z1 = x @ net.layers[0].weight + net.layers[0].bias
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ net.layers[1].weight + net.layers[1].bias
        np.testing.assert_allclose(net.forward(x).output, np.tanh(z2), rtol=1e-15)

    def test_dimension_mismatch_names_layer(self):
        net = Network([LayerSpec(3, 2)], np.random.default_rng(0))
        with pytest.raises(ShapeError, match="layer 0"):
            net.forward(np.zeros((2, 4)))

    def test_bad_chain_rejected(self):
        with pytest.raises(ShapeError):
            Network([LayerSpec(3, 4), LayerSpec(5, 2)], np.random.default_rng(0))

    def test_dropout_scales_surviving_units(self):
        rng = np.random.default_rng(4)
        net = Network([LayerSpec(3, 200, "identity", dropout=0.5)], rng)
        x = np.ones((1, 3))
        out = net.forward(x, train=True, rng=np.random.default_rng(5)).output
        eval_out = net.forward(x, train=False).output
        kept = out != 0.0
        np.testing.assert_allclose(out[kept], 2.0 * eval_out[kept], rtol=1e-12)

    def test_batchnorm_eval_is_affine(self):
        rng = np.random.default_rng(6)
        net = Network([LayerSpec(3, 4, "identity", batch_norm=True)], rng)
        net.forward(rng.normal(size=(16, 3)), train=True)  # populate running stats
        x1 = rng.normal(size=(5, 3))
        x2 = rng.normal(size=(7, 3))
        both = net.forward(np.vstack([x1, x2])).output
        separate = np.vstack([net.forward(x1).output, net.forward(x2).output])
        np.testing.assert_allclose(both, separate, rtol=1e-12)


class TestBackward:
    def test_linear_mse_closed_form(self):
        rng = np.random.default_rng(7)
        net = Network([LayerSpec(3, 2)], rng)
        x = rng.normal(size=(1, 3))
        y = rng.normal(size=(1, 2))
        cache = net.forward(x, train=True)
        _, grad = mse_loss(cache.output, y)
        grads, _ = net.backward(cache, grad)
        np.testing.assert_allclose(grads[0], 2.0 * x.T @ (cache.output - y), rtol=1e-12)
        np.testing.assert_allclose(grads[1], (2.0 * (cache.output - y)).sum(axis=0), rtol=1e-12)

    def test_zero_loss_grad_gives_zero_param_grads(self):
        rng = np.random.default_rng(8)
        net = Network([LayerSpec(4, 3, "sigmoid"), LayerSpec(3, 2)], rng)
        cache = net.forward(rng.normal(size=(5, 4)), train=True)
        grads, gin = net.backward(cache, np.zeros((5, 2)))
        assert all(np.all(g == 0.0) for g in grads)
        assert np.all(gin == 0.0)

    def test_backward_without_forward_errors(self):
        net = Network([LayerSpec(2, 2)], np.random.default_rng(0))
        with pytest.raises(RuntimeError):
            net.backward(None, np.zeros((1, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences_random_nets(self, seed):
        rng = np.random.default_rng(seed)
        specs = [
            LayerSpec(4, 6, "relu", batch_norm=(seed % 2 == 0)),
            LayerSpec(6, 5, "tanh"),
            LayerSpec(5, 2, "sigmoid"),
        ]
        net = Network(specs, rng)
        x = rng.normal(size=(7, 4))
        y = rng.normal(size=(7, 2))
        cache = net.forward(x, train=True)
        _, grad = mse_loss(cache.output, y)
        analytic, _ = net.backward(cache, grad)
        numeric = finite_difference_grads(net, x, y, mse_loss)
        assert relative_error(analytic, numeric) < 1e-4

    def test_finite_differences_cross_entropy(self):
        rng = np.random.default_rng(21)
        net = Network([LayerSpec(3, 8, "relu"), LayerSpec(8, 2)], rng)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 2, 6)
        cache = net.forward(x, train=True)
        _, grad = cross_entropy_loss(cache.output, y)
        analytic, _ = net.backward(cache, grad)
        numeric = finite_difference_grads(net, x, y, cross_entropy_loss)
        assert relative_error(analytic, numeric) < 1e-4


class TestLosses:
    def test_mse_zero_when_equal(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        loss, grad = mse_loss(x, x)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_mse_unit_offset(self):
        pred = np.zeros((5, 7))
        target = pred - 1.0
        loss, _ = mse_loss(pred, target)
        assert loss == pytest.approx(7.0)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_ce_uniform_logits(self):
        loss, _ = cross_entropy_loss(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert loss == pytest.approx(math.log(2.0), rel=1e-12)

    def test_ce_saturated(self):
        logits = np.array([[20.0, 0.0], [0.0, 20.0]])
        loss, _ = cross_entropy_loss(logits, np.array([0, 1]))
        assert loss < 1e-8

    def test_ce_rejects_bad_labels(self):
        with pytest.raises(ShapeError):
            cross_entropy_loss(np.zeros((2, 2)), np.array([0, 2]))

    def test_ce_gradient_formula(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(5, 2))
        labels = rng.integers(0, 2, 5)
        _, grad = cross_entropy_loss(logits, labels)
        exp = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = exp / exp.sum(axis=1, keepdims=True)
        onehot = np.eye(2)[labels]
        np.testing.assert_allclose(grad, (probs - onehot) / 5, rtol=1e-12)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = [np.array([1.0, -2.0, 3.0])]
        opt = Adam(lr=0.1)
        opt.step(p, [np.zeros(3)])
        np.testing.assert_array_equal(p[0], [1.0, -2.0, 3.0])

    def test_first_step_direction(self):
        g = np.array([0.5, -0.25, 1e-3])
        p = [np.array([0.0, 0.0, 0.0])]
        opt = Adam(lr=0.01)
        opt.step(p, [g.copy()])
        np.testing.assert_allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_weight_decay_only_shrinks(self):
        p = [np.array([2.0, -4.0])]
        opt = Adam(lr=0.05, weight_decay=0.2)
        opt.step(p, [np.zeros(2)])
        np.testing.assert_allclose(p[0], np.array([2.0, -4.0]) * (1 - 0.05 * 0.2), rtol=1e-12)

    def test_training_decreases_loss(self):
        # smoke property: 100 Adam steps on 10 fixed samples shrink the loss
        # from its initial value on at least 4 of 5 seeds
        wins = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            net = Network([LayerSpec(3, 8, "tanh"), LayerSpec(8, 1)], rng)
            x = rng.normal(size=(10, 3))
            y = rng.normal(size=(10, 1))
            opt = Adam(lr=1e-3)
            first, _ = mse_loss(net.forward(x).output, y)
            for _ in range(100):
                cache = net.forward(x, train=True)
                _, grad = mse_loss(cache.output, y)
                grads, _ = net.backward(cache, grad)
                opt.step(net.param_arrays(), grads)
            last, _ = mse_loss(net.forward(x).output, y)
            wins += last < first
        assert wins >= 4


class TestParameterCount:
    def test_linear_classifier_paper(self):
        net = Network([LayerSpec(4768, 2)], np.random.default_rng(0))
        assert net.parameter_count() == 9538

    def test_mlp_paper(self):
        net = Network(
            [LayerSpec(12, 100, "relu"), LayerSpec(100, 100, "relu"), LayerSpec(100, 2)],
            np.random.default_rng(0),
        )
        assert net.parameter_count() == 11602

    def test_tiny(self):
        assert Network([LayerSpec(1, 1)], np.random.default_rng(0)).parameter_count() == 2

    def test_batch_norm_adds_two_per_feature(self):
        with_bn = Network([LayerSpec(3, 5, batch_norm=True)], np.random.default_rng(0))
        without = Network([LayerSpec(3, 5)], np.random.default_rng(0))
        assert with_bn.parameter_count() == without.parameter_count() + 10


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        net = Network(
            [LayerSpec(4, 6, "relu", batch_norm=True, dropout=0.25), LayerSpec(6, 2, "sigmoid")],
            rng,
        )
        net.forward(rng.normal(size=(8, 4)), train=True, rng=rng)
        path = tmp_path / "net.ckpt"
        save_network(path, net)
        other = load_network(path)
        for a, b in zip(net.param_arrays(), other.param_arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(net.layers[0].running_mean, other.layers[0].running_mean)
        assert np.array_equal(net.layers[0].running_var, other.layers[0].running_var)
        assert other.layers[0].spec.dropout == 0.25
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(net.forward(x).output, other.forward(x).output)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(DataFormatError):
            load_network(path)

    @given(st.integers(1, 5), st.integers(1, 5))
    @settings(max_examples=10, deadline=None)
    def test_round_trip_random_shapes(self, a, b):
        import tempfile

        rng = np.random.default_rng(a * 7 + b)
        net = Network([LayerSpec(a, b, "tanh")], rng)
        with tempfile.TemporaryDirectory() as tmp:
            path = f"{tmp}/n.ckpt"
            save_network(path, net)
            other = load_network(path)
        assert all(np.array_equal(x, y) for x, y in zip(net.param_arrays(), other.param_arrays()))
