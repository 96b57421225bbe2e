import numpy as np
import pytest

from milcount.bags import ShapeError
from milcount.model_mil import (
    MilDims,
    dims_of,
    init_mil_params,
    load_checkpoint,
    mil_backward,
    mil_forward,
    save_checkpoint,
    stable_softmax,
)
from milcount.rngstreams import stream
from milcount.training import weighted_log_mse


def numeric_grads(params, loss_fn, step=1e-5):
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            hi = loss_fn()
            p[idx] = orig - step
            lo = loss_fn()
            p[idx] = orig
            g[idx] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def assert_close_grads(analytic, numeric, tol=1e-4):
    for name in numeric:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        rel = np.abs(a - n) / denom
        assert rel.max() < tol, "%s: max rel err %.3g" % (name, rel.max())


def random_case(rng, gated):
    dims = MilDims(
        feature_dim=int(rng.integers(2, 7)),
        hidden=int(rng.integers(3, 9)),
        att_dim=int(rng.integers(2, 6)),
        gated=gated,
    )
    params = init_mil_params(dims, rng)
    n = int(rng.integers(1, 7))
    x = rng.standard_normal((n, dims.feature_dim))
    label = rng.integers(0, 5, size=14)
    weights = rng.uniform(0.5, 2.0, size=14)
    return params, x, label, weights


class TestGradients:
    @pytest.mark.parametrize("case", range(20))
    def test_finite_difference(self, case):
        rng = stream(100, "init", case)
        params, x, label, weights = random_case(rng, gated=bool(case % 2))

        def loss_fn():
            return weighted_log_mse(mil_forward(params, x).y, label, weights)[0]

        trace = mil_forward(params, x)
        _, dy = weighted_log_mse(trace.y, label, weights)
        analytic = mil_backward(params, trace, x, dy)
        assert_close_grads(analytic, numeric_grads(params, loss_fn))

    def test_dropout_path_gradient(self):
        # With a fixed mask the dropout scaling must appear in the gradients.
        rng = stream(200, "init")
        params, x, label, weights = random_case(rng, gated=False)
        trace = mil_forward(params, x, mode="train", rng=stream(200, "dropout"), dropout=0.5)
        _, dy = weighted_log_mse(trace.y, label, weights)
        grads = mil_backward(params, trace, x, dy)
        mask = trace.dropout_mask

        def loss_fn():
            t = mil_forward(params, x)
            y = params["W_out"] @ (t.z * mask / 0.5) + params["b_out"]
            return weighted_log_mse(y, label, weights)[0]

        assert_close_grads(grads, numeric_grads(params, loss_fn))


class TestPooling:
    def test_attention_weights_distribution(self):
        for case in range(10):
            rng = stream(300, "init", case)
            params, x, _, _ = random_case(rng, gated=bool(case % 2))
            a = mil_forward(params, x).a
            assert (a >= 0).all()
            assert abs(a.sum() - 1.0) < 1e-12

    def test_permutation_invariance(self):
        rng = stream(301, "init")
        params, x, _, _ = random_case(rng, gated=True)
        x = np.vstack([x, rng.standard_normal((4, x.shape[1]))])
        y = mil_forward(params, x).y
        for _ in range(5):
            perm = rng.permutation(x.shape[0])
            yp = mil_forward(params, x[perm]).y
            assert np.abs(yp - y).max() <= 1e-9 * max(1.0, np.abs(y).max())

    def test_softmax_shift_invariance(self):
        rng = stream(302, "init")
        s = rng.standard_normal(9) * 10
        base = stable_softmax(s)
        for shift in (-1e4, -3.7, 123.0, 1e4):
            assert np.abs(stable_softmax(s + shift) - base).max() < 1e-12

    def test_softmax_extreme_logits_finite(self):
        out = stable_softmax(np.array([1e6, 0.0, -1e6]))
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)

    def test_single_instance_bag(self):
        rng = stream(303, "init")
        params, x, _, _ = random_case(rng, gated=False)
        trace = mil_forward(params, x[:1])
        assert trace.a.shape == (1,)
        assert trace.a[0] == 1.0
        assert np.allclose(trace.z, trace.h[0])


class TestForwardShape:
    def test_rejects_bad_shapes(self):
        rng = stream(304, "init")
        params = init_mil_params(MilDims(feature_dim=4), rng)
        with pytest.raises(ShapeError):
            mil_forward(params, np.zeros((0, 4)))
        with pytest.raises(ShapeError):
            mil_forward(params, np.zeros((3, 5)))
        with pytest.raises(ShapeError):
            mil_forward(params, np.zeros(4))

    def test_train_mode_needs_rng(self):
        rng = stream(305, "init")
        params = init_mil_params(MilDims(feature_dim=4, hidden=5, att_dim=3), rng)
        with pytest.raises(ValueError):
            mil_forward(params, np.zeros((2, 4)), mode="train")

    def test_eval_deterministic(self):
        rng = stream(306, "init")
        params, x, _, _ = random_case(rng, gated=True)
        assert (mil_forward(params, x).y == mil_forward(params, x).y).all()


class TestInit:
    def test_bounds_and_biases(self):
        dims = MilDims(feature_dim=6, hidden=32, att_dim=16, gated=True)
        params = init_mil_params(dims, stream(307, "init"))
        assert set(params) == {"W_proj", "b_proj", "V", "w_att", "U", "W_out", "b_out"}
        assert (params["b_proj"] == 0).all() and (params["b_out"] == 0).all()
        assert np.abs(params["W_proj"]).max() <= np.sqrt(6.0 / 6)
        assert np.abs(params["V"]).max() <= np.sqrt(6.0 / 32)

    def test_seeded_reproducible(self):
        dims = MilDims(feature_dim=5)
        p1 = init_mil_params(dims, stream(1, "init"))
        p2 = init_mil_params(dims, stream(1, "init"))
        for k in p1:
            assert (p1[k] == p2[k]).all()


class TestCheckpoint:
    @pytest.mark.parametrize("gated", [False, True])
    def test_roundtrip_exact(self, tmp_path, gated):
        dims = MilDims(feature_dim=6, hidden=10, att_dim=4, gated=gated)
        params = init_mil_params(dims, stream(308, "init"))
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(params, path)
        back = load_checkpoint(path)
        assert set(back) == set(params)
        for k in params:
            assert (back[k] == params[k]).all()
        assert dims_of(back) == dims

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(ShapeError):
            load_checkpoint(str(path))
