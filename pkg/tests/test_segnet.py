import numpy as np
import pytest

from scarseg.errors import FormatError
from scarseg.numcore import AdamState, PrngStream
from scarseg.segnet import (
    ARCH,
    PARAM_COUNT,
    ModelParams,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def _params(seed=0):
    return init_params(PrngStream(seed, 7))


def _input(seed=0, size=8):
    rng = np.random.default_rng(seed)
    img = rng.random((1, size, size))
    myo = (rng.random((1, size, size)) < 0.5).astype(np.float64)
    return img, myo


class TestInit:
    def test_biases_zero(self):
        params = _params()
        for b in params.biases:
            assert np.all(b == 0.0)

    def test_kernel_bounds_follow_fan_in(self):
        params = _params()
        for (name, (cout, cin, kh, kw)), w in zip(ARCH, params.kernels):
            bound = np.sqrt(6.0 / (cin * kh * kw))
            assert w.shape == (cout, cin, kh, kw)
            assert np.all(w > -bound) and np.all(w < bound)

    def test_conv1_bound_value(self):
        # fan_in = 2*3*3 = 18
        w1 = _params().kernels[0]
        bound = np.sqrt(6.0 / 18.0)
        assert np.abs(w1).max() < bound

    def test_same_seed_identical(self):
        a = init_params(PrngStream(5, 7))
        b = init_params(PrngStream(5, 7))
        for ta, tb in zip(a.tensors, b.tensors):
            assert np.array_equal(ta, tb)

    def test_parameter_count_constant(self):
        assert PARAM_COUNT == 7121
        assert _params().flat().size == PARAM_COUNT


class TestForward:
    def test_zero_params_give_half(self):
        params = ModelParams.from_flat(np.zeros(PARAM_COUNT))
        img, myo = _input(size=64)
        yhat, _ = forward(params, img, myo)
        assert np.all(yhat == 0.5)

    def test_output_shape_and_range(self):
        img, myo = _input(1, size=64)
        yhat, _ = forward(_params(1), img, myo)
        assert yhat.shape == (1, 64, 64)
        assert np.all((yhat > 0.0) & (yhat < 1.0))

    def test_deterministic(self):
        img, myo = _input(2, size=16)
        a, _ = forward(_params(2), img, myo)
        b, _ = forward(_params(2), img, myo)
        assert np.array_equal(a, b)

    def test_depends_on_both_channels(self):
        params = _params(3)
        img, myo = _input(3, size=16)
        base, _ = forward(params, img, myo)
        bumped_img, _ = forward(params, img + 0.01, myo)
        flipped_myo, _ = forward(params, img, 1.0 - myo)
        assert not np.array_equal(base, bumped_img)
        assert not np.array_equal(base, flipped_myo)

    def test_shape_validation(self):
        params = _params()
        with pytest.raises(ValueError):
            forward(params, np.zeros((1, 8, 8)), np.zeros((1, 8, 4)))
        with pytest.raises(ValueError):
            forward(params, np.zeros((8, 8)), np.zeros((8, 8)))
        with pytest.raises(ValueError):
            forward_batch(params, np.zeros((1, 3, 8, 8)))
        with pytest.raises(ValueError):
            forward_batch(params, np.zeros((1, 2, 6, 6)))  # not a multiple of 4

    def test_batch_matches_single(self):
        params = _params(4)
        imgs = [_input(s, size=16) for s in range(3)]
        x = np.stack([np.stack([im[0], my[0]]) for im, my in imgs])
        batch_y, _ = forward_batch(params, x)
        for k, (im, my) in enumerate(imgs):
            single, _ = forward(params, im, my)
            assert np.allclose(batch_y[k, 0], single[0], rtol=1e-12, atol=1e-14)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        params = _params(5)
        img, myo = _input(5)
        yhat, trace = forward(params, img, myo)
        grads = backward(params, trace, np.zeros_like(yhat))
        for g in grads:
            assert np.all(g == 0.0)

    def test_gradient_shapes_mirror_parameters(self):
        params = _params(6)
        img, myo = _input(6)
        yhat, trace = forward(params, img, myo)
        grads = backward(params, trace, np.ones_like(yhat))
        assert len(grads) == len(params.tensors)
        for g, t in zip(grads, params.tensors):
            assert g.shape == t.shape

    def test_mismatched_trace_rejected(self):
        params = _params(7)
        img, myo = _input(7, size=8)
        _, trace = forward(params, img, myo)
        with pytest.raises(ValueError):
            backward_batch(params, trace, np.ones((1, 1, 16, 16)))

    def test_finite_difference_agreement_8x8(self):
        # acceptance runs 20 draws; keep a 2-draw sentinel in the unit suite
        h = 1e-5
        for seed in (0, 1):
            params = init_params(PrngStream(seed, 99))
            rng = np.random.default_rng(seed)
            img = rng.random((1, 8, 8))
            myo = (rng.random((1, 8, 8)) < 0.6).astype(np.float64)
            coef = rng.normal(size=(1, 1, 8, 8))
            yhat, trace = forward(params, img, myo)
            grads = backward(params, trace, coef[0])

            def loss():
                y, _ = forward(params, img, myo)
                return float((coef[0] * y).sum())

            worst = 0.0
            for t, g in zip(params.tensors, grads):
                flat = t.ravel()
                gflat = g.ravel()
                for k in range(0, flat.size, 7):  # stride keeps the sentinel fast
                    orig = flat[k]
                    flat[k] = orig + h
                    lp = loss()
                    flat[k] = orig - h
                    lm = loss()
                    flat[k] = orig
                    num = (lp - lm) / (2 * h)
                    rel = abs(num - gflat[k]) / max(abs(num), abs(gflat[k]), 1e-12)
                    worst = max(worst, rel)
            assert worst < 1e-4


class TestCheckpoint:
    def test_roundtrip_bit_exact_at_stored_precision(self, tmp_path):
        params = _params(8)
        path = tmp_path / "model.lgep"
        save_checkpoint(params, None, path)
        loaded, adam = load_checkpoint(path)
        assert adam is None
        expected = params.flat().astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.flat(), expected)

    def test_roundtrip_with_adam_state(self, tmp_path):
        params = _params(9)
        adam = AdamState.for_params(params.tensors)
        adam.step = 41
        for m in adam.m:
            m += 0.125  # exactly representable in f32
        path = tmp_path / "model.lgep"
        save_checkpoint(params, adam, path)
        _, loaded = load_checkpoint(path)
        assert loaded.step == 41
        for t in loaded.m:
            assert np.all(t == 0.125)
        for t in loaded.v:
            assert np.all(t == 0.0)

    def test_load_then_forward_identical_for_f32_params(self, tmp_path):
        # training keeps parameters on the float32 grid, so save/load is lossless
        params = _params(10)
        for t in params.tensors:
            np.copyto(t, t.astype(np.float32))
        img, myo = _input(10, size=16)
        before, _ = forward(params, img, myo)
        path = tmp_path / "model.lgep"
        save_checkpoint(params, None, path)
        loaded, _ = load_checkpoint(path)
        after, _ = forward(loaded, img, myo)
        assert np.array_equal(before, after)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lgep"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.lgep"
        path.write_bytes(b"LGEP\x09" + b"\x00" * 32)
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_parameter_count_mismatch(self, tmp_path):
        import struct

        path = tmp_path / "bad.lgep"
        path.write_bytes(b"LGEP\x01" + struct.pack("<I", 5) + b"\x00" * 21)
        with pytest.raises(FormatError, match="count"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        params = _params(11)
        path = tmp_path / "model.lgep"
        save_checkpoint(params, None, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)
