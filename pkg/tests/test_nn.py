import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normls import autodiff as ad
from normls import nn
from normls.autodiff import Tensor
from normls.checkpoint import load_tensors, parse_tensors, save_tensors
from normls.errors import ConfigError, DataFormatError, ShapeError

from oracles import brute_force_ratio


def spec(k=3, stride=1, pad=1, mode="partial", c_in=1, c_out=1):
    return nn.Conv2dSpec(c_in, c_out, (k, k), stride, pad, mode)


class TestScaleMap:
    def test_no_padding_is_all_ones(self):
        assert np.array_equal(nn.partial_scale_map((7, 9), spec(pad=0)), np.ones((5, 7)))

    def test_32x32_census(self):
        ratio = nn.partial_scale_map((32, 32), spec())
        values, counts = np.unique(ratio, return_counts=True)
        assert dict(zip(values.tolist(), counts.tolist())) == {1.0: 900, 1.5: 120, 2.25: 4}

    def test_single_pixel(self):
        assert nn.partial_scale_map((1, 1), spec()).tolist() == [[9.0]]

    def test_empty_window_is_config_error(self):
        with pytest.raises(ConfigError):
            nn.partial_scale_map((4, 4), spec(k=1, pad=1))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2))
    def test_matches_window_counting(self, h, w, k, stride, pad):
        s = spec(k=k, stride=stride, pad=pad)
        if h + 2 * pad < k or w + 2 * pad < k:
            with pytest.raises(ShapeError):
                nn.partial_scale_map((h, w), s)
            return
        try:
            brute = brute_force_ratio(h, w, k, k, stride, pad)
        except ZeroDivisionError:
            with pytest.raises(ConfigError):
                nn.partial_scale_map((h, w), s)
            return
        got = nn.partial_scale_map((h, w), s)
        assert np.array_equal(got, brute)
        assert np.all(got >= 1.0)


class TestConvForward:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        self.w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        self.b = Tensor(rng.normal(size=4))

    def _both(self, pad=1, stride=1):
        zero = nn.conv2d_forward(self.x, spec(stride=stride, pad=pad, mode="zero", c_in=3, c_out=4), self.w, self.b)
        part = nn.conv2d_forward(self.x, spec(stride=stride, pad=pad, mode="partial", c_in=3, c_out=4), self.w, self.b)
        bias = self.b.data[None, :, None, None]
        return zero.data - bias, part.data - bias

    def test_interior_unchanged(self):
        zero, part = self._both()
        assert np.array_equal(part[:, :, 1:-1, 1:-1], zero[:, :, 1:-1, 1:-1])

    def test_corner_scaled_by_nine_quarters(self):
        zero, part = self._both()
        np.testing.assert_allclose(part[:, :, 0, 0], zero[:, :, 0, 0] * 9 / 4, rtol=1e-14)
        np.testing.assert_allclose(part[:, :, -1, -1], zero[:, :, -1, -1] * 9 / 4, rtol=1e-14)

    def test_edge_scaled_by_one_and_a_half(self):
        zero, part = self._both()
        np.testing.assert_allclose(part[:, :, 0, 2], zero[:, :, 0, 2] * 1.5, rtol=1e-14)
        np.testing.assert_allclose(part[:, :, 3, -1], zero[:, :, 3, -1] * 1.5, rtol=1e-14)

    def test_pad_zero_bitwise_equal(self):
        zero, part = self._both(pad=0)
        assert zero.tobytes() == part.tobytes()

    def test_ratio_independent_of_pixels(self):
        s = spec(c_in=3, c_out=4)
        other = Tensor(np.random.default_rng(9).normal(size=(2, 3, 6, 6)))
        ratios = []
        for x in (self.x, other):
            z = nn.conv2d_forward(x, spec(c_in=3, c_out=4, mode="zero"), self.w).data
            p = nn.conv2d_forward(x, s, self.w).data
            ratios.append(np.median(p / z, axis=(0, 1)))
        np.testing.assert_allclose(ratios[0], ratios[1], rtol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nn.conv2d_forward(self.x, spec(c_in=2, c_out=4), self.w)
        with pytest.raises(ShapeError):
            nn.conv2d_forward(self.x, spec(c_in=3, c_out=5), self.w)

    @pytest.mark.parametrize("mode", ["zero", "partial"])
    @pytest.mark.parametrize("stride", [1, 2])
    def test_weight_grad_check(self, mode, stride):
        s = spec(stride=stride, mode=mode, c_in=3, c_out=4)
        proj = Tensor(np.random.default_rng(1).normal(size=nn.conv2d_forward(self.x, s, self.w).shape))

        def f(w):
            return ad.sum(ad.mul(nn.conv2d_forward(self.x, s, w, self.b), proj))

        assert ad.grad_check(f, self.w.data) < 1e-4
        assert ad.grad_check(lambda b: ad.sum(ad.mul(nn.conv2d_forward(self.x, s, self.w, b), proj)), self.b.data) < 1e-4


class TestMiniResNet:
    def test_zero_input_gives_zero_logits(self):
        p = nn.init_params(4, seed=0)
        logits, feats = nn.mini_resnet_forward(p, np.zeros((2, 3, 16, 16)))
        assert np.array_equal(logits.data, np.zeros((2, 4)))

    def test_identical_images_identical_rows(self):
        p = nn.init_params(3, seed=1)
        img = np.random.default_rng(0).random((1, 3, 12, 12))
        logits, feats = nn.mini_resnet_forward(p, np.concatenate([img, img]))
        assert np.array_equal(logits.data[0], logits.data[1])
        assert np.array_equal(feats.data[0], feats.data[1])

    def test_output_shapes(self):
        p = nn.init_params(5, seed=2)
        logits, feats = nn.mini_resnet_forward(p, np.random.default_rng(0).random((1, 3, 32, 32)))
        assert feats.shape == (1, 64) and logits.shape == (1, 5)

    def test_logits_are_penultimate_times_classifier(self):
        p = nn.init_params(3, seed=3)
        rng = np.random.default_rng(1)
        for name, t in p:
            t.data[...] = rng.normal(size=t.shape) * 0.3
        logits, feats = nn.mini_resnet_forward(p, rng.random((2, 3, 8, 8)))
        np.testing.assert_allclose(logits.data, feats.data @ p["fc.weight"].data + p["fc.bias"].data, atol=1e-13)

    def test_undersized_input(self):
        with pytest.raises(ShapeError):
            nn.mini_resnet_forward(nn.init_params(3, seed=0), np.zeros((1, 3, 7, 8)))

    def test_padding_swap_keeps_parameter_count(self):
        zero = nn.init_params(3, seed=0, padding="zero")
        part = nn.init_params(3, seed=0, padding="partial")
        assert zero.num_parameters() == part.num_parameters()
        assert zero.shapes() == part.shapes()
        for (_, a), (_, b) in zip(zero, part):
            assert np.array_equal(a.data, b.data)

    def test_stage_boundaries_use_projection(self):
        shapes = nn.parameter_shapes(10)
        assert shapes["stage2.block1.proj.weight"] == (32, 16, 1, 1)
        assert "stage2.block2.proj.weight" not in shapes

    def test_seeded_init_is_deterministic(self):
        a, b = nn.init_params(3, seed=42), nn.init_params(3, seed=42)
        assert all(np.array_equal(x.data, y.data) for (_, x), (_, y) in zip(a, b))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = nn.init_params(3, seed=0)
        save_tensors(tmp_path / "c.bin", p.arrays())
        back = load_tensors(tmp_path / "c.bin")
        assert list(back) == list(p.tensors)
        for name, arr in back.items():
            assert arr.tobytes() == p[name].data.tobytes()

    def test_layout(self, tmp_path):
        save_tensors(tmp_path / "c.bin", {"ab": np.array([[1.5, -2.0]])})
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw[:4] == b"CLBL"
        assert raw[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert raw[12:18] == (2).to_bytes(4, "little") + b"ab"
        assert raw[18:30] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert np.frombuffer(raw[30:], "<f8").tolist() == [1.5, -2.0]

    def test_bad_magic_and_truncation(self, tmp_path):
        save_tensors(tmp_path / "c.bin", {"w": np.ones(3)})
        raw = (tmp_path / "c.bin").read_bytes()
        with pytest.raises(DataFormatError, match="magic"):
            parse_tensors(b"XXXX" + raw[4:])
        with pytest.raises(DataFormatError, match="offset"):
            parse_tensors(raw[:-3])

    def test_architecture_mismatch_lists_shapes(self):
        arrays = nn.init_params(3, seed=0).arrays()
        arrays["fc.weight"] = np.zeros((64, 4))
        with pytest.raises(ShapeError, match=r"fc.weight: expected \(64, 3\), found \(64, 4\)"):
            nn.params_from_arrays(arrays, 3)
