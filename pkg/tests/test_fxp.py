import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiadla.fxp import (FxpTensor, LayerSpec, Network, ShapeError, conv2d_ref,
                        fc_ref, forward, hard_tanh, load_network, quantize,
                        save_network)
from fiadla.rng import Rng


def rand_tensor(rng: Rng, shape, frac_bits=5) -> FxpTensor:
    data = (rng.bulk_u64(int(np.prod(shape))) % 255 - 127).astype(np.int8)
    return FxpTensor(data.reshape(shape), frac_bits)


def conv_oracle(inp: FxpTensor, layer: LayerSpec, weights: FxpTensor):
    """Scalar triple-loop convolution, written independently of conv2d_ref."""
    h, w, c = inp.dims
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    out = np.zeros((ho, wo, layer.out_channels), dtype=np.int8)
    one = 1 << (inp.frac_bits + weights.frac_bits - layer.requant_shift)
    for i in range(ho):
        for j in range(wo):
            for oc in range(layer.out_channels):
                acc = 0
                for di in range(k):
                    for dj in range(k):
                        for ch in range(c):
                            ii, jj = i * s + di - p, j * s + dj - p
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += int(inp.data[ii, jj, ch]) * \
                                    int(weights.data[di, dj, ch, oc])
                if layer.requant_shift:
                    half = 1 << (layer.requant_shift - 1)
                    q = (abs(acc) + half) >> layer.requant_shift
                    acc = q if acc >= 0 else -q
                acc = max(-128, min(127, acc))
                if layer.activation == "relu":
                    acc = max(0, acc)
                elif layer.activation == "hard_tanh":
                    acc = max(-one, min(one, acc))
                out[i, j, oc] = acc
    return out


class TestQuantize:
    def test_zero(self):
        assert quantize([0.0], 5).data.tolist() == [0]

    def test_one_at_frac5(self):
        assert quantize([1.0], 5).data.tolist() == [32]

    def test_saturation(self):
        assert quantize([10.0], 5).data.tolist() == [127]
        assert quantize([-10.0], 5).data.tolist() == [-128]

    def test_round_half_away(self):
        # 0.046875 * 32 = 1.5 rounds away to 2; negative mirrors
        assert quantize([1.5 / 32], 5).data.tolist() == [2]
        assert quantize([-1.5 / 32], 5).data.tolist() == [-2]

    @given(st.lists(st.floats(-3.9, 3.9), min_size=1, max_size=32),
           st.integers(0, 7))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_error_bound(self, values, frac_bits):
        t = quantize(values, frac_bits)
        back = t.to_real()
        bound = 2.0 ** (-frac_bits - 1) + 1e-12
        for v, b in zip(values, back):
            if abs(v) <= 127 / (1 << frac_bits):  # in-range values only
                assert abs(v - b) <= bound

    def test_frac_bits_range_enforced(self):
        with pytest.raises(ValueError):
            quantize([0.0], 8)


class TestConv:
    def test_hand_example(self):
        inp = FxpTensor(np.array([1, 2, 3, 4], dtype=np.int8).reshape(2, 2, 1), 0)
        layer = LayerSpec("conv", 1, 1, kernel_size=2)
        w = FxpTensor(np.array([1, 0, 0, 1], dtype=np.int8).reshape(2, 2, 1, 1), 0)
        assert conv2d_ref(inp, layer, w).data.reshape(-1).tolist() == [5]

    def test_zero_weights_annihilate(self):
        rng = Rng(1)
        inp = rand_tensor(rng, (5, 5, 3))
        layer = LayerSpec("conv", 3, 4, kernel_size=3, requant_shift=5)
        w = FxpTensor(np.zeros((3, 3, 3, 4), dtype=np.int8), 5)
        assert not conv2d_ref(inp, layer, w).data.any()

    def test_shape_mismatch_raises(self):
        inp = FxpTensor(np.zeros((4, 4, 2), dtype=np.int8), 5)
        layer = LayerSpec("conv", 3, 4, kernel_size=3)
        w = FxpTensor(np.zeros((3, 3, 3, 4), dtype=np.int8), 5)
        with pytest.raises(ShapeError):
            conv2d_ref(inp, layer, w)

    def test_matches_scalar_oracle_on_200_random_layers(self):
        rng = Rng(20240)
        for trial in range(200):
            h = 2 + rng.randrange(5)
            w_dim = 2 + rng.randrange(5)
            c = 1 + rng.randrange(4)
            o = 1 + rng.randrange(5)
            k = 1 + rng.randrange(min(3, h, w_dim))
            stride = 1 + rng.randrange(2)
            pad = rng.randrange(2)
            act = ("none", "relu", "hard_tanh")[rng.randrange(3)]
            shift = rng.randrange(8)
            layer = LayerSpec("conv", c, o, kernel_size=k, stride=stride,
                              padding=pad, activation=act, requant_shift=shift)
            frac_in = rng.randrange(6)
            frac_w = max(0, min(7, shift - frac_in + rng.randrange(3) + 3))
            if not 0 <= frac_in + frac_w - shift <= 7:
                continue
            inp = rand_tensor(Rng(trial), (h, w_dim, c), frac_in)
            weights = rand_tensor(Rng(trial + 7000), (k, k, c, o), frac_w)
            got = conv2d_ref(inp, layer, weights)
            expect = conv_oracle(inp, layer, weights)
            assert np.array_equal(got.data, expect), f"trial {trial}"

    def test_deterministic_across_runs(self):
        rng = Rng(5)
        inp = rand_tensor(rng, (6, 6, 3))
        w = rand_tensor(rng, (3, 3, 3, 4))
        layer = LayerSpec("conv", 3, 4, kernel_size=3, requant_shift=6)
        a = conv2d_ref(inp, layer, w)
        b = conv2d_ref(inp, layer, w)
        assert a.bit_equal(b)


class TestFc:
    def test_identity(self):
        # identity weight matrix at frac_bits 0, shift 0
        inp = FxpTensor(np.array([5, -3, 7, 0], dtype=np.int8).reshape(1, 1, 4), 5)
        layer = LayerSpec("fc", 4, 4)
        w = FxpTensor(np.eye(4, dtype=np.int8).reshape(1, 1, 4, 4), 0)
        out = fc_ref(inp, layer, w)
        assert out.data.reshape(-1).tolist() == [5, -3, 7, 0]

    def test_zero_input(self):
        inp = FxpTensor(np.zeros((1, 1, 6), dtype=np.int8), 5)
        layer = LayerSpec("fc", 6, 3, requant_shift=5)
        w = rand_tensor(Rng(2), (1, 1, 6, 3))
        assert not fc_ref(inp, layer, w).data.any()

    def test_matches_dot_product_oracle(self):
        rng = Rng(77)
        inp = rand_tensor(rng, (1, 1, 16), 5)
        w = rand_tensor(rng, (1, 1, 16, 8), 5)
        layer = LayerSpec("fc", 16, 8, requant_shift=6)
        got = fc_ref(inp, layer, w).data.reshape(-1)
        for oc in range(8):
            acc = sum(int(inp.data.reshape(-1)[i]) * int(w.data[0, 0, i, oc])
                      for i in range(16))
            half = 1 << 5
            q = (abs(acc) + half) >> 6
            q = q if acc >= 0 else -q
            assert got[oc] == max(-128, min(127, q))

    def test_bias_added_at_accumulator_scale(self):
        inp = FxpTensor(np.zeros((1, 1, 2), dtype=np.int8), 5)
        layer = LayerSpec("fc", 2, 1, requant_shift=5)
        w = FxpTensor(np.zeros((1, 1, 2, 1), dtype=np.int8), 5)
        out = fc_ref(inp, layer, w, bias=np.array([64]))
        assert out.data.reshape(-1).tolist() == [2]  # 64 >> 5 = 2


class TestForward:
    def _two_layer(self):
        rng = Rng(31)
        l1 = LayerSpec("conv", 2, 3, kernel_size=3, requant_shift=5,
                       activation="relu")
        l2 = LayerSpec("fc", 27, 4, requant_shift=5, activation="hard_tanh")
        w1 = rand_tensor(rng, (3, 3, 2, 3))
        w2 = rand_tensor(rng, (1, 1, 27, 4))
        return Network("t", [l1, l2], [w1, w2]), rand_tensor(rng, (5, 5, 2))

    def test_single_layer_equals_ref(self):
        rng = Rng(8)
        layer = LayerSpec("conv", 2, 3, kernel_size=2, requant_shift=5)
        w = rand_tensor(rng, (2, 2, 2, 3))
        inp = rand_tensor(rng, (4, 4, 2))
        net = Network("single", [layer], [w])
        assert forward(net, inp).bit_equal(conv2d_ref(inp, layer, w))

    def test_identity_tap_is_noop(self):
        net, inp = self._two_layer()
        assert forward(net, inp, tap=lambda i, t: t).bit_equal(forward(net, inp))

    def test_equals_manual_chaining(self):
        net, inp = self._two_layer()
        mid = conv2d_ref(inp, net.layers[0], net.weights[0])
        expect = fc_ref(mid, net.layers[1], net.weights[1])
        assert forward(net, inp).bit_equal(expect)

    def test_tap_sees_inter_layer_activations_only(self):
        net, inp = self._two_layer()
        seen = []
        forward(net, inp, tap=lambda i, t: (seen.append(i), t)[1])
        assert seen == [0]  # not called after the final layer

    def test_mismatched_weight_count_rejected(self):
        net, inp = self._two_layer()
        with pytest.raises(ShapeError):
            Network("bad", net.layers, net.weights[:1])


class TestHardTanh:
    def test_zero(self):
        assert hard_tanh(np.array([0]), 5, 5).tolist() == [0]

    def test_clamps_large_accumulator(self):
        assert hard_tanh(np.array([10_000_000]), 5, 5).tolist() == [32]
        assert hard_tanh(np.array([-10_000_000]), 5, 5).tolist() == [-32]

    def test_passthrough_inside_range(self):
        # 480 >> 5 = 15, inside [-32, 32]
        assert hard_tanh(np.array([480]), 5, 5).tolist() == [15]

    @given(st.integers(-2**31, 2**31 - 1))
    @settings(max_examples=300, deadline=None)
    def test_always_in_encoded_unit_range(self, acc):
        v = int(hard_tanh(np.array([acc]), 5, 5)[0])
        assert -32 <= v <= 32


class TestNetworkFile:
    def test_roundtrip(self, tmp_path):
        rng = Rng(55)
        l1 = LayerSpec("fc", 4, 8, activation="none", requant_shift=5)
        l2 = LayerSpec("fc", 8, 3, activation="hard_tanh", requant_shift=5)
        net = Network("rt", [l1, l2],
                      [rand_tensor(rng, (1, 1, 4, 8)),
                       rand_tensor(rng, (1, 1, 8, 3))],
                      [None, np.array([0, 64, 0], dtype=np.int64)])
        path = tmp_path / "net.json"
        save_network(net, path)
        loaded = load_network(path)
        assert loaded.name == net.name
        assert loaded.layers == net.layers
        for a, b in zip(loaded.weights, net.weights):
            assert a.bit_equal(b)
        assert loaded.biases[0] is None
        assert loaded.biases[1].tolist() == [0, 64, 0]
        inp = rand_tensor(Rng(1), (1, 1, 4))
        assert forward(loaded, inp).bit_equal(forward(net, inp))
