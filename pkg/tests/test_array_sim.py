import numpy as np
import pytest

from fiadla.array_sim import (ArrayConfig, BufferOverflowError,
                              ScheduleInfeasibleError, TileMapping,
                              event_simulate_schedule, fault_free_cycles,
                              iteration_timeline, map_layer, simulate_layer)
from fiadla.faults import EMPTY_FAULTS, FaultSet, PeFault
from fiadla.fxp import FxpTensor, LayerSpec, conv2d_ref, fc_ref
from fiadla.redundancy import DppuState, HcaConfig, stall_penalty
from fiadla.rng import Rng

CFG = ArrayConfig()


def rand_tensor(rng, shape, frac=5):
    data = (rng.bulk_u64(int(np.prod(shape))) % 255 - 127).astype(np.int8)
    return FxpTensor(data.reshape(shape), frac)


def rand_layer_case(seed: int):
    """A non-degenerate conv layer plus matching tensors."""
    rng = Rng(seed)
    c = 8 + rng.randrange(24)
    o = 1 + rng.randrange(20)
    h = w = 4 + rng.randrange(6)
    layer = LayerSpec("conv", c, o, kernel_size=3, padding=1,
                      requant_shift=7, activation=("none", "relu")[seed % 2])
    inp = rand_tensor(rng, (h, w, c))
    weights = rand_tensor(rng, (3, 3, c, o))
    return inp, weights, layer


class TestMapLayer:
    @pytest.mark.parametrize("out_dims,c,expect", [
        ((8, 8, 32), 64, 4),    # ceil(64/32) * ceil(32/16)
        ((1, 1, 1), 1, 1),
        ((10, 10, 20), 64, 8),  # ceil(100/32) * ceil(20/16)
    ])
    def test_tile_counts(self, out_dims, c, expect):
        layer = LayerSpec("conv", c, out_dims[2], kernel_size=3, padding=1)
        assert map_layer(layer, out_dims, CFG).n_tiles == expect

    def test_assignment_covers_every_element_once(self):
        layer = LayerSpec("conv", 4, 20, kernel_size=3, padding=1)
        mapping = map_layer(layer, (7, 7, 20), CFG)
        seen = set()
        for tile in range(mapping.n_tiles):
            pixels, channels = mapping.tile_extent(tile)
            for p in pixels:
                for ch in channels:
                    t, r, c = mapping.assignment(p, ch)
                    assert t == tile
                    assert 0 <= r < CFG.rows and 0 <= c < CFG.cols
                    seen.add((p, ch))
        assert len(seen) == 49 * 20

    def test_column_shares_output_channel(self):
        layer = LayerSpec("conv", 4, 8, kernel_size=3, padding=1)
        mapping = map_layer(layer, (6, 6, 8), CFG)
        _, r0, c0 = mapping.assignment(0, 3)
        _, r1, c1 = mapping.assignment(5, 3)
        assert c0 == c1 and r0 != r1

    def test_buffer_overflow(self):
        layer = LayerSpec("conv", 8192, 16, kernel_size=7)
        with pytest.raises(BufferOverflowError):
            map_layer(layer, (8, 8, 16), CFG)


class TestIterationTimeline:
    def test_no_faults(self):
        r = iteration_timeline(16, 0, 16, 64, 3)
        assert (r.t_iteration, r.t_2d_array_write, r.t_dppu_write,
                r.t_idle, r.t_stall) == (576, 16, 0, 560, 0)

    def test_three_faults(self):
        r = iteration_timeline(16, 3, 16, 64, 3)
        assert (r.t_2d_array_write, r.t_dppu_write, r.t_idle, r.t_stall) == \
            (16, 3, 557, 0)

    def test_overflow_stall(self):
        r = iteration_timeline(16, 18, 16, 64, 3)
        assert r.t_stall == 2
        assert r.t_penalty == 72
        # phase cycles sum to T_iteration + T_stall
        assert r.t_2d_array_write + r.t_dppu_write + r.t_idle == \
            r.t_iteration + r.t_stall

    def test_degenerate_layer_infeasible(self):
        with pytest.raises(ScheduleInfeasibleError):
            iteration_timeline(16, 0, 16, 2, 1)  # 2 cycles < 16 writes

    def test_dppu_zero_with_faults_infeasible(self):
        with pytest.raises(ScheduleInfeasibleError):
            iteration_timeline(16, 3, 0, 64, 3)


class TestEventSchedule:
    def test_no_stall_when_faults_fit(self):
        for faults in (0, 5, 16):
            assert event_simulate_schedule(16, faults, 16, 64, 3, 7) == 7 * 576

    def test_spec_example(self):
        assert event_simulate_schedule(16, 18, 16, 64, 3, 10) == 10 * (576 + 72)

    def test_dppu_zero_infeasible(self):
        with pytest.raises(ScheduleInfeasibleError):
            event_simulate_schedule(16, 1, 0, 64, 3, 1)

    def test_matches_stall_penalty_on_grid(self):
        # the acceptance grid: 0 tolerance against the closed form
        for fault in range(17, 41):
            for c in (16, 64):
                for k in (1, 3):
                    iters = 3
                    total = event_simulate_schedule(16, fault, 16, c, k, iters)
                    overhead = (total - iters * c * k * k) / iters
                    _, penalty = stall_penalty(fault, 16, c, k)
                    assert overhead == penalty, (fault, c, k)


class TestSimulateLayerFunctional:
    def test_fault_free_equals_reference_100_layers(self):
        for seed in range(100):
            inp, weights, layer = rand_layer_case(seed)
            golden = conv2d_ref(inp, layer, weights)
            out, report = simulate_layer(inp, weights, layer, CFG)
            assert out.bit_equal(golden), f"seed {seed}"
            assert report.t_stall == 0

    def test_fc_layer_fault_free(self):
        rng = Rng(4)
        inp = rand_tensor(rng, (1, 1, 64))
        weights = rand_tensor(rng, (1, 1, 64, 10))
        layer = LayerSpec("fc", 64, 10, requant_shift=7)
        golden = fc_ref(inp, layer, weights)
        out, _ = simulate_layer(inp, weights, layer, CFG)
        assert out.bit_equal(golden)

    def test_corruption_never_escapes_mapped_elements(self):
        for seed in (3, 21, 34):
            inp, weights, layer = rand_layer_case(seed)
            golden = conv2d_ref(inp, layer, weights)
            faults = FaultSet((PeFault(0, 0, "accumulator", 30, "stuck_at_1"),
                               PeFault(5, 0, "input_a", 7, "stuck_at_1")))
            out, _ = simulate_layer(inp, weights, layer, CFG, faults=faults)
            mapping = map_layer(layer, golden.dims, CFG)
            ho, wo, o = golden.dims
            allowed = set()
            for tile in range(mapping.n_tiles):
                pixels, channels = mapping.tile_extent(tile)
                for r, c in ((0, 0), (5, 0)):
                    if r < len(pixels) and c < len(channels):
                        allowed.add((pixels.start + r, channels.start + c))
            flat_g = golden.data.reshape(ho * wo, o)
            flat_o = out.data.reshape(ho * wo, o)
            differing = {(int(p), int(ch))
                         for p, ch in zip(*np.nonzero(flat_g != flat_o))}
            assert differing <= allowed
            assert differing, "faults on used bits should corrupt something"

    def test_corruption_exactly_the_mapped_elements_when_fault_bites(self):
        # all-ones data keeps every accumulate positive and small, so a
        # stuck-at-1 on accumulator bit 12 bites every mapped element
        inp = FxpTensor(np.ones((6, 6, 4), dtype=np.int8), 5)
        weights = FxpTensor(np.ones((3, 3, 4, 3), dtype=np.int8), 5)
        layer = LayerSpec("conv", 4, 3, kernel_size=3, requant_shift=5)
        golden = conv2d_ref(inp, layer, weights)
        faults = FaultSet((PeFault(0, 0, "accumulator", 12, "stuck_at_1"),))
        out, _ = simulate_layer(inp, weights, layer, CFG, faults=faults)
        mapping = map_layer(layer, golden.dims, CFG)
        ho, wo, o = golden.dims
        expected = set()
        for tile in range(mapping.n_tiles):
            pixels, channels = mapping.tile_extent(tile)
            expected.add((pixels.start, channels.start))
        flat_g = golden.data.reshape(ho * wo, o)
        flat_o = out.data.reshape(ho * wo, o)
        differing = {(int(p), int(ch))
                     for p, ch in zip(*np.nonzero(flat_g != flat_o))}
        assert differing == expected

    def test_stuck_at_zero_on_zero_bit_is_silent(self):
        rng = Rng(9)
        inp = FxpTensor(np.ones((3, 3, 4), dtype=np.int8), 5)
        weights = FxpTensor(np.ones((3, 3, 4, 2), dtype=np.int8), 5)
        layer = LayerSpec("conv", 4, 2, kernel_size=3, requant_shift=5)
        golden = conv2d_ref(inp, layer, weights)
        # accumulator never exceeds 36 < 2^30, so bit 30 is always 0
        faults = FaultSet((PeFault(0, 0, "accumulator", 30, "stuck_at_0"),))
        out, _ = simulate_layer(inp, weights, layer, CFG, faults=faults)
        assert out.bit_equal(golden)

    def test_transient_fires_on_named_cycle_only(self):
        inp, weights, layer = rand_layer_case(11)
        golden = conv2d_ref(inp, layer, weights)
        ckk = layer.in_channels * layer.kernel_size ** 2
        # beyond the iteration: never fires
        late = FaultSet((PeFault(0, 0, "accumulator", 28, "transient",
                                 cycle=ckk + 5),))
        out, _ = simulate_layer(inp, weights, layer, CFG, faults=late)
        assert out.bit_equal(golden)
        # in range: flips the running sum once
        early = FaultSet((PeFault(0, 0, "accumulator", 28, "transient",
                                  cycle=0),))
        out2, _ = simulate_layer(inp, weights, layer, CFG, faults=early)
        assert not out2.bit_equal(golden)

    def test_input_register_stuck_bits(self):
        inp, weights, layer = rand_layer_case(17)
        golden = conv2d_ref(inp, layer, weights)
        # column 0 and row 2 are used by every mapping of these layers
        faults = FaultSet((PeFault(2, 0, "input_a", 7, "stuck_at_1"),
                           PeFault(2, 0, "input_b", 0, "stuck_at_1")))
        out, _ = simulate_layer(inp, weights, layer, CFG, faults=faults)
        diff = (out.data != golden.data).sum()
        assert diff >= 1

    def test_fault_coordinates_validated(self):
        inp, weights, layer = rand_layer_case(5)
        faults = FaultSet((PeFault(99, 0, "input_a", 0, "stuck_at_0"),))
        with pytest.raises(ValueError):
            simulate_layer(inp, weights, layer, CFG, faults=faults)


class TestSimulateLayerHca:
    def test_full_repair_bit_exact_and_zero_penalty(self):
        rng = Rng(1000)
        for trial in range(25):
            inp, weights, layer = rand_layer_case(trial + 500)
            golden = conv2d_ref(inp, layer, weights)
            n_faults = 1 + rng.randrange(16)
            cells = set()
            while len(cells) < n_faults:
                cells.add((rng.randrange(32), rng.randrange(16)))
            faults = FaultSet(tuple(
                PeFault(r, c, "accumulator", 24 + rng.randrange(8),
                        "stuck_at_1") for r, c in cells))
            out, report = simulate_layer(inp, weights, layer, CFG,
                                         hca=HcaConfig(), faults=faults)
            assert out.bit_equal(golden), f"trial {trial}"
            assert report.total_cycles == fault_free_cycles(layer, golden.dims, CFG)

    def test_nonfunctional_dppu_rejected(self):
        inp, weights, layer = rand_layer_case(2)
        state = DppuState(faulty_multipliers=(0, 1))  # two in one group
        with pytest.raises(ScheduleInfeasibleError):
            simulate_layer(inp, weights, layer, CFG, hca=HcaConfig(),
                           faults=EMPTY_FAULTS, dppu_state=state)

    def test_stall_mode_golden_with_penalty(self):
        inp, weights, layer = rand_layer_case(8)
        golden = conv2d_ref(inp, layer, weights)
        rng = Rng(77)
        # 20 faults spread over every column: discard keeps nothing useful,
        # stall wins and repairs everything at a cycle cost
        cells = [(r, c) for c in range(16) for r in (0, 1)][:20]
        faults = FaultSet(tuple(
            PeFault(r, c, "accumulator", 30, "stuck_at_1") for r, c in cells))
        out, report = simulate_layer(inp, weights, layer, CFG,
                                     hca=HcaConfig(), faults=faults)
        assert out.bit_equal(golden)
        assert report.total_cycles > fault_free_cycles(layer, golden.dims, CFG)

    def test_discard_mode_golden_with_fewer_columns(self):
        inp, weights, layer = rand_layer_case(13)
        golden = conv2d_ref(inp, layer, weights)
        # 18 faults all in the rightmost column: discard down to 15 columns
        faults = FaultSet(tuple(
            PeFault(r, 15, "accumulator", 30, "stuck_at_1") for r in range(18)))
        out, report = simulate_layer(inp, weights, layer, CFG,
                                     hca=HcaConfig(), faults=faults)
        assert out.bit_equal(golden)
        ff = fault_free_cycles(layer, golden.dims, CFG)
        degraded_cfg = ArrayConfig(rows=32, cols=15)
        assert report.total_cycles == fault_free_cycles(layer, golden.dims,
                                                        degraded_cfg)
        assert report.total_cycles >= ff


class TestTileMappingType:
    def test_used_pes_partial_tile(self):
        layer = LayerSpec("conv", 4, 20, kernel_size=3, padding=1)
        mapping = TileMapping(layer, (7, 7, 20), 32, 16)
        assert mapping.n_tiles == 4
        assert mapping.used_pes(0) == (32, 16)
        assert mapping.used_pes(1) == (32, 4)
        assert mapping.used_pes(2) == (17, 16)
        assert mapping.used_pes(3) == (17, 4)
