"""Functional and timing simulation of the output-stationary 2D array.

Functional model: each PE performs one multiply-accumulate per cycle
and owns exactly one output feature element per iteration.  Stuck-at
bits apply to the modeled registers on every cycle they are latched
(input registers: every operand; product register: every product;
accumulator: the running sum after every accumulate), transient faults
at exactly one named cycle.  With HCA active, outputs of repaired PEs
are recomputed as an independent DPPU dot product and overwrite the
corrupted writes.

Timing model: an iteration takes c*k*k cycles, during which the output
buffer port serves one write per active column plus one write per
DPPU-recomputed output.  When more faulty PEs need recomputing than the
DPPU can absorb within an iteration, the array stalls; the discrete-
event simulator below is the oracle for the stall equations.  Pipeline
fill/drain is excluded (steady-state model), and output-port backlog on
degenerate tiny layers is tracked but never stalls the array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .faults import REGISTER_WIDTH, FaultSet, PeFault
from .fxp import (FxpTensor, LayerSpec, ShapeError, apply_activation,
                  layer_ref, out_frac_bits, saturate_int8,
                  shift_round_half_away)
from .redundancy import (DppuState, HcaConfig, degrade_decision,
                         dppu_functional, stall_penalty)


class ScheduleInfeasibleError(RuntimeError):
    """The layer/array combination admits no valid port schedule."""


class BufferOverflowError(RuntimeError):
    """A tile's working set does not fit the on-chip buffers."""


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 32
    cols: int = 16
    input_buffer_bytes: int = 128 * 1024
    output_buffer_bytes: int = 128 * 1024
    weight_buffer_bytes: int = 416 * 1024
    # per-PE registers: two 8-bit operands, 16-bit product, 32-bit accumulator
    register_widths: tuple[int, int, int, int] = (8, 8, 16, 32)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array dimensions must be >= 1")

    @property
    def reg_bit_num(self) -> int:
        return sum(self.register_widths)


@dataclass(frozen=True)
class TimelineReport:
    """Output-port phase breakdown of one steady-state iteration plus
    layer totals.  Phases satisfy
    t_2d_array_write + t_dppu_write + t_idle = t_iteration + t_stall."""

    t_iteration: int
    t_2d_array_write: int
    t_dppu_write: int
    t_idle: int
    t_stall: int
    t_penalty: float
    iterations: int
    total_cycles: int


@dataclass(frozen=True)
class TileMapping:
    """Output-stationary assignment of output elements to PEs.

    Output pixels tile along the row dimension, output channels along
    the column dimension; PEs in one column share one output channel.
    Tiles run in row-major order.
    """

    layer: LayerSpec
    out_dims: tuple[int, int, int]
    rows: int
    cols: int

    @property
    def pixel_tiles(self) -> int:
        ho, wo, _ = self.out_dims
        return math.ceil(ho * wo / self.rows)

    @property
    def channel_tiles(self) -> int:
        return math.ceil(self.out_dims[2] / self.cols)

    @property
    def n_tiles(self) -> int:
        return self.pixel_tiles * self.channel_tiles

    def assignment(self, pixel: int, channel: int) -> tuple[int, int, int]:
        """(tile index, pe_row, pe_col) for one output element."""
        tile = (pixel // self.rows) * self.channel_tiles + channel // self.cols
        return tile, pixel % self.rows, channel % self.cols

    def tile_extent(self, tile: int) -> tuple[range, range]:
        """(pixel range, channel range) covered by a tile."""
        ho, wo, o = self.out_dims
        tp, tc = divmod(tile, self.channel_tiles)
        pixels = range(tp * self.rows, min((tp + 1) * self.rows, ho * wo))
        channels = range(tc * self.cols, min((tc + 1) * self.cols, o))
        return pixels, channels

    def used_pes(self, tile: int) -> tuple[int, int]:
        """(used rows, used cols) of a tile."""
        pixels, channels = self.tile_extent(tile)
        return len(pixels), len(channels)


def map_layer(layer: LayerSpec, out_dims: tuple[int, int, int],
              cfg: ArrayConfig) -> TileMapping:
    """Tile an output volume onto the array, checking buffer capacities."""
    ho, wo, o = out_dims
    mapping = TileMapping(layer, out_dims, cfg.rows, cfg.cols)
    k, c = layer.kernel_size, layer.in_channels
    for tile in range(mapping.n_tiles):
        pixels, channels = mapping.tile_extent(tile)
        out_bytes = len(pixels) * len(channels)
        weight_bytes = k * k * c * len(channels)
        # input rows spanned by the tile's output pixels (kind-agnostic bound)
        if layer.kind == "conv":
            i0, i1 = pixels.start // wo, (pixels.stop - 1) // wo
            span = (i1 - i0) * layer.stride + k
            in_bytes = span * (wo * layer.stride + k) * c
        else:
            in_bytes = c
        if out_bytes > cfg.output_buffer_bytes:
            raise BufferOverflowError(f"tile {tile}: {out_bytes} output bytes")
        if weight_bytes > cfg.weight_buffer_bytes:
            raise BufferOverflowError(f"tile {tile}: {weight_bytes} weight bytes")
        if in_bytes > cfg.input_buffer_bytes:
            raise BufferOverflowError(f"tile {tile}: {in_bytes} input bytes")
    return mapping


def iteration_timeline(col: int, fault_pe_num: int, dppu_size: int,
                       c: int, k: int) -> TimelineReport:
    """Closed-form phase schedule of one iteration.

    The iteration lasts c*k*k cycles; the 2D array occupies the output
    port for `col` cycles, DPPU writes take one cycle per recomputed
    output up to the DPPU size, and recompute overflow stalls the array
    per T_stall = fault_pe_num - dppu_size.
    """
    if min(col, fault_pe_num, dppu_size, c, k) < 0:
        raise ValueError("all arguments must be >= 0")
    ckk = c * k * k
    if fault_pe_num > dppu_size and dppu_size == 0:
        raise ScheduleInfeasibleError(
            "faulty PEs present but the DPPU has no multipliers to recompute")
    dppu_write = min(fault_pe_num, dppu_size)
    if ckk < col + dppu_write:
        raise ScheduleInfeasibleError(
            f"iteration of {ckk} cycles cannot serve {col} array writes "
            f"plus {dppu_write} DPPU writes")
    t_stall, t_penalty = stall_penalty(fault_pe_num, dppu_size, c, k)
    idle = ckk + t_stall - col - dppu_write
    return TimelineReport(
        t_iteration=ckk, t_2d_array_write=col, t_dppu_write=dppu_write,
        t_idle=idle, t_stall=t_stall, t_penalty=t_penalty,
        iterations=1, total_cycles=int(ckk + t_penalty))


def event_simulate_schedule(col: int, fault_pe_num: int, dppu_size: int,
                            c: int, k: int, iterations: int) -> int:
    """Cycle-stepping simulation of the recompute pipeline; the
    independent oracle for the stall equations.

    Each iteration releases one recompute job per faulty PE; a job
    occupies the DPPU for ceil(c*k*k / dppu_size) cycles and must
    complete before the ping-pong weight register file swaps at the
    iteration boundary, else the array stalls.  Completed recomputes
    drain through the output port on cycles not taken by 2D-array
    writes; port backlog is bookkeeping only and never stalls.
    """
    ckk = c * k * k
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if fault_pe_num > 0 and dppu_size == 0:
        raise ScheduleInfeasibleError(
            "recompute schedule never completes with DPPU size 0")

    t = 0
    work = 0           # outstanding recompute work, in multiplier-cycles
    done_work = 0      # completed multiplier-cycles (ckk per output)
    writes_done = 0
    pending_writes = 0
    for it in range(iterations):
        work += fault_pe_num * ckk
        deadline = (it + 1) * fault_pe_num * ckk
        cycle_in_iter = 0
        while cycle_in_iter < ckk or done_work < deadline:
            if work > 0:  # pipelined passes: all multipliers stay busy
                step = min(dppu_size, work)
                work -= step
                done_work += step
                finished_outputs = done_work // ckk
                if finished_outputs > writes_done + pending_writes:
                    pending_writes = finished_outputs - writes_done
            array_advances = cycle_in_iter < ckk
            port_taken_by_2d = array_advances and cycle_in_iter < col
            if not port_taken_by_2d and pending_writes > 0:
                pending_writes -= 1
                writes_done += 1
            if array_advances:
                cycle_in_iter += 1
            t += 1
    return t


# --- functional fault model ------------------------------------------------


def _force_bits(value: int, width: int, faults: list[PeFault],
                register: str, cycle: int) -> int:
    """Apply this register's stuck-at/transient faults to a latched value."""
    u = value & ((1 << width) - 1)
    for f in faults:
        if f.register != register:
            continue
        if f.kind == "stuck_at_1":
            u |= 1 << f.bit_index
        elif f.kind == "stuck_at_0":
            u &= ~(1 << f.bit_index)
        elif f.cycle == cycle:
            u ^= 1 << f.bit_index
    if u >= 1 << (width - 1):
        u -= 1 << width
    return u


def _operand_stream(padded: np.ndarray, weights: FxpTensor, layer: LayerSpec,
                    pixel: int, channel: int, wo: int):
    """(activation, weight) pairs in cycle order for one output element:
    kernel row, kernel column, then input channel."""
    k = layer.kernel_size
    i, j = divmod(pixel, wo)
    r0, c0 = i * layer.stride, j * layer.stride
    wdat = weights.data
    for di in range(k):
        for dj in range(k):
            for ch in range(layer.in_channels):
                yield int(padded[r0 + di, c0 + dj, ch]), \
                    int(wdat[di, dj, ch, channel])


def _mac_with_faults(padded: np.ndarray, weights: FxpTensor, layer: LayerSpec,
                     pixel: int, channel: int, wo: int,
                     pe_faults: list[PeFault], out_frac: int,
                     bias: int) -> int:
    """One output element through a faulty PE, one MAC per cycle."""
    acc = 0
    for cycle, (a, b) in enumerate(
            _operand_stream(padded, weights, layer, pixel, channel, wo)):
        a = _force_bits(a, REGISTER_WIDTH["input_a"], pe_faults, "input_a", cycle)
        b = _force_bits(b, REGISTER_WIDTH["input_b"], pe_faults, "input_b", cycle)
        prod = _force_bits(a * b, REGISTER_WIDTH["product"], pe_faults,
                           "product", cycle)
        acc = (acc + prod + 2**31) % 2**32 - 2**31
        acc = _force_bits(acc, REGISTER_WIDTH["accumulator"], pe_faults,
                          "accumulator", cycle)
    acc = (acc + bias + 2**31) % 2**32 - 2**31
    q = int(saturate_int8(shift_round_half_away(np.int64(acc),
                                                layer.requant_shift)))
    return int(apply_activation(np.int8(q), layer.activation, out_frac))


def _dppu_recompute(padded: np.ndarray, weights: FxpTensor, layer: LayerSpec,
                    pixel: int, channel: int, wo: int, out_frac: int,
                    bias: int) -> int:
    """DPPU dot-product recompute of one output element (fault-free unit)."""
    acc = 0
    for a, b in _operand_stream(padded, weights, layer, pixel, channel, wo):
        acc += a * b
    acc = (acc + bias + 2**31) % 2**32 - 2**31
    q = int(saturate_int8(shift_round_half_away(np.int64(acc),
                                                layer.requant_shift)))
    return int(apply_activation(np.int8(q), layer.activation, out_frac))


def _pad_input(inp: FxpTensor, layer: LayerSpec) -> tuple[np.ndarray, int]:
    """Zero-padded activation volume plus output width, fc handled as a
    1x1xC pseudo-image."""
    if layer.kind == "fc":
        flat = inp.data.reshape(1, 1, -1)
        return flat.astype(np.int64), 1
    h, w, c = inp.dims
    p = layer.padding
    padded = np.zeros((h + 2 * p, w + 2 * p, c), dtype=np.int64)
    padded[p:p + h, p:p + w, :] = inp.data
    _, wo = layer.out_spatial(h, w)
    return padded, wo


def simulate_layer(inp: FxpTensor, weights: FxpTensor, layer: LayerSpec,
                   cfg: ArrayConfig, hca: HcaConfig | None = None,
                   faults: FaultSet = FaultSet(()),
                   dppu_state: DppuState | None = None,
                   bias: np.ndarray | None = None,
                   ) -> tuple[FxpTensor, TimelineReport]:
    """Execute one layer on the (possibly faulty) array.

    Without HCA, outputs mapped to faulty PEs carry the corrupted
    values.  With HCA and a functional DPPU, repaired outputs are
    overwritten by DPPU recomputes; beyond the DPPU size the stall-vs-
    discard decision applies (discard remaps the layer onto the kept
    column prefix, so results stay correct at a cycle cost).
    """
    faults.check_within(cfg.rows, cfg.cols)
    golden = layer_ref(inp, layer, weights, bias)
    out_dims = golden.dims
    out_frac = golden.frac_bits

    active_cols = cfg.cols
    repaired: set[tuple[int, int]] = set()
    t_stall_eq = 0
    mode = "full"
    if hca is not None:
        if not dppu_functional(dppu_state, hca):
            raise ScheduleInfeasibleError(
                "HCA requested with a non-functional DPPU and no "
                "degradation decision; run without HCA or degrade first")
        outcome = degrade_decision(faults, hca, (cfg.rows, cfg.cols),
                                   layer.in_channels, layer.kernel_size,
                                   dppu_state)
        mode = outcome.mode
        t_stall_eq = outcome.t_stall
        if mode == "discard":
            active_cols = outcome.remaining_cols
            if active_cols == 0:
                raise ScheduleInfeasibleError(
                    "no fault-free column prefix remains to discard down to")
        repaired = set(outcome.repaired_pes)

    mapping = map_layer(layer, out_dims,
                        ArrayConfig(cfg.rows, active_cols,
                                    cfg.input_buffer_bytes,
                                    cfg.output_buffer_bytes,
                                    cfg.weight_buffer_bytes))
    ho, wo_dim, o = out_dims
    padded, wo = _pad_input(inp, layer)
    out = np.array(golden.data)  # fault-free values; corrupt what must corrupt

    faulty_lookup = {pe: faults.faults_at(*pe) for pe in faults.faulty_pes}
    flat = out.reshape(ho * wo_dim, o)
    ckk = layer.in_channels * layer.kernel_size ** 2
    dppu = hca.dppu_size if hca is not None else 0

    total_cycles = 0
    first_tile_report: tuple[int, int] | None = None
    for tile in range(mapping.n_tiles):
        pixels, channels = mapping.tile_extent(tile)
        used_rows, used_cols = len(pixels), len(channels)
        jobs = 0
        for pe in faults.faulty_pes:
            r, ccol = pe
            if r >= used_rows or ccol >= used_cols:
                continue
            pixel = pixels.start + r
            channel = channels.start + ccol
            bias_val = 0 if bias is None else int(bias[channel])
            if pe in repaired:
                jobs += 1
                flat[pixel, channel] = _dppu_recompute(
                    padded, weights, layer, pixel, channel, wo, out_frac, bias_val)
            else:
                flat[pixel, channel] = _mac_with_faults(
                    padded, weights, layer, pixel, channel, wo,
                    faulty_lookup[pe], out_frac, bias_val)
        # iteration length: compute-bound normally, port-bound for
        # degenerate tiny layers; recompute overflow stalls per the
        # event-simulated schedule (DPPU serves jobs * ckk multiplier-
        # cycles at dppu per cycle)
        overflow = (-(-(jobs - dppu) * ckk // dppu)
                    if dppu and jobs > dppu else 0)
        tile_cycles = max(ckk + overflow, used_cols + jobs)
        total_cycles += tile_cycles
        if first_tile_report is None:
            first_tile_report = (used_cols, jobs)

    rep_cols, rep_jobs = first_tile_report
    t_it = max(ckk, rep_cols + rep_jobs)
    dppu_write = min(rep_jobs, dppu) if hca is not None else 0
    _, t_penalty = stall_penalty(rep_jobs, dppu, layer.in_channels,
                                 layer.kernel_size) if hca is not None else (0, 0)
    report = TimelineReport(
        t_iteration=t_it,
        t_2d_array_write=rep_cols,
        t_dppu_write=dppu_write,
        t_idle=t_it + t_stall_eq - rep_cols - dppu_write,
        t_stall=t_stall_eq,
        t_penalty=t_penalty,
        iterations=mapping.n_tiles,
        total_cycles=total_cycles,
    )
    return FxpTensor(out, out_frac), report


def fault_free_cycles(layer: LayerSpec, out_dims: tuple[int, int, int],
                      cfg: ArrayConfig) -> int:
    """Total cycles of the layer on a healthy array (same tile model)."""
    mapping = map_layer(layer, out_dims, cfg)
    ckk = layer.in_channels * layer.kernel_size ** 2
    total = 0
    for tile in range(mapping.n_tiles):
        _, used_cols = mapping.used_pes(tile)
        total += max(ckk, used_cols)
    return total
