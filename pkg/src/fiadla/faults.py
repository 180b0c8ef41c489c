"""Stochastic hardware-fault generation.

Two fault planes are modeled:

* PE faults: persistent stuck-at bits (or single-cycle transients) in
  the register file of individual processing elements, placed by a
  random or a clustered distribution model over the 2D array.
* SEU bit flips: transient single-event upsets applied to int8 tensors
  (inputs, weights, hidden activations) at a given bit error rate.

Each PE holds two 8-bit operand registers, a 16-bit product register
and a 32-bit accumulator, 64 register bits in total; a bit error rate
converts to a PE error rate as 1 - (1 - ber)^64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fxp import FxpTensor
from .rng import Rng

REGISTERS = ("input_a", "input_b", "product", "accumulator")
REGISTER_WIDTH = {"input_a": 8, "input_b": 8, "product": 16, "accumulator": 32}
REG_BIT_NUM = 64  # total register bits per PE
# global bit index -> (register, local bit) in layout order
_REG_BASE = {"input_a": 0, "input_b": 8, "product": 16, "accumulator": 32}

FAULT_KINDS = ("stuck_at_0", "stuck_at_1", "transient")


def pe_error_rate(bit_error_rate: float, reg_bit_num: int = REG_BIT_NUM) -> float:
    """Probability that at least one of a PE's register bits is faulty:
    1 - (1 - ber)^reg_bit_num."""
    if not 0.0 <= bit_error_rate <= 1.0:
        raise ValueError(f"bit error rate {bit_error_rate} outside [0, 1]")
    if reg_bit_num < 1:
        raise ValueError("reg_bit_num must be >= 1")
    if bit_error_rate == 1.0:
        return 1.0
    # -expm1(n*log1p(-p)) is accurate for tiny rates
    return -math.expm1(reg_bit_num * math.log1p(-bit_error_rate))


@dataclass(frozen=True, order=True)
class PeFault:
    """One faulty register bit of one PE."""

    row: int
    col: int
    register: str
    bit_index: int
    kind: str
    cycle: int = -1  # multiply-accumulate step index, transient faults only

    def __post_init__(self):
        if self.register not in REGISTERS:
            raise ValueError(f"unknown register {self.register!r}")
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        width = REGISTER_WIDTH[self.register]
        if not 0 <= self.bit_index < width:
            raise ValueError(
                f"bit {self.bit_index} outside {self.register} ({width} bits)")
        if self.kind == "transient" and self.cycle < 0:
            raise ValueError("transient faults need a cycle index")


@dataclass(frozen=True, eq=False)
class FaultSet:
    """A set of PE faults with deterministic (row-major) iteration order."""

    pe_faults: tuple[PeFault, ...]
    faulty_pes: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "pe_faults", tuple(sorted(self.pe_faults)))
        pes = sorted({(f.row, f.col) for f in self.pe_faults})
        object.__setattr__(self, "faulty_pes", tuple(pes))

    def __len__(self) -> int:
        return len(self.faulty_pes)

    @property
    def fault_pe_num(self) -> int:
        return len(self.faulty_pes)

    def faults_at(self, row: int, col: int) -> list[PeFault]:
        return [f for f in self.pe_faults if f.row == row and f.col == col]

    def check_within(self, rows: int, cols: int) -> None:
        for f in self.pe_faults:
            if not (0 <= f.row < rows and 0 <= f.col < cols):
                raise ValueError(f"fault at ({f.row}, {f.col}) outside "
                                 f"{rows}x{cols} array")

    def to_json(self) -> str:
        records = [
            {"row": f.row, "col": f.col, "register": f.register,
             "bit_index": f.bit_index, "kind": f.kind,
             **({"cycle": f.cycle} if f.kind == "transient" else {})}
            for f in self.pe_faults
        ]
        return json.dumps(records, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FaultSet":
        records = json.loads(text)
        return cls(tuple(
            PeFault(r["row"], r["col"], r["register"], r["bit_index"],
                    r["kind"], r.get("cycle", -1))
            for r in records
        ))


EMPTY_FAULTS = FaultSet(())


@dataclass(frozen=True)
class ClusterParams:
    """Clustered-model knobs: mean number of cluster centers (None derives
    max(1, round(expected_faults / 4))) and spread radius in PE cells."""

    count_mean: float | None = None
    radius: float = 2.0

    def __post_init__(self):
        if self.radius < 1.0:
            raise ValueError("cluster radius must be >= 1 cell")


@dataclass(frozen=True)
class FaultModel:
    """Fault distribution description used by reliability sweeps."""

    kind: str = "random"  # random | clustered
    bit_error_rate: float | None = None
    pe_rate: float | None = None
    cluster_params: ClusterParams = ClusterParams()

    def __post_init__(self):
        if self.kind not in ("random", "clustered"):
            raise ValueError(f"unknown fault model {self.kind!r}")
        ber, pe = self.bit_error_rate, self.pe_rate
        if ber is None and pe is None:
            raise ValueError("either bit_error_rate or pe_rate required")
        for name, rate in (("bit_error_rate", ber), ("pe_rate", pe)):
            if rate is not None and not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} {rate} outside [0, 1]")
        if ber is not None:
            derived = pe_error_rate(ber)
            if pe is None:
                object.__setattr__(self, "pe_rate", derived)
            elif abs(pe - derived) > 1e-12:
                raise ValueError(
                    f"pe_rate {pe} inconsistent with bit_error_rate {ber} "
                    f"(expected {derived})")

    def sample(self, dims: tuple[int, int], rng: Rng) -> FaultSet:
        if self.kind == "random":
            return sample_random_faults(dims, self.pe_rate, rng)
        return sample_clustered_faults(dims, self.pe_rate, self.cluster_params, rng)


def _attach_bit_faults(cells: list[tuple[int, int]], rng: Rng) -> FaultSet:
    """Give each faulty PE one uniformly chosen stuck-at bit among its 64."""
    faults = []
    for row, col in cells:
        bit = rng.randrange(REG_BIT_NUM)
        for register in REGISTERS:
            base = _REG_BASE[register]
            if base <= bit < base + REGISTER_WIDTH[register]:
                local = bit - base
                break
        kind = "stuck_at_1" if rng.next_u64() & 1 else "stuck_at_0"
        faults.append(PeFault(row, col, register, local, kind))
    return FaultSet(tuple(faults))


def sample_random_faults(dims: tuple[int, int], pe_rate: float, rng: Rng) -> FaultSet:
    """Each PE independently faulty with probability pe_rate."""
    rows, cols = dims
    if not 0.0 <= pe_rate <= 1.0:
        raise ValueError(f"pe_rate {pe_rate} outside [0, 1]")
    mask = rng.bernoulli(rows * cols, pe_rate)
    cells = [(int(i) // cols, int(i) % cols) for i in np.nonzero(mask)[0]]
    return _attach_bit_faults(cells, rng)


def sample_clustered_faults(dims: tuple[int, int], pe_rate: float,
                            params: ClusterParams, rng: Rng) -> FaultSet:
    """Manufacturing-defect style placement: faults land within `radius`
    of randomly drawn cluster centers; the faulty-PE count matches the
    random model in distribution (Binomial(rows*cols, pe_rate))."""
    rows, cols = dims
    if not 0.0 <= pe_rate <= 1.0:
        raise ValueError(f"pe_rate {pe_rate} outside [0, 1]")
    if params.radius < 1.0:
        raise ValueError("cluster radius must be >= 1 cell")
    target = rng.binomial(rows * cols, pe_rate)
    if target == 0:
        return EMPTY_FAULTS

    count_mean = params.count_mean
    if count_mean is None:
        count_mean = max(1.0, round(rows * cols * pe_rate / 4.0))
    n_centers = max(1, rng.poisson(count_mean))

    r2 = params.radius * params.radius

    def disk(center: tuple[int, int]) -> list[tuple[int, int]]:
        cr, cc = center
        reach = int(params.radius)
        return [
            (r, c)
            for r in range(max(0, cr - reach), min(rows, cr + reach + 1))
            for c in range(max(0, cc - reach), min(cols, cc + reach + 1))
            if (r - cr) ** 2 + (c - cc) ** 2 <= r2
        ]

    centers = [(rng.randrange(rows), rng.randrange(cols)) for _ in range(n_centers)]
    disks = [disk(c) for c in centers]
    placed: set[tuple[int, int]] = set()
    misses = 0
    while len(placed) < target:
        d = disks[rng.randrange(len(disks))]
        cell = d[rng.randrange(len(d))]
        if cell in placed:
            misses += 1
            if misses >= 64:  # local disks saturated; grow the cluster set
                centers.append((rng.randrange(rows), rng.randrange(cols)))
                disks.append(disk(centers[-1]))
                misses = 0
            continue
        placed.add(cell)
        misses = 0
    return _attach_bit_faults(sorted(placed), rng)


def inject_seu(tensor: FxpTensor, bit_error_rate: float,
               rng: Rng) -> tuple[FxpTensor, list[tuple[int, int]]]:
    """Flip every data bit independently with probability `bit_error_rate`.

    Returns a new tensor (the original is untouched) plus a flip log of
    (flat element index, bit index) pairs.
    """
    if not 0.0 <= bit_error_rate <= 1.0:
        raise ValueError(f"bit error rate {bit_error_rate} outside [0, 1]")
    n = tensor.data.size
    if bit_error_rate == 0.0 or n == 0:
        return tensor, []
    flips = rng.bernoulli(n * 8, bit_error_rate).reshape(n, 8)
    mask = np.zeros(n, dtype=np.uint8)
    for bit in range(8):
        mask |= flips[:, bit].astype(np.uint8) << bit
    flipped = (tensor.data.reshape(-1).view(np.uint8) ^ mask).view(np.int8)
    out = FxpTensor(flipped.reshape(tensor.dims).copy(), tensor.frac_bits)
    idx, bits = np.nonzero(flips)
    log = list(zip(idx.tolist(), bits.tolist()))
    return out, log
