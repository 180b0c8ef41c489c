"""Repair feasibility and graceful degradation for PE-array redundancy.

Four schemes are analyzed:

* RR: each row owns `spares_per_row` spare PEs shared within the row.
* CR: each column owns `spares_per_column` spares.
* DR: diagonal unit i owns one spare covering row i and column i;
  assignment is solved by exact bipartite matching (Hopcroft-Karp),
  not greedily, since shared units admit assignment choice.
* HCA: a DPPU with `dppu_size` multipliers recomputes outputs of faulty
  PEs anywhere in the array; fully functional while the number of
  faulty PEs stays within the DPPU size and the DPPU itself is alive.

When a scheme cannot repair everything, the array degrades to the
widest prefix of columns it can still operate (the data flow requires a
continuous array anchored at the buffers), and for HCA the stall-mode
alternative (Eq. T_stall = fault_PE_num - DPPU_size,
T_penalty = T_stall * c*k*k / DPPU_size) is weighed against discarding.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .faults import ClusterParams, FaultModel, FaultSet
from .fxp import LayerSpec
from .rng import Rng

SCHEMES = ("none", "rr", "cr", "dr", "hca")


@dataclass(frozen=True)
class HcaConfig:
    """Hybrid computing architecture sizing.

    The ping-pong weight register file holds two iterations' worth of
    operands, hence depth 2 * dppu_size; dppu_size doubles as the
    maximum number of faulty PEs tolerated without any penalty.
    """

    dppu_size: int = 16
    multiplier_group_size: int = 4  # +1 redundant, chained, per group
    adder_group_size: int = 3       # +1 redundant per adder-tree group

    def __post_init__(self):
        if self.dppu_size < 1:
            raise ValueError("dppu_size must be >= 1")
        if self.multiplier_group_size < 1 or self.adder_group_size < 1:
            raise ValueError("group sizes must be >= 1")

    @property
    def weight_regfile_depth(self) -> int:
        return 2 * self.dppu_size

    @property
    def adder_count(self) -> int:
        return self.dppu_size - 1  # binary adder tree


@dataclass(frozen=True)
class DppuState:
    """Fault state of the DPPU's own arithmetic units."""

    faulty_multipliers: tuple[int, ...] = ()
    faulty_adders: tuple[int, ...] = ()


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "none"
    spares_per_row: int = 1      # RR
    spares_per_column: int = 1   # CR
    diagonal_units: int | None = None  # DR; defaults to min(rows, cols)
    hca: HcaConfig = field(default_factory=HcaConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.spares_per_row < 0 or self.spares_per_column < 0:
            raise ValueError("spare counts must be >= 0")
        if self.diagonal_units is not None and self.diagonal_units < 0:
            raise ValueError("diagonal_units must be >= 0")


@dataclass(frozen=True)
class RepairOutcome:
    fully_functional: bool
    repaired_pes: tuple[tuple[int, int], ...]
    unrepaired_pes: tuple[tuple[int, int], ...]
    remaining_cols: int
    t_stall: int = 0
    t_penalty: float = 0
    mode: str = "full"  # full | stall | discard


def dppu_functional(state: DppuState | None, hca: HcaConfig) -> bool:
    """The DPPU survives while every multiplier group and every adder
    group contains at most one faulty unit (one redundant unit each,
    chained so a unit replaces its downstream neighbor)."""
    if state is None:
        return True
    for idx in state.faulty_multipliers:
        if not 0 <= idx < hca.dppu_size:
            raise ValueError(f"multiplier index {idx} outside DPPU")
    for idx in state.faulty_adders:
        if not 0 <= idx < hca.adder_count:
            raise ValueError(f"adder index {idx} outside adder tree")
    for units, group in ((state.faulty_multipliers, hca.multiplier_group_size),
                         (state.faulty_adders, hca.adder_group_size)):
        per_group: dict[int, int] = {}
        for idx in set(units):
            g = idx // group
            per_group[g] = per_group.get(g, 0) + 1
            if per_group[g] > 1:
                return False
    return True


def stall_penalty(fault_pe_num: int, dppu_size: int, c: int, k: int):
    """(T_stall, T_penalty): stall is the recompute overflow beyond the
    DPPU size, penalty the resulting extra cycles per iteration."""
    if fault_pe_num <= dppu_size:
        return 0, 0
    t_stall = fault_pe_num - dppu_size
    if dppu_size == 0:
        return t_stall, math.inf
    ckk = c * k * k
    penalty = Fraction(t_stall * ckk, dppu_size)
    return t_stall, (int(penalty) if penalty.denominator == 1 else float(penalty))


# --- feasibility rules ----------------------------------------------------


def _hopcroft_karp(adj: list[list[int]], n_right: int) -> int:
    """Maximum matching size for a bipartite graph given left adjacency."""
    inf = float("inf")
    n_left = len(adj)
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    dist = [0.0] * n_left

    def bfs() -> bool:
        q = deque()
        for u in range(n_left):
            if match_l[u] == -1:
                dist[u] = 0.0
                q.append(u)
            else:
                dist[u] = inf
        found = False
        while q:
            u = q.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    q.append(w)
        return found

    def dfs(u: int) -> bool:
        for v in adj[u]:
            w = match_r[v]
            if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                match_l[u] = v
                match_r[v] = u
                return True
        dist[u] = inf
        return False

    matching = 0
    while bfs():
        for u in range(n_left):
            if match_l[u] == -1 and dfs(u):
                matching += 1
    return matching


def _dr_feasible(pes: list[tuple[int, int]], n_units: int) -> bool:
    adj = []
    for r, c in pes:
        units = sorted({u for u in (r, c) if u < n_units})
        adj.append(units)
    return _hopcroft_karp(adj, n_units) == len(pes)


def _scheme_feasible(scheme: SchemeConfig, pes: list[tuple[int, int]],
                     dims: tuple[int, int], effective_dppu: int) -> bool:
    rows, cols = dims
    if scheme.scheme == "none":
        return not pes
    if scheme.scheme == "rr":
        counts: dict[int, int] = {}
        for r, _ in pes:
            counts[r] = counts.get(r, 0) + 1
        return all(n <= scheme.spares_per_row for n in counts.values())
    if scheme.scheme == "cr":
        counts = {}
        for _, c in pes:
            counts[c] = counts.get(c, 0) + 1
        return all(n <= scheme.spares_per_column for n in counts.values())
    if scheme.scheme == "dr":
        n_units = scheme.diagonal_units
        if n_units is None:
            n_units = min(rows, cols)
        return _dr_feasible(pes, n_units)
    if scheme.scheme == "hca":
        return len(pes) <= effective_dppu
    raise ValueError(scheme.scheme)


def _prefix_limit(scheme: SchemeConfig, faults: FaultSet, dims: tuple[int, int],
                  effective_dppu: int) -> int:
    """Widest column prefix [0, P) whose faults the scheme fully repairs.

    Everything from the first unrepairable column rightward is
    discarded; the kept array must stay continuous and buffer-anchored.
    """
    rows, cols = dims
    for p in range(cols, -1, -1):
        subset = [pe for pe in faults.faulty_pes if pe[1] < p]
        if _scheme_feasible(scheme, subset, dims, effective_dppu):
            return p
    return 0


def repair(scheme: SchemeConfig, faults: FaultSet, dims: tuple[int, int],
           dppu_state: DppuState | None = None) -> RepairOutcome:
    """Apply a redundancy scheme to a fault set.

    Feasibility: RR iff every row's fault count fits its spares, CR
    symmetric per column, DR iff a bipartite matching assigns each
    faulty PE (r, c) to an unused diagonal unit i with i = r or i = c,
    HCA iff the faulty-PE count fits the DPPU and the DPPU is alive.
    """
    rows, cols = dims
    faults.check_within(rows, cols)
    pes = list(faults.faulty_pes)
    eff_dppu = scheme.hca.dppu_size
    if scheme.scheme == "hca" and not dppu_functional(dppu_state, scheme.hca):
        eff_dppu = 0
    if _scheme_feasible(scheme, pes, dims, eff_dppu):
        return RepairOutcome(
            fully_functional=True, repaired_pes=tuple(pes), unrepaired_pes=(),
            remaining_cols=cols, t_stall=0, t_penalty=0, mode="full")
    p = _prefix_limit(scheme, faults, dims, eff_dppu)
    repaired = tuple(pe for pe in pes if pe[1] < p)
    unrepaired = tuple(pe for pe in pes if pe[1] >= p)
    t_stall = max(0, len(pes) - eff_dppu) if scheme.scheme == "hca" else 0
    return RepairOutcome(
        fully_functional=False, repaired_pes=repaired, unrepaired_pes=unrepaired,
        remaining_cols=p, t_stall=t_stall, t_penalty=0, mode="discard")


def remaining_array(faults: FaultSet, hca: HcaConfig, dims: tuple[int, int],
                    effective_dppu: int | None = None) -> int:
    """Largest P such that the faulty PEs in columns [0, P) fit the DPPU."""
    budget = hca.dppu_size if effective_dppu is None else effective_dppu
    cols = dims[1]
    cols_sorted = sorted(pe[1] for pe in faults.faulty_pes)
    if len(cols_sorted) <= budget:
        return cols
    # the (budget+1)-th faulty column is the first one that cannot be kept
    return cols_sorted[budget]


def degrade_decision(faults: FaultSet, hca: HcaConfig, dims: tuple[int, int],
                     c: int, k: int,
                     dppu_state: DppuState | None = None) -> RepairOutcome:
    """Choose between stalling the full array and discarding columns.

    Steady-state throughput comparison: stall mode yields Col outputs
    per (c*k*k + T_penalty) cycles, discard mode remaining_cols outputs
    per c*k*k cycles; ties break to discard (simpler control).
    """
    rows, cols = dims
    faults.check_within(rows, cols)
    eff_dppu = hca.dppu_size if dppu_functional(dppu_state, hca) else 0
    n = faults.fault_pe_num
    pes = tuple(faults.faulty_pes)
    if n <= eff_dppu:
        return RepairOutcome(True, pes, (), cols, 0, 0, "full")
    p = remaining_array(faults, hca, dims, effective_dppu=eff_dppu)
    t_stall, t_penalty = stall_penalty(n, eff_dppu, c, k)
    ckk = c * k * k
    discard_tp = Fraction(p, ckk)
    if eff_dppu == 0:
        stall_tp = Fraction(0)
    else:
        stall_tp = Fraction(cols * eff_dppu, eff_dppu * ckk + t_stall * ckk)
    if discard_tp >= stall_tp:
        repaired = tuple(pe for pe in pes if pe[1] < p)
        unrepaired = tuple(pe for pe in pes if pe[1] >= p)
        return RepairOutcome(False, repaired, unrepaired, p,
                             t_stall, t_penalty, "discard")
    return RepairOutcome(False, pes, (), cols, t_stall, t_penalty, "stall")


def remaining_power(scheme: SchemeConfig, faults: FaultSet, dims: tuple[int, int],
                    dppu_state: DppuState | None = None) -> float:
    """Post-degradation throughput normalized to the fault-free array."""
    outcome = repair(scheme, faults, dims, dppu_state)
    return outcome.remaining_cols / dims[1]


def layer_cycles(layer: LayerSpec, out_dims: tuple[int, int, int],
                 active_rows: int, active_cols: int) -> int:
    """Analytical steady-state cycles for one layer on a (possibly
    degraded) array: tiles * c*k*k."""
    if active_rows < 1 or active_cols < 1:
        raise ValueError("active array dimensions must be >= 1")
    ho, wo, o = out_dims
    pixels = ho * wo
    tiles = math.ceil(pixels / active_rows) * math.ceil(o / active_cols)
    return tiles * layer.in_channels * layer.kernel_size ** 2


# --- Monte Carlo ----------------------------------------------------------


def _sample_dppu_state(hca: HcaConfig, pe_rate: float, rng: Rng) -> DppuState:
    """Each DPPU arithmetic unit treated like a PE at the same fault rate."""
    mults = tuple(int(i) for i in rng.bernoulli(hca.dppu_size, pe_rate).nonzero()[0])
    adders = tuple(int(i) for i in rng.bernoulli(hca.adder_count, pe_rate).nonzero()[0])
    return DppuState(mults, adders)


def _mc_trial(scheme: SchemeConfig, model_kind: str, cluster_params,
              pe_rate: float, dims: tuple[int, int], trial_rng: Rng,
              include_dppu_faults: bool) -> RepairOutcome:
    trial_model = FaultModel(kind=model_kind, pe_rate=pe_rate,
                             cluster_params=cluster_params)
    faults = trial_model.sample(dims, trial_rng)
    state = None
    if scheme.scheme == "hca" and include_dppu_faults:
        state = _sample_dppu_state(scheme.hca, pe_rate, trial_rng)
    return repair(scheme, faults, dims, state)


def fully_functional_probability(
        scheme: SchemeConfig, fault_model: FaultModel, pe_rate: float,
        trials: int, rng: Rng, dims: tuple[int, int] = (32, 16),
        include_dppu_faults: bool = True) -> tuple[float, float]:
    """Monte-Carlo estimate (probability, stderr) of full repair.

    Trial streams are derived from the trial index only, so sweeps over
    pe_rate share common random numbers and the estimate is monotone.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hits = 0
    for t in range(trials):
        outcome = _mc_trial(scheme, fault_model.kind, fault_model.cluster_params,
                            pe_rate, dims, rng.spawn("fftrial", t),
                            include_dppu_faults)
        hits += outcome.fully_functional
    p = hits / trials
    return p, math.sqrt(p * (1.0 - p) / trials)


def reliability_sweep(schemes: list[SchemeConfig], model_kinds: list[str],
                      rates: list[float], trials: int, seed: int,
                      dims: tuple[int, int] = (32, 16),
                      include_dppu_faults: bool = True) -> list[dict]:
    """Full sweep producing one row per (scheme, model, rate) with the
    fully-functional probability and the mean remaining computing power."""
    rows = []
    master = Rng(seed)
    cluster_params = ClusterParams()
    for scheme in schemes:
        for kind in model_kinds:
            for rate in rates:
                hits = 0
                power = 0.0
                for t in range(trials):
                    outcome = _mc_trial(scheme, kind, cluster_params, rate, dims,
                                        master.spawn("fftrial", t),
                                        include_dppu_faults)
                    hits += outcome.fully_functional
                    power += outcome.remaining_cols / dims[1]
                p = hits / trials
                rows.append({
                    "scheme": scheme.scheme,
                    "model": kind,
                    "pe_rate": rate,
                    "trials": trials,
                    "ff_probability": p,
                    "stderr": math.sqrt(p * (1.0 - p) / trials),
                    "mean_remaining_power": power / trials,
                })
    return rows
