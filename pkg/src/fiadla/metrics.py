"""Network-level and driving-level reliability metrics.

Network level compares faulty against golden control sequences per
inference step; driving level summarizes closed-loop mission outcomes.
All functions are pure over immutable logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drive import DrivingLog

ER_THRESHOLD = 0.01  # control-unit differences at or below this are ignored


@dataclass(frozen=True)
class NetworkMetrics:
    er: float          # fraction of inferences deviating beyond threshold
    mae: float         # mean absolute control error
    n_inferences: int


@dataclass(frozen=True)
class DrivingMetrics:
    msr: float                      # fraction of successful missions
    mc: tuple[float, ...]           # per-mission completed route fraction
    tdt: tuple[float, ...]          # per-mission odometer distance (m)
    mc_mean: float
    mc_std: float
    mc_cov: float
    tdt_mean: float
    tdt_std: float


def _as_sequences(faulty, golden) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(faulty, dtype=np.float64)
    g = np.asarray(golden, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError(f"sequence shapes differ: {f.shape} vs {g.shape}")
    return f, g


def error_rate(faulty, golden, threshold: float = ER_THRESHOLD,
               per_component: bool = False) -> float:
    """Fraction of inference steps whose output deviates from golden by
    more than `threshold` (in dequantized control units).

    Default counts a step when any of its components deviates; the
    per-component alternative averages component-level exceedances
    (for sensitivity analysis, the definitions coincide at 0).
    """
    f, g = _as_sequences(faulty, golden)
    if f.size == 0:
        return 0.0
    exceeds = np.abs(f - g) > threshold
    if per_component:
        return float(exceeds.mean())
    return float(exceeds.any(axis=-1).mean())


def mae(faulty, golden) -> float:
    """Mean absolute error over all steps and control components."""
    f, g = _as_sequences(faulty, golden)
    if f.size == 0:
        return 0.0
    return float(np.abs(f - g).mean())


def network_metrics(log: DrivingLog, threshold: float = ER_THRESHOLD,
                    per_component: bool = False) -> NetworkMetrics:
    faulty = log.faulty_sequence()
    golden = log.golden_sequence()
    return NetworkMetrics(
        er=error_rate(faulty, golden, threshold, per_component),
        mae=mae(faulty, golden),
        n_inferences=log.steps,
    )


def _cov(values: np.ndarray) -> float:
    m = values.mean()
    return float(values.std() / m) if m > 0 else 0.0


def driving_metrics(logs: list[DrivingLog]) -> DrivingMetrics:
    """MSR/MC/TDT over a mission set.

    MC uses along-route progress (circling in place does not count);
    TDT uses the odometer.
    """
    if not logs:
        return DrivingMetrics(0.0, (), (), 0.0, 0.0, 0.0, 0.0, 0.0)
    mc = np.array([log.progress_at_end / log.route_length for log in logs])
    tdt = np.array([log.distance_traveled for log in logs])
    successes = sum(log.success for log in logs)
    return DrivingMetrics(
        msr=successes / len(logs),
        mc=tuple(float(v) for v in mc),
        tdt=tuple(float(v) for v in tdt),
        mc_mean=float(mc.mean()),
        mc_std=float(mc.std()),
        mc_cov=_cov(mc),
        tdt_mean=float(tdt.mean()),
        tdt_std=float(tdt.std()),
    )
