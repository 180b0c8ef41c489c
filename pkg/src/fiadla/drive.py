"""Desk-scale closed-loop driving simulation.

A kinematic bicycle vehicle follows seeded routes (constant-curvature
arc sequences) under four weather settings, steered by a small
quantized int8 controller network executed through the fault-injection
path.  Two execution paths exist:

* fast: the network runs on the bit-exact reference engine with SEU
  bit flips injected into the input, the weights (fresh each
  inference) and every inter-layer activation;
* array-sim: each layer runs through the cycle-level array simulator
  with persistent PE faults.

Each step also evaluates the uncorrupted network on the same
observation, so network-level metrics (golden vs faulty controls) fall
out of the same closed-loop trace that produces the driving metrics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import array_sim
from .faults import EMPTY_FAULTS, FaultSet, inject_seu
from .fxp import FxpTensor, LayerSpec, Network, forward, layer_ref, quantize
from .redundancy import HcaConfig
from .rng import Rng, derive_seed

# vehicle and mission constants
DT = 0.05                # s
WHEELBASE = 2.5          # m
MAX_STEER = 0.5          # rad
MAX_ACCEL = 3.0          # m/s^2
MAX_BRAKE = 6.0          # m/s^2
V_TARGET = 8.0           # m/s
V_MAX = 12.0             # m/s
ROUTE_LENGTH = 500.0     # m
CORRIDOR_HALF_WIDTH = 2.0  # m
PREVIEW_DISTANCE = 10.0  # m
KAPPA_MAX = 0.05         # 1/m
SEGMENT_LENGTH = (25.0, 60.0)  # m
PATH_STEP = 0.5          # m between route vertices
OBS_FRAC_BITS = 5

# weather table: observation noise sigma (normalized units) and friction
WEATHER_SIGMA = (0.0, 0.01, 0.02, 0.04)
WEATHER_MU = (1.0, 0.95, 0.9, 0.8)

N_PATHS_DEFAULT = 25
N_WEATHERS_DEFAULT = 4


@dataclass(frozen=True, eq=False)
class Mission:
    """One driving task: a route polyline plus a weather setting."""

    id: int
    path_index: int
    weather: int
    seed: int
    xs: np.ndarray           # vertex coordinates (m)
    ys: np.ndarray
    arc: np.ndarray          # per-vertex arc length, strictly increasing
    headings: np.ndarray     # path tangent per vertex (rad)
    curvatures: np.ndarray   # signed curvature per vertex (1/m)

    @property
    def route_length(self) -> float:
        return float(self.arc[-1])

    def summary(self) -> dict:
        return {"id": self.id, "path": self.path_index,
                "weather": self.weather, "seed": self.seed,
                "route_length": self.route_length}


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    odometer: float = 0.0
    s: float = 0.0  # along-route progress (m)


@dataclass(frozen=True)
class Controls:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        for name in ("steer", "throttle", "brake"):
            v = getattr(self, name)
            object.__setattr__(self, name, min(1.0, max(-1.0, v)))

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.throttle, self.brake])


@dataclass
class StepRecord:
    step: int
    state: VehicleState
    observation: tuple[int, ...]          # quantized int8 values
    golden: tuple[float, float, float]    # steer, throttle, brake
    faulty: tuple[float, float, float]
    flips: int


@dataclass
class DrivingLog:
    mission_id: int
    seed: int
    ber: float
    path_mode: str
    records: list[StepRecord] = field(default_factory=list)
    termination: str = "timeout"   # success | off_corridor | timeout
    distance_traveled: float = 0.0
    progress_at_end: float = 0.0
    route_length: float = ROUTE_LENGTH

    def golden_sequence(self) -> np.ndarray:
        return np.array([r.golden for r in self.records])

    def faulty_sequence(self) -> np.ndarray:
        return np.array([r.faulty for r in self.records])

    @property
    def success(self) -> bool:
        return self.termination == "success"

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def total_flips(self) -> int:
        return sum(r.flips for r in self.records)

    def step_lines(self):
        """Per-step records as line-delimited JSON (documented field order)."""
        for r in self.records:
            st = r.state
            yield json.dumps({
                "step": r.step, "x": round(st.x, 6), "y": round(st.y, 6),
                "heading": round(st.heading, 6), "speed": round(st.speed, 6),
                "odometer": round(st.odometer, 6), "s": round(st.s, 6),
                "obs": list(r.observation),
                "golden": [round(v, 6) for v in r.golden],
                "faulty": [round(v, 6) for v in r.faulty],
                "flips": r.flips,
            }, separators=(",", ":"))

    def summary_line(self) -> str:
        return json.dumps({
            "mission": self.mission_id, "ber": self.ber, "seed": self.seed,
            "path_mode": self.path_mode, "termination": self.termination,
            "steps": self.steps, "tdt_m": round(self.distance_traveled, 6),
            "mc": round(self.progress_at_end / self.route_length, 9),
            "flips": self.total_flips,
        }, separators=(",", ":"))


# --- mission generation -----------------------------------------------------


def _build_path(rng: Rng, total_length: float):
    """Sample a constant-curvature arc sequence and rasterize it at
    PATH_STEP spacing using exact arc geometry."""
    segments = []
    length = 0.0
    while length < total_length:
        seg_len = SEGMENT_LENGTH[0] + rng.uniform() * (
            SEGMENT_LENGTH[1] - SEGMENT_LENGTH[0])
        seg_len = min(seg_len, total_length - length)
        kappa = (2.0 * rng.uniform() - 1.0) * KAPPA_MAX
        segments.append((seg_len, kappa))
        length += seg_len

    n = int(round(total_length / PATH_STEP)) + 1
    xs = np.empty(n)
    ys = np.empty(n)
    arc = np.empty(n)
    headings = np.empty(n)
    curvatures = np.empty(n)
    x = y = theta = 0.0
    seg_idx, seg_used = 0, 0.0
    for i in range(n):
        s = min(i * PATH_STEP, total_length)
        xs[i], ys[i], arc[i], headings[i] = x, y, s, theta
        while seg_idx < len(segments) and seg_used >= segments[seg_idx][0] - 1e-9:
            seg_used = 0.0
            seg_idx += 1
        kappa = segments[min(seg_idx, len(segments) - 1)][1]
        curvatures[i] = kappa
        if i == n - 1:
            break
        ds = min(PATH_STEP, total_length - s)
        if abs(kappa) < 1e-12:
            x += ds * math.cos(theta)
            y += ds * math.sin(theta)
        else:
            x += (math.sin(theta + kappa * ds) - math.sin(theta)) / kappa
            y += -(math.cos(theta + kappa * ds) - math.cos(theta)) / kappa
        theta += kappa * ds
        seg_used += ds
    arc[-1] = total_length
    return xs, ys, arc, headings, curvatures


def generate_missions(n_paths: int = N_PATHS_DEFAULT,
                      n_weathers: int = N_WEATHERS_DEFAULT,
                      seed: int = 0,
                      route_length: float = ROUTE_LENGTH) -> list[Mission]:
    """The benchmark set: n_paths seeded routes under n_weathers weather
    settings each (default 25 x 4 = 100 missions)."""
    if not 1 <= n_weathers <= len(WEATHER_SIGMA):
        raise ValueError(f"n_weathers must be in [1, {len(WEATHER_SIGMA)}]")
    missions = []
    for p in range(n_paths):
        path_seed = derive_seed(seed, "path", p)
        xs, ys, arc, headings, curvatures = _build_path(Rng(path_seed),
                                                        route_length)
        for w in range(n_weathers):
            missions.append(Mission(
                id=p * n_weathers + w, path_index=p, weather=w,
                seed=derive_seed(seed, "mission", p, w),
                xs=xs, ys=ys, arc=arc, headings=headings,
                curvatures=curvatures))
    return missions


def straight_mission(weather: int = 0, route_length: float = ROUTE_LENGTH,
                     mission_id: int = 0) -> Mission:
    """Zero-curvature route, handy for equilibrium checks."""
    n = int(round(route_length / PATH_STEP)) + 1
    xs = np.arange(n) * PATH_STEP
    return Mission(id=mission_id, path_index=0, weather=weather, seed=0,
                   xs=xs, ys=np.zeros(n), arc=xs.copy(),
                   headings=np.zeros(n), curvatures=np.zeros(n))


# --- observation -------------------------------------------------------------


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def locate_on_path(mission: Mission, x: float, y: float,
                   s_hint: float) -> tuple[float, float]:
    """Project a position onto the route near the current progress.

    Returns (arc length s, signed lateral error); positive error lies
    to the left of the path tangent.  The search window around the hint
    comfortably covers one step of travel.
    """
    idx = int(s_hint / PATH_STEP)
    lo = max(0, idx - 6)
    hi = min(len(mission.xs) - 1, idx + 8)
    best_s, best_d, best_sign = 0.0, math.inf, 1.0
    for i in range(lo, hi):
        ax, ay = mission.xs[i], mission.ys[i]
        bx, by = mission.xs[i + 1], mission.ys[i + 1]
        vx, vy = bx - ax, by - ay
        seg2 = vx * vx + vy * vy
        t = 0.0 if seg2 == 0.0 else ((x - ax) * vx + (y - ay) * vy) / seg2
        t = min(1.0, max(0.0, t))
        px, py = ax + t * vx, ay + t * vy
        d2 = (x - px) ** 2 + (y - py) ** 2
        if d2 < best_d:
            best_d = d2
            best_s = mission.arc[i] + t * (mission.arc[i + 1] - mission.arc[i])
            cross = vx * (y - ay) - vy * (x - ax)
            best_sign = 1.0 if cross >= 0.0 else -1.0
    return best_s, best_sign * math.sqrt(best_d)


def _path_value(mission: Mission, s: float, values: np.ndarray) -> float:
    idx = min(len(values) - 1, max(0, int(round(s / PATH_STEP))))
    return float(values[idx])


def weather_noise(rng: Rng, weather: int) -> np.ndarray:
    """Additive gaussian noise on the normalized observation."""
    sigma = WEATHER_SIGMA[weather]
    return np.array([rng.gauss() for _ in range(4)]) * sigma


def observe(state: VehicleState, mission: Mission, rng: Rng) -> FxpTensor:
    """Four-feature observation, weather-perturbed and quantized to int8:
    [lateral error / corridor half-width, heading error / pi,
    preview curvature * preview distance, (v_target - v) / v_max]."""
    s, e_lat = locate_on_path(mission, state.x, state.y, state.s)
    path_heading = _path_value(mission, s, mission.headings)
    e_head = _wrap_angle(state.heading - path_heading)
    s_prev = min(mission.route_length, s + PREVIEW_DISTANCE)
    kappa = _path_value(mission, s_prev, mission.curvatures)
    obs = np.array([
        e_lat / CORRIDOR_HALF_WIDTH,
        e_head / math.pi,
        kappa * PREVIEW_DISTANCE,
        (V_TARGET - state.speed) / V_MAX,
    ])
    obs = obs + weather_noise(rng, mission.weather)
    return quantize(obs.reshape(1, 1, 4), OBS_FRAC_BITS)


def vehicle_step(state: VehicleState, controls: Controls, dt: float = DT,
                 weather: int = 0) -> VehicleState:
    """Kinematic bicycle step: front steering, friction-scaled
    longitudinal acceleration, speed clamped non-negative."""
    mu = WEATHER_MU[weather]
    delta = controls.steer * MAX_STEER
    accel = mu * (controls.throttle * MAX_ACCEL - controls.brake * MAX_BRAKE)
    v = state.speed
    x = state.x + v * math.cos(state.heading) * dt
    y = state.y + v * math.sin(state.heading) * dt
    heading = state.heading + (v * math.tan(delta) / WHEELBASE) * dt
    v = max(0.0, min(V_MAX, v + accel * dt))
    return VehicleState(x=x, y=y, heading=heading, speed=v,
                        odometer=state.odometer + state.speed * dt,
                        s=state.s)


# --- controller --------------------------------------------------------------


def build_reference_controller() -> Network:
    """Hand-constructed 4 -> 8 -> 3 int8 controller.

    Steering is a PD-style law on lateral/heading error plus curvature
    feedforward; throttle is proportional speed control with a small
    cruise bias; the brake output stays at zero (negative throttle
    already decelerates).  Two identical hidden banks carry the
    observation (heading error pre-scaled by two for gain headroom).
    """
    w1 = np.zeros((1, 1, 4, 8), dtype=np.int8)
    for bank in (0, 4):
        w1[0, 0, 0, bank + 0] = 32   # lateral error, gain 1.0
        w1[0, 0, 1, bank + 1] = 64   # heading error, gain 2.0
        w1[0, 0, 2, bank + 2] = 32   # preview curvature
        w1[0, 0, 3, bank + 3] = 32   # speed error
    layer1 = LayerSpec("fc", 4, 8, activation="none", requant_shift=5)

    w2 = np.zeros((1, 1, 8, 3), dtype=np.int8)
    for bank in (0, 4):
        w2[0, 0, bank + 0, 0] = -8    # steer: -0.5 * lateral
        w2[0, 0, bank + 1, 0] = -42   # steer: -5.25 * heading (via x2 bank)
        w2[0, 0, bank + 2, 0] = 8     # steer: +0.5 * preview curvature
        w2[0, 0, bank + 3, 1] = 24    # throttle: 1.5 * speed error
    bias2 = np.array([0, 64, 0], dtype=np.int64)  # cruise bias ~0.06 throttle
    layer2 = LayerSpec("fc", 8, 3, activation="hard_tanh", requant_shift=5)

    return Network(
        "reference-controller",
        [layer1, layer2],
        [FxpTensor(w1, 5), FxpTensor(w2, 5)],
        [None, bias2],
    )


def controls_from_output(out: FxpTensor) -> Controls:
    steer, throttle, brake = out.to_real().reshape(-1)
    return Controls(steer=float(steer), throttle=float(throttle),
                    brake=float(brake))


# --- closed loop -------------------------------------------------------------


def _faulty_forward_fast(net: Network, obs: FxpTensor, ber: float,
                         rng: Rng) -> tuple[FxpTensor, int]:
    """SEU-injected inference: input, weights (fresh every call) and
    every inter-layer activation get independent bit flips."""
    flips = 0
    obs_c, log = inject_seu(obs, ber, rng)
    flips += len(log)
    corrupted = []
    for w in net.weights:
        w_c, log = inject_seu(w, ber, rng)
        flips += len(log)
        corrupted.append(w_c)

    def tap(_i, act):
        nonlocal flips
        act_c, tap_log = inject_seu(act, ber, rng)
        flips += len(tap_log)
        return act_c

    out = forward(net.with_weights(corrupted), obs_c, tap)
    return out, flips


def _faulty_forward_array(net: Network, obs: FxpTensor, faults: FaultSet,
                          cfg: array_sim.ArrayConfig,
                          hca: HcaConfig | None) -> FxpTensor:
    """Cycle-level inference with persistent PE faults on every layer."""
    x = obs
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        x, _ = array_sim.simulate_layer(x, w, spec, cfg, hca=hca,
                                        faults=faults, bias=b)
    return x


def run_mission(mission: Mission, net: Network, ber: float, seed: int,
                path_mode: str = "fast",
                faults: FaultSet | None = None,
                array_cfg: array_sim.ArrayConfig | None = None,
                hca: HcaConfig | None = None) -> DrivingLog:
    """Drive one mission closed-loop and log every step.

    Terminates on success (full route progress), corridor departure
    (|lateral error| > 2 m) or timeout.  The trajectory follows the
    faulty controls; golden controls are evaluated on the same
    observations for the network-level metrics.
    """
    if net.layers[0].in_channels != 4 or net.layers[-1].out_channels != 3:
        raise ValueError("controller must map 4 observations to 3 controls")
    if path_mode not in ("fast", "array-sim"):
        raise ValueError(f"unknown path mode {path_mode!r}")
    faults = EMPTY_FAULTS if faults is None else faults
    cfg = array_cfg or array_sim.ArrayConfig()
    rng_noise = Rng(derive_seed(seed, "noise"))
    rng_inject = Rng(derive_seed(seed, "inject"))

    state = VehicleState(x=float(mission.xs[0]), y=float(mission.ys[0]),
                         heading=float(mission.headings[0]))
    log = DrivingLog(mission_id=mission.id, seed=seed, ber=ber,
                     path_mode=path_mode, route_length=mission.route_length)
    max_steps = int(3 * mission.route_length / (V_TARGET * DT))

    for step in range(max_steps):
        s, e_lat = locate_on_path(mission, state.x, state.y, state.s)
        state = replace(state, s=min(s, mission.route_length))
        if mission.route_length - s < 1e-9:
            state = replace(state, s=mission.route_length)
            log.termination = "success"
            break
        if abs(e_lat) > CORRIDOR_HALF_WIDTH:
            log.termination = "off_corridor"
            break

        obs = observe(state, mission, rng_noise)
        golden_out = forward(net, obs)
        if path_mode == "fast":
            faulty_out, flips = _faulty_forward_fast(net, obs, ber, rng_inject)
        else:
            faulty_out = _faulty_forward_array(net, obs, faults, cfg, hca)
            flips = 0
        golden = controls_from_output(golden_out)
        faulty = controls_from_output(faulty_out)

        log.records.append(StepRecord(
            step=step, state=state,
            observation=tuple(int(v) for v in obs.data.reshape(-1)),
            golden=(golden.steer, golden.throttle, golden.brake),
            faulty=(faulty.steer, faulty.throttle, faulty.brake),
            flips=flips))
        state = vehicle_step(state, faulty, DT, mission.weather)

    log.distance_traveled = state.odometer
    log.progress_at_end = state.s
    return log
