"""Campaign orchestration: configuration, parallel mission execution,
aggregation and report files.

A campaign runs every (bit error rate, mission) pair of its
configuration, each with a seed derived from the master seed and the
pair's identity alone, so results are byte-identical for any worker
count or scheduling order.  Failures of individual tasks are recorded
in the manifest and the campaign continues (reliability campaigns are
long; fail-fast would waste completed work).
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import drive
from .drive import DrivingLog, Mission, generate_missions, run_mission
from .faults import FaultSet
from .fxp import Network, load_network
from .metrics import driving_metrics, network_metrics
from .redundancy import HcaConfig
from .rng import derive_seed, float_bits

DEFAULT_BERS = (0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
JOBS_ENV_VAR = "FIADLA_JOBS"

SUMMARY_COLUMNS = ("ber", "mission_id", "weather", "er", "mae", "success",
                   "mc", "tdt_m", "steps", "seed")
AGGREGATE_COLUMNS = ("ber", "missions", "msr", "er_mean", "er_std",
                     "mae_mean", "mae_std", "mae_cov", "mc_mean", "mc_std",
                     "mc_cov", "tdt_mean", "tdt_std")


class ConfigError(ValueError):
    """Configuration file rejected; message names the offending field."""


@dataclass
class CampaignConfig:
    seed: int
    bers: tuple[float, ...] = DEFAULT_BERS
    n_paths: int = drive.N_PATHS_DEFAULT
    n_weathers: int = drive.N_WEATHERS_DEFAULT
    path_mode: str = "fast"            # fast | array-sim
    jobs: int = 1
    out_dir: str = "results"
    write_step_logs: bool = False
    network_file: str | None = None    # default: built-in reference controller
    pe_rate: float = 0.0               # array-sim mode: PE fault rate per mission
    hca: bool = False                  # array-sim mode: enable HCA repair
    trials: int = 100_000              # reliability sweeps launched via the CLI

    _KNOWN = ("seed", "bers", "n_paths", "n_weathers", "path_mode", "jobs",
              "out_dir", "write_step_logs", "network_file", "pe_rate",
              "hca", "trials")

    def validate(self) -> None:
        for ber in self.bers:
            if not 0.0 <= ber <= 1.0:
                raise ConfigError(f"bers: value {ber} outside [0, 1]")
        if self.n_paths < 0 or self.n_weathers < 1:
            raise ConfigError("n_paths must be >= 0 and n_weathers >= 1")
        if self.path_mode not in ("fast", "array-sim"):
            raise ConfigError(f"path_mode: unknown mode {self.path_mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not 0.0 <= self.pe_rate <= 1.0:
            raise ConfigError(f"pe_rate: value {self.pe_rate} outside [0, 1]")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["bers"] = list(self.bers)
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_config(path) -> CampaignConfig:
    """Parse and validate a campaign configuration (JSON).

    Unknown keys are rejected; all fields except `seed` have defaults.
    """
    try:
        with open(path) as f:
            raw = f.read()
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - set(CampaignConfig._KNOWN)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "seed" not in doc:
        raise ConfigError("seed: required field missing")
    if "bers" in doc:
        doc["bers"] = tuple(float(b) for b in doc["bers"])
    cfg = CampaignConfig(**doc)
    cfg.validate()
    cfg._raw_text = raw  # byte-identical snapshot for provenance
    return cfg


def config_snapshot(cfg: CampaignConfig) -> str:
    return getattr(cfg, "_raw_text", cfg.to_json())


def mission_run_seed(master_seed: int, mission_id: int, ber: float) -> int:
    """Replayable per-task seed: master seed, mission identity and the
    BER's bit pattern (independent of its position in the sweep list)."""
    return derive_seed(master_seed, "mission-run", mission_id, float_bits(ber))


@dataclass(frozen=True)
class TaskResult:
    ber: float
    mission_id: int
    weather: int
    seed: int
    er: float
    mae: float
    success: bool
    mc: float
    tdt_m: float
    steps: int
    error: str | None = None
    step_lines: tuple[str, ...] = ()


@dataclass
class CampaignResult:
    rows: list[TaskResult]
    config_text: str
    wall_seconds: float
    failures: list[TaskResult] = field(default_factory=list)

    def sorted_rows(self) -> list[TaskResult]:
        return sorted(self.rows, key=lambda r: (r.ber, r.mission_id))

    def aggregates(self) -> list[dict]:
        out = []
        for ber in sorted({r.ber for r in self.rows}):
            rows = [r for r in self.rows if r.ber == ber and r.error is None]
            if not rows:
                continue
            er = np.array([r.er for r in rows])
            mae = np.array([r.mae for r in rows])
            mc = np.array([r.mc for r in rows])
            tdt = np.array([r.tdt_m for r in rows])
            cov = lambda a: float(a.std() / a.mean()) if a.mean() > 0 else 0.0
            out.append({
                "ber": ber, "missions": len(rows),
                "msr": sum(r.success for r in rows) / len(rows),
                "er_mean": float(er.mean()), "er_std": float(er.std()),
                "mae_mean": float(mae.mean()), "mae_std": float(mae.std()),
                "mae_cov": cov(mae),
                "mc_mean": float(mc.mean()), "mc_std": float(mc.std()),
                "mc_cov": cov(mc),
                "tdt_mean": float(tdt.mean()), "tdt_std": float(tdt.std()),
            })
        return out


# worker-side globals, initialized once per process
_WORKER_CTX: dict = {}


def _worker_init(missions: list[Mission], net: Network, path_mode: str,
                 faults_json: str | None, hca: HcaConfig | None):
    _WORKER_CTX["missions"] = {m.id: m for m in missions}
    _WORKER_CTX["net"] = net
    _WORKER_CTX["path_mode"] = path_mode
    _WORKER_CTX["faults"] = (FaultSet.from_json(faults_json)
                             if faults_json else None)
    _WORKER_CTX["hca"] = hca


def _run_task(task: tuple[int, float, int, bool]) -> TaskResult:
    mission_id, ber, seed, keep_steps = task
    mission = _WORKER_CTX["missions"][mission_id]
    try:
        log = run_mission(mission, _WORKER_CTX["net"], ber, seed,
                          path_mode=_WORKER_CTX["path_mode"],
                          faults=_WORKER_CTX["faults"],
                          hca=_WORKER_CTX["hca"])
        nm = network_metrics(log)
        return TaskResult(
            ber=ber, mission_id=mission_id, weather=mission.weather,
            seed=seed, er=nm.er, mae=nm.mae, success=log.success,
            mc=log.progress_at_end / log.route_length,
            tdt_m=log.distance_traveled, steps=log.steps,
            step_lines=tuple(log.step_lines()) if keep_steps else ())
    except Exception as e:  # record and continue; manifest carries the error
        return TaskResult(ber=ber, mission_id=mission_id,
                          weather=mission.weather, seed=seed, er=0.0,
                          mae=0.0, success=False, mc=0.0, tdt_m=0.0,
                          steps=0, error=f"{type(e).__name__}: {e}")


def _default_progress(done: int, total: int, started: float) -> None:
    elapsed = time.time() - started
    eta = elapsed / done * (total - done) if done else 0.0
    print(f"\r[{done}/{total}] elapsed {elapsed:5.1f}s eta {eta:5.1f}s",
          end="" if done < total else "\n", file=sys.stderr, flush=True)


def run_campaign(cfg: CampaignConfig, progress=None,
                 faults: FaultSet | None = None) -> CampaignResult:
    """Run every (ber, mission) task; results are independent of the
    parallelism degree after the canonical (ber, mission) sort."""
    cfg.validate()
    started = time.time()
    missions = generate_missions(cfg.n_paths, cfg.n_weathers, cfg.seed)
    net = (load_network(cfg.network_file) if cfg.network_file
           else drive.build_reference_controller())
    hca = HcaConfig() if cfg.hca else None
    if cfg.path_mode == "array-sim" and faults is None and cfg.pe_rate > 0:
        from .faults import sample_random_faults
        from .rng import Rng
        faults = sample_random_faults(
            (32, 16), cfg.pe_rate, Rng(derive_seed(cfg.seed, "pe-faults")))

    tasks = [(m.id, ber, mission_run_seed(cfg.seed, m.id, ber),
              cfg.write_step_logs)
             for ber in cfg.bers for m in missions]
    total = len(tasks)
    jobs = int(os.environ.get(JOBS_ENV_VAR, cfg.jobs))
    report = progress if progress is not None else _default_progress

    rows: list[TaskResult] = []
    faults_json = faults.to_json() if faults else None
    if jobs <= 1 or total <= 1:
        _worker_init(missions, net, cfg.path_mode, faults_json, hca)
        for i, task in enumerate(tasks, 1):
            rows.append(_run_task(task))
            report(i, total, started)
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(jobs, initializer=_worker_init,
                      initargs=(missions, net, cfg.path_mode,
                                faults_json, hca)) as pool:
            for i, result in enumerate(
                    pool.imap_unordered(_run_task, tasks, chunksize=4), 1):
                rows.append(result)
                report(i, total, started)

    failures = [r for r in rows if r.error is not None]
    return CampaignResult(rows=rows, config_text=config_snapshot(cfg),
                          wall_seconds=time.time() - started,
                          failures=failures)


def _fmt(value) -> str:
    """CSV cell: floats at 9 significant digits, bools as 0/1."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def write_report(result: CampaignResult, out_dir, figures: bool = True) -> list[str]:
    """Write summary.csv, aggregate.csv, manifest.jsonl, the config
    snapshot, optional per-mission step logs, and the report figures."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w") as f:
        f.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in result.sorted_rows():
            if r.error is not None:  # failed tasks live in the manifest
                continue
            f.write(",".join(_fmt(v) for v in (
                r.ber, r.mission_id, r.weather, r.er, r.mae, r.success,
                r.mc, r.tdt_m, r.steps, r.seed)) + "\n")
    written.append(summary_path)

    aggregate_path = os.path.join(out_dir, "aggregate.csv")
    with open(aggregate_path, "w") as f:
        f.write(",".join(AGGREGATE_COLUMNS) + "\n")
        for agg in result.aggregates():
            f.write(",".join(_fmt(agg[c]) for c in AGGREGATE_COLUMNS) + "\n")
    written.append(aggregate_path)

    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w") as f:
        f.write(result.config_text)
    written.append(config_path)

    config_hash = hashlib.sha256(result.config_text.encode()).hexdigest()
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as f:
        f.write(json.dumps({"config_sha256": config_hash,
                            "tasks": len(result.rows),
                            "failed": len(result.failures)}) + "\n")
        for r in result.sorted_rows():
            entry = {
                "task": f"ber={r.ber:.9g}/mission={r.mission_id}",
                "seed": r.seed,
                "status": "failed" if r.error else "done",
                "output": "summary.csv",
            }
            if r.error:
                entry["error"] = r.error
            f.write(json.dumps(entry) + "\n")
    written.append(manifest_path)

    step_rows = [r for r in result.sorted_rows() if r.step_lines]
    if step_rows:
        logs_dir = os.path.join(out_dir, "logs")
        os.makedirs(logs_dir, exist_ok=True)
        for r in step_rows:
            log_path = os.path.join(
                logs_dir, f"ber{r.ber:.9g}_mission{r.mission_id}.jsonl")
            with open(log_path, "w") as f:
                f.write("\n".join(r.step_lines) + "\n")
            written.append(log_path)

    if figures:
        from . import report as report_mod
        written.extend(report_mod.render_campaign_figures(out_dir, out_dir))
    return written
