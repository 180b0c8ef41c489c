"""Command-line interface.

Subcommands: campaign (BER sweep over the mission benchmark), drive
(one mission, step log to stdout), reliability (redundancy Monte-Carlo
sweep to CSV), array-sim (one layer on the array, timeline report),
inject (SEU flips into a stored network) and report (render figures
from result files).

Exit status: 0 success, 2 configuration/usage error, 3 task failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import array_sim, classifier, drive, report
from .campaign import (ConfigError, load_config, mission_run_seed,
                       run_campaign, write_report)
from .faults import FaultSet, inject_seu, sample_random_faults
from .fxp import load_network, save_network
from .redundancy import HcaConfig, SchemeConfig, reliability_sweep
from .rng import Rng, derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TASKS = 3


def _cmd_campaign(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out_dir = args.out
    result = run_campaign(cfg)
    written = write_report(result, cfg.out_dir)
    for path in written:
        print(path)
    if result.failures:
        print(f"{len(result.failures)} task(s) failed; see manifest",
              file=sys.stderr)
        return EXIT_TASKS
    return EXIT_OK


def _cmd_drive(args) -> int:
    missions = drive.generate_missions(seed=args.seed)
    if not 0 <= args.mission < len(missions):
        print(f"mission index {args.mission} outside [0, {len(missions)})",
              file=sys.stderr)
        return EXIT_CONFIG
    mission = missions[args.mission]
    net = (load_network(args.network) if args.network
           else drive.build_reference_controller())
    faults = None
    if args.faults:
        with open(args.faults) as f:
            faults = FaultSet.from_json(f.read())
    run_seed = mission_run_seed(args.seed, mission.id, args.ber)
    log = drive.run_mission(
        mission, net, args.ber, run_seed,
        path_mode="array-sim" if args.array_sim else "fast",
        faults=faults, hca=HcaConfig() if args.hca else None)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if not args.summary_only:
            for line in log.step_lines():
                print(line, file=out)
        print(log.summary_line(), file=out)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _cmd_reliability(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",") if r]
    except ValueError:
        print(f"bad --rates list: {args.rates!r}", file=sys.stderr)
        return EXIT_CONFIG
    if not rates or not all(0.0 <= r <= 1.0 for r in rates):
        print("rates must be within [0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    rows_idx, cols_idx = (int(v) for v in args.dims.split("x"))
    schemes = [SchemeConfig(scheme=s, hca=HcaConfig(dppu_size=args.dppu_size))
               for s in args.scheme.split(",")]
    models = args.model.split(",")
    rows = reliability_sweep(schemes, models, rates, args.trials, args.seed,
                             dims=(rows_idx, cols_idx),
                             include_dppu_faults=not args.no_dppu_faults)
    header = ("scheme", "model", "pe_rate", "trials", "ff_probability",
              "stderr", "mean_remaining_power")
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            f"{row[c]:.9g}" if isinstance(row[c], float) else str(row[c])
            for c in header))
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w") as f:
            f.write(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_demo_layer(spec: str):
    """HxWxC:kK:oO[:sS[:pP]] e.g. 8x8x16:k3:o8 or 8x8x16:k3:o8:s1:p1."""
    parts = spec.split(":")
    h, w, c = (int(v) for v in parts[0].split("x"))
    kwargs = {"k": 3, "o": 8, "s": 1, "p": 0}
    for part in parts[1:]:
        kwargs[part[0]] = int(part[1:])
    return h, w, c, kwargs["k"], kwargs["o"], kwargs["s"], kwargs["p"]


def _cmd_array_sim(args) -> int:
    try:
        h, w, c, k, o, s, p = _parse_demo_layer(args.demo_layer)
    except (ValueError, KeyError, IndexError):
        print(f"bad --demo-layer spec {args.demo_layer!r} "
              "(expected HxWxC:kK:oO[:sS[:pP]])", file=sys.stderr)
        return EXIT_CONFIG
    from .fxp import FxpTensor, LayerSpec, conv2d_ref

    rng = Rng(args.seed)
    layer = LayerSpec("conv", c, o, kernel_size=k, stride=s, padding=p,
                      requant_shift=7)
    inp = FxpTensor((rng.bulk_u64(h * w * c) % 255 - 127).astype(np.int8)
                    .reshape(h, w, c), 5)
    weights = FxpTensor((rng.bulk_u64(k * k * c * o) % 255 - 127)
                        .astype(np.int8).reshape(k, k, c, o), 5)
    cfg = array_sim.ArrayConfig()
    if args.fault_file:
        with open(args.fault_file) as f:
            faults = FaultSet.from_json(f.read())
    else:
        faults = sample_random_faults((cfg.rows, cfg.cols), args.pe_rate,
                                      rng.spawn("faults"))
    hca = HcaConfig(dppu_size=args.dppu_size) if args.hca else None
    try:
        out, timeline = array_sim.simulate_layer(
            inp, weights, layer, cfg, hca=hca, faults=faults)
    except (array_sim.ScheduleInfeasibleError,
            array_sim.BufferOverflowError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_TASKS
    golden = conv2d_ref(inp, layer, weights)
    corrupted = int((out.data != golden.data).sum())
    print(json.dumps({
        "layer": args.demo_layer,
        "faulty_pes": faults.fault_pe_num,
        "hca": bool(hca),
        "corrupted_outputs": corrupted,
        "output_elements": int(out.data.size),
        "t_iteration": timeline.t_iteration,
        "t_2d_array_write": timeline.t_2d_array_write,
        "t_dppu_write": timeline.t_dppu_write,
        "t_idle": timeline.t_idle,
        "t_stall": timeline.t_stall,
        "t_penalty": timeline.t_penalty,
        "iterations": timeline.iterations,
        "total_cycles": timeline.total_cycles,
        "fault_free_cycles": array_sim.fault_free_cycles(layer, out.dims, cfg),
    }, indent=1))
    return EXIT_OK


def _cmd_inject(args) -> int:
    if args.builtin:
        net = (drive.build_reference_controller()
               if args.builtin == "controller"
               else classifier.build_classifier())
    else:
        if not args.network:
            print("--network FILE or --builtin required", file=sys.stderr)
            return EXIT_CONFIG
        net = load_network(args.network)
    rng = Rng(args.seed)
    total = 0
    for i, w in enumerate(net.weights):
        _, log = inject_seu(w, args.ber, rng)
        total += len(log)
        for idx, bit in log:
            print(json.dumps({"layer": i, "element": idx, "bit": bit},
                             separators=(",", ":")))
    print(json.dumps({"ber": args.ber, "seed": args.seed,
                      "total_flips": total}))
    return EXIT_OK


def _cmd_report(args) -> int:
    written = report.render_all(args.in_dir, args.out or args.in_dir)
    if not written:
        print(f"no result files found in {args.in_dir}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_dump_network(args) -> int:
    net = (drive.build_reference_controller()
           if args.builtin == "controller"
           else classifier.build_classifier())
    save_network(net, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiadla",
        description="DLA fault-injection reliability workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("campaign", help="run the BER sweep benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None,
                   help="worker count (env FIADLA_JOBS overrides)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_campaign)

    p = sub.add_parser("drive", help="run one mission")
    p.add_argument("--mission", type=int, required=True)
    p.add_argument("--ber", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--array-sim", action="store_true")
    p.add_argument("--hca", action="store_true")
    p.add_argument("--network", default=None)
    p.add_argument("--faults", default=None, help="FaultSet JSON file")
    p.add_argument("--summary-only", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_drive)

    p = sub.add_parser("reliability", help="redundancy Monte-Carlo sweep")
    p.add_argument("--scheme", required=True,
                   help="comma list of rr,cr,dr,hca,none")
    p.add_argument("--model", default="random",
                   help="comma list of random,clustered")
    p.add_argument("--rates", required=True, help="comma list of PE rates")
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="32x16")
    p.add_argument("--dppu-size", type=int, default=16)
    p.add_argument("--no-dppu-faults", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_reliability)

    p = sub.add_parser("array-sim", help="simulate one layer on the array")
    p.add_argument("--demo-layer", required=True,
                   help="HxWxC:kK:oO[:sS[:pP]]")
    p.add_argument("--pe-rate", type=float, default=0.0)
    p.add_argument("--fault-file", default=None)
    p.add_argument("--hca", action="store_true")
    p.add_argument("--dppu-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_array_sim)

    p = sub.add_parser("inject", help="SEU-inject a stored network")
    p.add_argument("--network", default=None)
    p.add_argument("--builtin", choices=("controller", "classifier"),
                   default=None)
    p.add_argument("--ber", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("report", help="render figures from result files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("dump-network", help="write a built-in network file")
    p.add_argument("--builtin", choices=("controller", "classifier"),
                   default="controller")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_network)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
