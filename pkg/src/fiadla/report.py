"""Figure rendering for campaign and reliability outputs.

Reads the delimited result files and renders matplotlib figures next to
them: network-level versus driving-level metric curves over the BER
sweep (including the per-mission dispersion comparison) and, when a
reliability sweep CSV is present, fully-functional probability and
remaining-power curves per redundancy scheme.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SCHEME_STYLE = {
    "rr": ("tab:blue", "o"),
    "cr": ("tab:orange", "s"),
    "dr": ("tab:green", "^"),
    "hca": ("tab:red", "D"),
    "none": ("tab:gray", "x"),
}


def _read_csv(path) -> list[dict]:
    with open(path) as f:
        return [dict(row) for row in csv.DictReader(f)]


def _ber_axis(ax, bers):
    """Categorical BER axis: evenly spaced ticks labeled with the rates
    (a log axis cannot show the BER-0 golden point)."""
    ax.set_xticks(range(len(bers)))
    ax.set_xticklabels(["0" if b == 0 else f"{b:g}" for b in bers])
    ax.set_xlabel("bit error rate")


def render_campaign_figures(in_dir, out_dir) -> list[str]:
    """metrics_vs_ber.png + dispersion_vs_ber.png from aggregate.csv."""
    aggregate_path = os.path.join(in_dir, "aggregate.csv")
    if not os.path.exists(aggregate_path):
        return []
    rows = _read_csv(aggregate_path)
    if not rows:
        return []
    rows.sort(key=lambda r: float(r["ber"]))
    bers = [float(r["ber"]) for r in rows]
    xs = range(len(bers))
    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, (ax_net, ax_drv) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax_net.plot(xs, [float(r["er_mean"]) for r in rows], "o-",
                label="ER", color="tab:blue")
    ax_net.plot(xs, [float(r["mae_mean"]) for r in rows], "s-",
                label="MAE", color="tab:orange")
    _ber_axis(ax_net, bers)
    ax_net.set_ylabel("network-level metric")
    ax_net.set_title("network metrics")
    ax_net.legend()
    ax_drv.plot(xs, [float(r["msr"]) for r in rows], "o-",
                label="MSR", color="tab:red")
    ax_drv.plot(xs, [float(r["mc_mean"]) for r in rows], "s-",
                label="mean MC", color="tab:green")
    ax_drv.plot(xs, [float(r["tdt_mean"]) / 500.0 for r in rows], "^-",
                label="mean TDT / 500 m", color="tab:purple")
    _ber_axis(ax_drv, bers)
    ax_drv.set_ylabel("driving-level metric")
    ax_drv.set_title("driving metrics")
    ax_drv.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "metrics_vs_ber.png")
    fig.savefig(path, dpi=140)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(xs, [float(r["mc_cov"]) for r in rows], "o-",
            label="CoV of mission completion", color="tab:green")
    ax.plot(xs, [float(r["mae_cov"]) for r in rows], "s-",
            label="CoV of MAE", color="tab:orange")
    _ber_axis(ax, bers)
    ax.set_ylabel("coefficient of variation")
    ax.set_title("per-mission dispersion")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "dispersion_vs_ber.png")
    fig.savefig(path, dpi=140)
    plt.close(fig)
    written.append(path)
    return written


def render_reliability_figures(in_dir, out_dir) -> list[str]:
    """reliability.png from reliability.csv (per scheme and fault model)."""
    csv_path = os.path.join(in_dir, "reliability.csv")
    if not os.path.exists(csv_path):
        return []
    rows = _read_csv(csv_path)
    if not rows:
        return []
    models = sorted({r["model"] for r in rows})
    os.makedirs(out_dir, exist_ok=True)

    fig, axes = plt.subplots(2, len(models), figsize=(4.6 * len(models), 6.4),
                             squeeze=False)
    for col, model in enumerate(models):
        sub = [r for r in rows if r["model"] == model]
        schemes = sorted({r["scheme"] for r in sub})
        for scheme in schemes:
            pts = sorted((float(r["pe_rate"]), float(r["ff_probability"]),
                          float(r["mean_remaining_power"]))
                         for r in sub if r["scheme"] == scheme)
            color, marker = _SCHEME_STYLE.get(scheme, ("black", "."))
            rates = [p[0] for p in pts]
            axes[0][col].plot(rates, [p[1] for p in pts], marker + "-",
                              color=color, label=scheme.upper())
            axes[1][col].plot(rates, [p[2] for p in pts], marker + "-",
                              color=color, label=scheme.upper())
        axes[0][col].set_title(f"{model} fault model")
        axes[0][col].set_ylabel("fully functional probability")
        axes[1][col].set_ylabel("mean remaining computing power")
        for row_ax in axes:
            row_ax[col].set_xlabel("PE error rate")
            row_ax[col].legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "reliability.png")
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return [path]


def render_all(in_dir, out_dir) -> list[str]:
    return (render_campaign_figures(in_dir, out_dir)
            + render_reliability_figures(in_dir, out_dir))
