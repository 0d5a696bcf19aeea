"""Figure rendering for the report paths.

Every figure is written next to its delimited data file; matplotlib is
imported lazily with the Agg backend so headless runs work.
"""
from __future__ import annotations

import math


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_trace(trace, path: str, capacity: float) -> None:
    plt = _plt()
    fig, (ax_rate, ax_tau) = plt.subplots(
        2, 1, figsize=(8, 5.5), sharex=True, height_ratios=[2, 1]
    )
    ax_rate.plot(trace.t, trace.x_bbr_total, label="BBR rate", color="tab:blue")
    ax_rate.plot(trace.t, trace.x_cubic_total, label="CUBIC rate", color="tab:red")
    ax_rate.axhline(capacity, color="gray", lw=0.8, ls="--", label="capacity")
    ax_rate.set_ylabel("rate [segments/s]")
    ax_rate.legend(loc="upper right", fontsize=8)
    ax_rate.set_title("BBR/CUBIC competition over time")

    n_bbr = len(trace.tau_min[0]) if trace.tau_min else 0
    for i in range(n_bbr):
        ax_tau.plot(
            trace.t, [row[i] * 1e3 for row in trace.tau_min],
            drawstyle="steps-post", label=f"flow {i}",
        )
    for t, _, tau in trace.probe_events:
        ax_tau.axvline(t, color="gray", lw=0.3, alpha=0.4)
    ax_tau.set_ylabel("min-RTT estimate [ms]")
    ax_tau.set_xlabel("time [s]")
    if n_bbr > 1:
        ax_tau.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_sweep(cells, path: str) -> None:
    plt = _plt()
    xs = sorted({c.x_value for c in cells})
    ys = sorted({c.y_value for c in cells})
    grid = [[math.nan for _ in xs] for _ in ys]
    for c in cells:
        if c.verdict is not None:
            grid[ys.index(c.y_value)][xs.index(c.x_value)] = float(
                c.verdict.unstable
            )
    fig, ax = plt.subplots(figsize=(6, 4.5))
    mesh = ax.pcolormesh(xs, ys, grid, cmap="Blues", vmin=0, vmax=1, shading="nearest")
    fig.colorbar(mesh, ax=ax, label="oscillation condition satisfied")
    ax.set_xlabel(cells[0].x_name)
    ax.set_ylabel(cells[0].y_name)
    ax.set_title("instability region")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_update_map(uf, w_bar: float, path: str, n: int = 400) -> None:
    plt = _plt()
    lo = max(1e-6, min(uf.w_lt, uf.w0) * 0.5)
    hi = uf.w_gt * 1.1
    ws = [lo + (hi - lo) * k / (n - 1) for k in range(n)]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(ws, [uf.w_update(w) for w in ws], label="window-update map", color="tab:blue")
    ax.plot(ws, ws, color="gray", lw=0.8, label="identity")
    ax.axvline(w_bar, color="tab:red", lw=0.8, ls="--", label="long-term equilibrium")
    ax.set_xlabel("window at probing step [segments]")
    ax.set_ylabel("window at next probing step [segments]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_bounds(bounds, trace, path: str, transient: float = 30.0) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(trace.t, trace.phi_bbr, color="tab:blue", lw=0.9, label="BBR share")
    for value, style, label in (
        (bounds.phi_max, "-", "worst-case bounds"),
        (bounds.phi_min, "-", None),
        (bounds.phi_np_max, "--", "non-pessimal bounds"),
        (bounds.phi_np_min, "--", None),
    ):
        ax.axhline(value, color="tab:red", ls=style, lw=0.9, label=label)
    ax.axvspan(0, transient, color="gray", alpha=0.15, label="transient")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("BBR capacity share")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8, loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
