"""Fixed-step integration of the coupled fluid ODEs and RTT-probing events.

The continuous variables (queue, per-BBR bandwidth estimates, per-CUBIC
maximum windows and growth durations) advance with a classical 4th-order
scheme; minimum-RTT estimates are piecewise constant and change only at
probing steps, which are modeled as instantaneous events.
"""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass

import numpy as np

from .model import (
    BbrFlowState,
    CubicFlowState,
    NetworkConfig,
    SystemState,
    bbr_strengths,
    bbrv2_strengths,
    loss_rate,
)

#: CUBIC maximum windows are kept strictly positive so the growth function
#: stays in its domain during degenerate sweeps.
_WMAX_FLOOR = 1e-9

POLICY_VARIANTS = (
    "vanilla",
    "smoothed",
    "randomized",
    "detect_freeze",
    "bbrv2",
    "bbrv3",
    "frozen",
)


class IntegrationError(RuntimeError):
    """A state variable became non-finite during integration."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"integration diverged at t={t:.6f} s")


@dataclass(frozen=True)
class IntegratorSettings:
    """Fixed step, probing period and total horizon of a simulation.

    ``dt`` defaults to min(1 ms, path_prop_delay / 40); it may never exceed
    a tenth of the propagation delay.
    """

    dt: float | None = None
    probe_period: float = 10.0
    horizon: float = 120.0

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.probe_period > 0:
            raise ValueError("probe_period must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def resolve_dt(self, cfg: NetworkConfig) -> float:
        dt = self.dt if self.dt is not None else min(1e-3, cfg.path_prop_delay / 40.0)
        if dt > cfg.path_prop_delay / 10.0:
            raise ValueError(
                f"dt={dt} exceeds path_prop_delay/10={cfg.path_prop_delay / 10.0}"
            )
        return dt


@dataclass(frozen=True)
class AdaptationPolicy:
    """Rule governing min-RTT updates at probing steps and the strength rule.

    variant     -- one of vanilla | smoothed | randomized | detect_freeze |
                   bbrv2 | bbrv3 | frozen
    theta       -- adaptation speed of the smoothed update, in (0, 1]
    seed        -- RNG seed for randomized probing
    kappa       -- oscillation-detection threshold (stddev/mean) for
                   detect_freeze
    history_len -- probe measurements kept by detect_freeze
    gain        -- extra probing aggressiveness of bbrv3 on top of bbrv2
    frozen_alpha/frozen_beta -- constant strengths of the frozen variant,
                   which also disables probing (used for stability checks)
    """

    variant: str = "vanilla"
    theta: float = 1.0
    seed: int = 0
    kappa: float = 0.1
    history_len: int = 5
    gain: float = 1.25
    frozen_alpha: float | None = None
    frozen_beta: float | None = None

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.variant == "smoothed" and not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.variant == "detect_freeze":
            if not self.kappa > 0:
                raise ValueError("kappa must be positive")
            if self.history_len < 2:
                raise ValueError("history_len must be at least 2")
        if self.variant == "bbrv3" and not self.gain >= 1.0:
            raise ValueError("gain must be at least 1")
        if self.variant == "frozen":
            if self.frozen_alpha is None or self.frozen_beta is None:
                raise ValueError("frozen policy needs frozen_alpha and frozen_beta")
            if not 0.0 < self.frozen_beta <= self.frozen_alpha:
                raise ValueError("need 0 < frozen_beta <= frozen_alpha")

    @property
    def probing(self) -> bool:
        return self.variant != "frozen"

    @property
    def randomized_probing(self) -> bool:
        return self.variant == "randomized"

    def strengths(self, tau_min: float, tau: float) -> tuple:
        if self.variant == "bbrv2":
            return bbrv2_strengths(tau_min, tau)
        if self.variant == "bbrv3":
            a, b = bbrv2_strengths(tau_min, tau)
            return self.gain * a, b
        if self.variant == "frozen":
            return self.frozen_alpha, self.frozen_beta
        return bbr_strengths(tau_min, tau)


VANILLA = AdaptationPolicy()


def frozen_policy(alpha: float, beta: float | None = None) -> AdaptationPolicy:
    """Constant-strength, non-probing policy for short-term dynamics."""
    if beta is None:
        beta = min(1.0, alpha)
    return AdaptationPolicy(variant="frozen", frozen_alpha=alpha, frozen_beta=beta)


@dataclass(frozen=True)
class StateDerivative:
    d_x_btl: tuple
    d_w_max: tuple
    d_s: tuple
    d_queue: float


@dataclass
class Trace:
    """Sampled time series of a simulation plus its probe-event log."""

    t: list
    x_bbr_total: list
    x_cubic_total: list
    phi_bbr: list
    queue: list
    loss: list
    tau_min: list  # per sample: tuple over BBR flows
    w: list  # per sample: tuple over CUBIC flows
    probe_events: list  # (t, flow_index, tau_min) per probing flow

    def probe_tau_min_series(self, flow: int = 0) -> list:
        return [tm for (_, idx, tm) in self.probe_events if idx == flow]

    def probe_times(self, flow: int = 0) -> list:
        return [t for (t, idx, _) in self.probe_events if idx == flow]

    def csv_header(self) -> list:
        n_bbr = len(self.tau_min[0]) if self.tau_min else 0
        n_cubic = len(self.w[0]) if self.w else 0
        return (
            ["t", "x_bbr_total", "x_cubic_total", "phi_bbr", "queue", "loss"]
            + [f"tau_min_{i}" for i in range(n_bbr)]
            + [f"w_{k}" for k in range(n_cubic)]
        )

    def rows(self):
        for i in range(len(self.t)):
            yield (
                [self.t[i], self.x_bbr_total[i], self.x_cubic_total[i],
                 self.phi_bbr[i], self.queue[i], self.loss[i]]
                + list(self.tau_min[i])
                + list(self.w[i])
            )


def write_trace_csv(trace: Trace, path: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write(",".join(trace.csv_header()) + "\n")
        for row in trace.rows():
            handle.write(",".join(repr(v) for v in row) + "\n")


def write_trace_jsonl(trace: Trace, path: str) -> None:
    header = trace.csv_header()
    with open(path, "w") as handle:
        for row in trace.rows():
            handle.write(json.dumps(dict(zip(header, row))) + "\n")


# ---------------------------------------------------------------------------
# Internal array-based core.  The public operations wrap it; the simulation
# loop uses it directly to avoid rebuilding immutable states every step.
# ---------------------------------------------------------------------------

def _window(w_max: float, s: float, b: float, c: float) -> float:
    w_max = w_max if w_max > _WMAX_FLOOR else _WMAX_FLOOR
    return w_max + c * (s - (b * w_max / c) ** (1.0 / 3.0)) ** 3


def _rhs(cfg, policy, q, xb, tm, wm, ss):
    C = cfg.capacity
    b, c = cfg.cubic_b, cfg.cubic_c
    tau = cfg.path_prop_delay + q / C
    if not tau > 0.0:  # a divergent stage state; let the step detect it
        nan = math.nan
        return nan, [nan] * len(xb), [nan] * len(wm), [nan] * len(ss)
    strengths = policy.strengths

    windows = [_window(wm[k], ss[k], b, c) for k in range(len(wm))]
    xc = [w / tau for w in windows]
    ab = [strengths(t, tau) for t in tm]
    y = math.fsum(be * x for (_, be), x in zip(ab, xb)) + math.fsum(xc)

    if y > C and q >= cfg.buffer * (1.0 - 1e-6):
        p = (y - C) / y
    else:
        p = 0.0

    d_wm = [(windows[k] - wm[k]) * xc[k] * p for k in range(len(wm))]
    d_ss = [1.0 - ss[k] * xc[k] * p for k in range(len(ss))]
    d_xb = []
    for (a, be), x in zip(ab, xb):
        z = y + (a - be) * x
        x_dlv = a * x * C / z if z >= C else a * x
        d = x_dlv - x
        if x <= cfg.chi and d < 0.0:
            d = 0.0  # estimate floor (the implementation never drops below chi)
        d_xb.append(d)
    dq = y - C
    if (q <= 0.0 and dq < 0.0) or (q >= cfg.buffer and dq > 0.0):
        dq = 0.0
    return dq, d_xb, d_wm, d_ss


def _rk4(cfg, policy, dt, q, xb, tm, wm, ss, t_next=math.nan):
    nb, nc = len(xb), len(wm)
    k1q, k1x, k1w, k1s = _rhs(cfg, policy, q, xb, tm, wm, ss)
    h = 0.5 * dt
    k2q, k2x, k2w, k2s = _rhs(
        cfg, policy, q + h * k1q,
        [xb[i] + h * k1x[i] for i in range(nb)], tm,
        [wm[k] + h * k1w[k] for k in range(nc)],
        [ss[k] + h * k1s[k] for k in range(nc)],
    )
    k3q, k3x, k3w, k3s = _rhs(
        cfg, policy, q + h * k2q,
        [xb[i] + h * k2x[i] for i in range(nb)], tm,
        [wm[k] + h * k2w[k] for k in range(nc)],
        [ss[k] + h * k2s[k] for k in range(nc)],
    )
    k4q, k4x, k4w, k4s = _rhs(
        cfg, policy, q + dt * k3q,
        [xb[i] + dt * k3x[i] for i in range(nb)], tm,
        [wm[k] + dt * k3w[k] for k in range(nc)],
        [ss[k] + dt * k3s[k] for k in range(nc)],
    )
    sixth = dt / 6.0
    q_new = q + sixth * (k1q + 2.0 * (k2q + k3q) + k4q)
    xb_new = [
        xb[i] + sixth * (k1x[i] + 2.0 * (k2x[i] + k3x[i]) + k4x[i]) for i in range(nb)
    ]
    wm_new = [
        wm[k] + sixth * (k1w[k] + 2.0 * (k2w[k] + k3w[k]) + k4w[k]) for k in range(nc)
    ]
    ss_new = [
        ss[k] + sixth * (k1s[k] + 2.0 * (k2s[k] + k3s[k]) + k4s[k]) for k in range(nc)
    ]

    # Divergence must be detected before the domain projection, which would
    # otherwise clamp non-finite values back into range.
    if not (
        math.isfinite(q_new)
        and all(map(math.isfinite, xb_new))
        and all(map(math.isfinite, wm_new))
        and all(map(math.isfinite, ss_new))
    ):
        raise IntegrationError(t_next)

    # Projection back onto the invariant domain.
    q_new = min(cfg.buffer, max(0.0, q_new))
    chi = cfg.chi
    xb_new = [x if x > chi else chi for x in xb_new]
    wm_new = [w if w > _WMAX_FLOOR else _WMAX_FLOOR for w in wm_new]
    ss_new = [s if s > 0.0 else 0.0 for s in ss_new]
    return q_new, xb_new, wm_new, ss_new


def _partial_backoff_queue(cfg, probing, q, xb, tm, wm, ss):
    """Back-off queue when only a subset of BBR flows probes.

    Probing flows hold 4 segments; non-probing BBR flows keep their
    congestion-window inflight of twice the estimated BDP; CUBIC flows hold
    their loss-reduced windows.  Reduces to the synchronized form when every
    flow probes.
    """
    b, c = cfg.cubic_b, cfg.cubic_c
    inflight = 0.0
    for i in range(len(xb)):
        if i in probing:
            inflight += 4.0
        else:
            inflight += 2.0 * tm[i] * xb[i]
    inflight += (1.0 - b) * math.fsum(
        _window(wm[k], ss[k], b, c) for k in range(len(wm))
    )
    raw = inflight - cfg.btl_prop_delay * cfg.capacity
    return min(cfg.buffer, max(0.0, raw))


def _apply_probe(cfg, policy, probing, q, xb, tm, wm, ss, histories):
    """Update tau_min for the probing flows; returns (q_new, measured)."""
    q_minus = _partial_backoff_queue(cfg, probing, q, xb, tm, wm, ss)
    measured = cfg.path_prop_delay + q_minus / cfg.capacity
    for i in probing:
        if policy.variant == "smoothed":
            tm[i] = policy.theta * measured + (1.0 - policy.theta) * tm[i]
        elif policy.variant == "detect_freeze":
            histories[i].append(measured)
            del histories[i][: -policy.history_len]
            hist = histories[i]
            if len(hist) >= 2:
                mean = statistics.fmean(hist)
                if statistics.pstdev(hist) > policy.kappa * mean:
                    tm[i] = mean
                else:
                    tm[i] = measured
            else:
                tm[i] = measured
        else:
            tm[i] = measured
    return q_minus, measured


# ---------------------------------------------------------------------------
# Public operations on SystemState.
# ---------------------------------------------------------------------------

def _unpack(state: SystemState):
    xb = [f.x_btl for f in state.bbr]
    tm = [f.tau_min for f in state.bbr]
    clocks = [f.probe_clock for f in state.bbr]
    hist = [list(f.probe_history) for f in state.bbr]
    wm = [k.w_max for k in state.cubic]
    ss = [k.s for k in state.cubic]
    return xb, tm, clocks, hist, wm, ss


def _pack(t, q, xb, tm, clocks, hist, wm, ss) -> SystemState:
    return SystemState(
        t=t,
        bbr=tuple(
            BbrFlowState(
                x_btl=xb[i], tau_min=tm[i], probe_clock=clocks[i],
                probe_history=tuple(hist[i]),
            )
            for i in range(len(xb))
        ),
        cubic=tuple(
            CubicFlowState(w_max=wm[k], s=ss[k]) for k in range(len(wm))
        ),
        queue=q,
    )


def derivative(
    state: SystemState, cfg: NetworkConfig, policy: AdaptationPolicy = VANILLA
) -> StateDerivative:
    """Time derivative of the continuous state variables.

    The bandwidth-estimate derivative is clamped at the floor chi and the
    queue derivative at the buffer boundaries, so equilibria pinned at either
    bound report zero rates of change.
    """
    xb, tm, _, _, wm, ss = _unpack(state)
    dq, d_xb, d_wm, d_ss = _rhs(cfg, policy, state.queue, xb, tm, wm, ss)
    return StateDerivative(
        d_x_btl=tuple(d_xb), d_w_max=tuple(d_wm), d_s=tuple(d_ss), d_queue=dq
    )


def step(
    state: SystemState,
    cfg: NetworkConfig,
    policy: AdaptationPolicy,
    dt: float,
) -> SystemState:
    """Advance the continuous variables by one fixed step."""
    xb, tm, clocks, hist, wm, ss = _unpack(state)
    t = state.t + dt
    q, xb, wm, ss = _rk4(cfg, policy, dt, state.queue, xb, tm, wm, ss, t_next=t)
    clocks = [clk - dt for clk in clocks]
    return _pack(t, q, xb, tm, clocks, hist, wm, ss)


def probe_step(
    state: SystemState,
    cfg: NetworkConfig,
    policy: AdaptationPolicy,
    rng: np.random.Generator | None = None,
    due: list | None = None,
    probe_period: float = 10.0,
) -> SystemState:
    """Apply an RTT-probing event.

    All BBR flows probe simultaneously unless the randomized policy is
    active, in which case only the flows whose probe clocks expired probe and
    their next probe times are drawn from [0.5, 1.5] times the probe period.
    The queue is reset to the back-off queue (the drain probing performs).
    """
    xb, tm, clocks, hist, wm, ss = _unpack(state)
    if due is None:
        if policy.randomized_probing:
            due = [i for i, clk in enumerate(clocks) if clk <= 1e-12]
        else:
            due = list(range(len(xb)))
    if not due:
        return state
    q_new, _ = _apply_probe(cfg, policy, set(due), state.queue, xb, tm, wm, ss, hist)
    for i in due:
        if policy.randomized_probing:
            if rng is None:
                rng = np.random.default_rng(policy.seed)
            clocks[i] = float(rng.uniform(0.5, 1.5)) * probe_period
        else:
            clocks[i] = probe_period
    return _pack(state.t, q_new, xb, tm, clocks, hist, wm, ss)


def default_initial_state(
    cfg: NetworkConfig, settings: IntegratorSettings | None = None
) -> SystemState:
    """Even-split starting point: every flow begins with its capacity share,
    the true propagation delay, and an empty queue."""
    period = settings.probe_period if settings is not None else 10.0
    n = cfg.n_bbr + cfg.n_cubic
    share = cfg.capacity / n
    return SystemState(
        t=0.0,
        bbr=tuple(
            BbrFlowState(
                x_btl=max(cfg.chi, share),
                tau_min=cfg.path_prop_delay,
                probe_clock=period,
            )
            for _ in range(cfg.n_bbr)
        ),
        cubic=tuple(
            CubicFlowState(w_max=cfg.path_prop_delay * share, s=0.0)
            for _ in range(cfg.n_cubic)
        ),
        queue=0.0,
    )


def simulate(
    cfg: NetworkConfig,
    policy: AdaptationPolicy,
    settings: IntegratorSettings,
    init: SystemState | None = None,
    decimate: int = 20,
) -> Trace:
    """Integrate over the horizon, alternating ODE steps and probing events.

    Deterministic for fixed (cfg, policy, settings, init): the only random
    element, randomized probe scheduling, draws from a generator seeded by
    the policy.
    """
    if decimate < 1:
        raise ValueError("decimate must be at least 1")
    dt = settings.resolve_dt(cfg)
    n_steps = round(settings.horizon / dt)
    rng = np.random.default_rng(policy.seed)

    if init is None:
        init = default_initial_state(cfg, settings)
    init.validate(cfg)
    xb, tm, clocks, hist, wm, ss = _unpack(init)
    q = init.queue
    t = init.t

    if policy.randomized_probing:
        clocks = [
            float(rng.uniform(0.5, 1.5)) * settings.probe_period for _ in clocks
        ]

    trace = Trace(
        t=[], x_bbr_total=[], x_cubic_total=[], phi_bbr=[], queue=[], loss=[],
        tau_min=[], w=[], probe_events=[],
    )

    def sample():
        b, c = cfg.cubic_b, cfg.cubic_c
        tau = cfg.path_prop_delay + q / cfg.capacity
        windows = [_window(wm[k], ss[k], b, c) for k in range(len(wm))]
        xc = math.fsum(w / tau for w in windows)
        xbt = math.fsum(
            policy.strengths(tm[i], tau)[1] * xb[i] for i in range(len(xb))
        )
        y = xbt + xc
        trace.t.append(t)
        trace.x_bbr_total.append(xbt)
        trace.x_cubic_total.append(xc)
        trace.phi_bbr.append(xbt / y if y > 0 else 0.0)
        trace.queue.append(q)
        trace.loss.append(loss_rate(y, q, cfg))
        trace.tau_min.append(tuple(tm))
        trace.w.append(tuple(windows))

    sample()
    half_dt = 0.5 * dt
    t0 = init.t
    for i in range(1, n_steps + 1):
        t = t0 + i * dt  # recomputed from the step index to avoid drift
        q, xb, wm, ss = _rk4(cfg, policy, dt, q, xb, tm, wm, ss, t_next=t)
        if policy.probing and len(xb) > 0:
            clocks = [clk - dt for clk in clocks]
            if policy.randomized_probing:
                due = [j for j, clk in enumerate(clocks) if clk < half_dt]
            else:
                # synchronized probing: one shared clock for every BBR flow
                due = list(range(len(xb))) if min(clocks) < half_dt else []
            if due:
                q, measured = _apply_probe(
                    cfg, policy, set(due), q, xb, tm, wm, ss, hist
                )
                for j in due:
                    trace.probe_events.append((t, j, tm[j]))
                    if policy.randomized_probing:
                        clocks[j] = float(rng.uniform(0.5, 1.5)) * settings.probe_period
                    else:
                        clocks[j] = settings.probe_period
        if i % decimate == 0 or i == n_steps:
            sample()
    return trace
