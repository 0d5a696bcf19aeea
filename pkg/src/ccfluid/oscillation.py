"""Long-term discrete process across probing steps: limit cycles and the
fairness bounds of the worst-case and non-pessimal oscillation patterns.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import (
    BbrFlowState,
    CubicFlowState,
    NetworkConfig,
    SystemState,
    bbr_strengths,
    window_growth,
)
from .dynamics import IntegratorSettings, frozen_policy, simulate
from .equilibrium import (
    UpdateFunctions,
    build_update_functions,
    long_term_equilibrium,
)
from .stability import InstabilityVerdict, instability_condition

IDEALIZED = "idealized"
SIMULATED = "simulated"


class StableConfigError(ValueError):
    """The configuration does not satisfy the instability condition."""


@dataclass(frozen=True)
class LongTermTrace:
    """Window sizes at probe instants plus the strengths that produced them."""

    w: tuple
    alpha: tuple
    tau_min: tuple
    mode: str


def iterate_longterm(
    cfg: NetworkConfig,
    w_init: float,
    n_steps: int,
    mode: str = IDEALIZED,
    uf: UpdateFunctions | None = None,
    settings: IntegratorSettings | None = None,
) -> LongTermTrace:
    """Run the probe-to-probe window process.

    Idealized mode applies the equilibrium update map; simulated mode
    integrates each probing interval with strengths frozen at the values the
    interval-start window produces, resetting the CUBIC state (w_max to the
    current window, s to zero) to model the probe-time loss back-off.
    """
    if not w_init > 0:
        raise ValueError("w_init must be positive")
    if mode not in (IDEALIZED, SIMULATED):
        raise ValueError(f"unknown mode {mode!r}")
    if uf is None:
        uf = build_update_functions(cfg)
    ws = [w_init]
    alphas = []
    tau_mins = []

    if mode == IDEALIZED:
        w = w_init
        for _ in range(n_steps):
            alphas.append(uf.alpha_update(w))
            tau_mins.append(uf.tau_min_at(w))
            w = uf.w_update(w)
            ws.append(w)
        return LongTermTrace(tuple(ws), tuple(alphas), tuple(tau_mins), mode)

    if settings is None:
        settings = IntegratorSettings(horizon=10.0)
    x_btl = cfg.capacity / (cfg.n_bbr + cfg.n_cubic)
    w = w_init
    for _ in range(n_steps):
        tau_min = uf.tau_min_at(w)
        alpha, beta = uf.strengths_for(tau_min)
        alphas.append(alpha)
        tau_mins.append(tau_min)
        q_minus = (tau_min - cfg.path_prop_delay) * cfg.capacity
        init = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=max(cfg.chi, x_btl), tau_min=tau_min,
                              probe_clock=1e9),),
            cubic=(CubicFlowState(w_max=w, s=0.0),),
            queue=min(cfg.buffer, max(0.0, q_minus)),
        )
        trace = simulate(
            cfg,
            frozen_policy(alpha, beta),
            IntegratorSettings(
                dt=settings.dt, probe_period=settings.probe_period,
                horizon=settings.probe_period,
            ),
            init=init,
            decimate=10**9,
        )
        w = trace.w[-1][0]
        x_btl = trace.x_bbr_total[-1] / beta
        ws.append(w)
    return LongTermTrace(tuple(ws), tuple(alphas), tuple(tau_mins), mode)


CYCLE_CASES = {
    "both_plateaus": "the decreasing band lies inside the update map's value range",
    "lower_plateau_only": "only the lower plateau lies inside the value range",
    "upper_plateau_only": "only the upper plateau lies inside the value range",
    "no_plateau": "the value range sits strictly inside the decreasing band",
}


@dataclass(frozen=True)
class LimitCycle:
    w_hat0: float
    w_hat1: float
    case: str


def limit_cycle(
    cfg: NetworkConfig,
    uf: UpdateFunctions | None = None,
    verdict: InstabilityVerdict | None = None,
    rtol: float = 1e-6,
) -> LimitCycle:
    """Worst-case 2-cycle of the idealized process.

    Requires an unstable long-term equilibrium.  Soundness (the two points
    map onto each other) is verified for the plateau cases; its failure
    signals the excluded regime where the whole value range is decreasing.
    """
    if uf is None:
        uf = build_update_functions(cfg)
    if verdict is None:
        verdict = instability_condition(cfg, uf=uf)
    if not verdict.unstable:
        raise StableConfigError(
            "limit cycle undefined: the instability condition does not hold "
            f"(max_slope={verdict.max_slope:.4f}, w_bar={verdict.w_bar:.4f})"
        )
    w_hat0 = uf.w_update(uf.w_gt)
    w_hat1 = uf.w_update(uf.w_lt)

    lower_in = uf.w_lt > uf.w0
    upper_in = uf.w_gt < uf.w1
    if not lower_in and not upper_in:
        case = "both_plateaus"
    elif lower_in and not upper_in:
        case = "lower_plateau_only"
    elif not lower_in and upper_in:
        case = "upper_plateau_only"
    else:
        case = "no_plateau"

    back0 = uf.w_update(w_hat0)
    back1 = uf.w_update(w_hat1)
    sound = (
        abs(back0 - w_hat1) <= rtol * abs(w_hat1)
        and abs(back1 - w_hat0) <= rtol * abs(w_hat0)
    )
    if not sound:
        raise RuntimeError(
            f"limit-cycle soundness failed in case {case!r} "
            f"({CYCLE_CASES[case]}): map(w_hat0)={back0} vs w_hat1={w_hat1}, "
            f"map(w_hat1)={back1} vs w_hat0={w_hat0}"
        )
    return LimitCycle(w_hat0=w_hat0, w_hat1=w_hat1, case=case)


@dataclass(frozen=True)
class FairnessBounds:
    """Worst-case and non-pessimal BBR capacity-share bounds.

    The worst-case fields bound the share series from the maximal-amplitude
    oscillation; the non-pessimal fields approximate the typical range under
    incomplete convergence and may occasionally be violated.
    """

    w_hat0: float
    w_hat1: float
    phi_max: float
    phi_min: float
    wcap_case: str
    W_hat0: float
    W_hat1: float
    phi_np_max: float
    phi_np_min: float
    w_bar: float
    np_reliable: bool

    def to_dict(self) -> dict:
        return {
            "w_hat0": self.w_hat0,
            "w_hat1": self.w_hat1,
            "phi_max": self.phi_max,
            "phi_min": self.phi_min,
            "wcap_case": self.wcap_case,
            "W_hat0": self.W_hat0,
            "W_hat1": self.W_hat1,
            "phi_np_max": self.phi_np_max,
            "phi_np_min": self.phi_np_min,
            "w_bar": self.w_bar,
            "np_reliable": self.np_reliable,
        }


def _share_at(
    w_now: float, w_prev: float, cfg: NetworkConfig, uf: UpdateFunctions
) -> float:
    """BBR capacity share at window ``w_now`` with the min-RTT estimate (and
    therefore the strengths) carried over from the previous probing step at
    window ``w_prev``."""
    tau_bar = uf.tau_bar
    tau_min = uf.tau_min_at(w_prev)
    alpha, beta = bbr_strengths(tau_min, tau_bar)
    x_cubic = w_now / tau_bar
    x_bbr = beta * max(cfg.chi, cfg.capacity - x_cubic / alpha)
    return x_bbr / (x_cubic + x_bbr)


def fairness_bounds(
    cfg: NetworkConfig,
    uf: UpdateFunctions | None = None,
    probe_period: float = 10.0,
    prev_endpoint_strengths: bool = True,
) -> FairnessBounds:
    """Worst-case bounds from the limit cycle plus non-pessimal bounds
    around the long-term equilibrium window.

    ``prev_endpoint_strengths`` selects whether the strengths at one cycle
    endpoint derive from the other endpoint's window (the probing-step
    carry-over); disabling it quantifies the convention's sensitivity.
    """
    if uf is None:
        uf = build_update_functions(cfg)
    cycle = limit_cycle(cfg, uf=uf)
    w_bar = long_term_equilibrium(cfg, uf)

    def share(w_now, w_prev):
        return _share_at(w_now, w_prev if prev_endpoint_strengths else w_now, cfg, uf)

    phi_max = share(cycle.w_hat0, cycle.w_hat1)
    phi_min = share(cycle.w_hat1, cycle.w_hat0)

    W_hat0 = (1.0 - cfg.cubic_b) * w_bar
    W_hat1 = window_growth(w_bar, probe_period, cfg)
    phi_np_max = share(W_hat0, W_hat1)
    phi_np_min = share(W_hat1, W_hat0)

    # The upper non-pessimal window is unreliable when the slowest-growing
    # equilibrium duration exceeds the probing period.
    np_reliable = uf._eq_gt.s_eq <= probe_period
    return FairnessBounds(
        w_hat0=cycle.w_hat0,
        w_hat1=cycle.w_hat1,
        phi_max=phi_max,
        phi_min=phi_min,
        wcap_case=cycle.case,
        W_hat0=W_hat0,
        W_hat1=W_hat1,
        phi_np_max=phi_np_max,
        phi_np_min=phi_np_min,
        w_bar=w_bar,
        np_reliable=np_reliable,
    )


def worst_case_bounds(cfg: NetworkConfig, uf: UpdateFunctions | None = None) -> FairnessBounds:
    return fairness_bounds(cfg, uf=uf)


def non_pessimal_bounds(cfg: NetworkConfig, uf: UpdateFunctions | None = None) -> FairnessBounds:
    return fairness_bounds(cfg, uf=uf)


def write_longterm_csv(trace: LongTermTrace, path: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("step,w,alpha,tau_min\n")
        for k, w in enumerate(trace.w):
            alpha = repr(trace.alpha[k]) if k < len(trace.alpha) else ""
            tau_min = repr(trace.tau_min[k]) if k < len(trace.tau_min) else ""
            handle.write(f"{k},{w!r},{alpha},{tau_min}\n")
