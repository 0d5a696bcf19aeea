"""Stability verdicts: center-manifold linearization and the instability
condition of the long-term window-update map, plus parameter-space sweeps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NetworkConfig, mbps_to_segments_per_sec, segments_per_sec_to_mbps
from .equilibrium import (
    ShortTermEquilibrium,
    UpdateFunctions,
    build_update_functions,
    equilibrium_delay,
    long_term_equilibrium,
)

#: Relative finite-difference step for slopes of the window-update map:
#: (w1 - w0) / SLOPE_STEP_DIV.  The update map develops near-singular
#: curvature where the starved plateau meets the congested cliff, so the
#: step must be well below the grid spacing for the extreme slope to
#: converge under step halving.
SLOPE_STEP_DIV = 1e5


@dataclass(frozen=True)
class LinearizationReport:
    """Jacobian, eigenstructure and center-manifold cubic coefficient at a
    short-term equilibrium.

    The Jacobian of the centered three-variable system has five nonzero
    entries, one zero eigenvalue and two negative ones; the sign of the
    cubic coefficient K of the reduced dynamics along the center manifold
    decides asymptotic stability.
    """

    j11: float
    j12: float
    j31: float
    j32: float
    j33: float
    eigenvalues: tuple
    center_eigvec: tuple
    K: float
    stable: bool

    @property
    def jacobian(self) -> np.ndarray:
        return np.array(
            [
                [self.j11, self.j12, 0.0],
                [0.0, 0.0, 0.0],
                [self.j31, self.j32, self.j33],
            ]
        )

    def to_dict(self) -> dict:
        return {
            "j11": self.j11,
            "j12": self.j12,
            "j31": self.j31,
            "j32": self.j32,
            "j33": self.j33,
            "eigenvalues": list(self.eigenvalues),
            "center_eigvec": list(self.center_eigvec),
            "K": self.K,
            "stable": self.stable,
        }


def linearize(eq: ShortTermEquilibrium, cfg: NetworkConfig) -> LinearizationReport:
    """Closed-form Jacobian entries, eigenpairs and the coefficient K."""
    tau = equilibrium_delay(cfg)
    alpha, beta = eq.alpha, eq.beta
    s, w_max, x = eq.s_eq, eq.w_max_eq, eq.x_btl_eq
    b, c, C = cfg.cubic_b, cfg.cubic_c, cfg.capacity

    p0 = b * tau / (c * s**4)
    if not 0.0 < p0 <= 1.0:
        raise ValueError(f"equilibrium loss rate {p0} outside (0, 1]")

    denom_a = (alpha * x + w_max / tau) ** 2
    denom_b = (beta * x + w_max / tau) ** 2
    j11 = alpha * C * (w_max / tau) / denom_a - 1.0
    j12 = -alpha * C * x / (tau * denom_a)
    j31 = -beta * C * s * w_max / (tau * denom_b)
    j32 = -(s / tau) * p0 - (s * w_max / tau**2) * C / denom_b
    j33 = -1.0 / s

    jac = np.array([[j11, j12, 0.0], [0.0, 0.0, 0.0], [j31, j32, j33]])
    eigenvalues = tuple(sorted(np.linalg.eigvals(jac).real))

    v1 = -1.0
    v2 = -(j11 / j12) * v1
    v3 = (j11 * j32 - j12 * j31) / (j12 * j33) * v1
    K = c * w_max * v3**3 * p0 / (tau * v2**3)
    return LinearizationReport(
        j11=j11,
        j12=j12,
        j31=j31,
        j32=j32,
        j33=j33,
        eigenvalues=eigenvalues,
        center_eigvec=(v1, v2, v3),
        K=K,
        stable=K < 0.0,
    )


@dataclass(frozen=True)
class InstabilityVerdict:
    """Outcome of the slope test on the idealized window-update map."""

    unstable: bool
    omega: tuple | None  # (omega_0, omega_1) around w_bar when unstable
    max_slope: float  # most negative finite-difference slope near w_bar
    w_bar: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "unstable": self.unstable,
            "omega": list(self.omega) if self.omega else None,
            "max_slope": self.max_slope,
            "w_bar": self.w_bar,
            "degenerate": self.degenerate,
        }


def _policy_variant(policy) -> tuple:
    """Map a policy spec (str or AdaptationPolicy) to (map_variant, gain).

    Only the strength rule enters the probe-to-probe equilibrium map, so
    policies that merely reschedule or filter probing (smoothed, randomized,
    detect_freeze) share the vanilla map.
    """
    gain = 1.25
    if hasattr(policy, "variant"):
        gain = getattr(policy, "gain", 1.25)
        policy = policy.variant
    if policy in ("bbrv2", "bbrv3"):
        return policy, gain
    return "vanilla", gain


def instability_condition(
    cfg: NetworkConfig,
    policy="vanilla",
    grid_points: int = 201,
    uf: UpdateFunctions | None = None,
) -> InstabilityVerdict:
    """Slope test of the long-term fixed point.

    Evaluates centered finite-difference slopes of the idealized update map
    on a grid spanning a quarter band-width around the fixed point; the
    equilibrium is reported unstable when the slope stays below -1 on a
    neighborhood with the fixed point in its interior.  Interval endpoints
    are refined by bisection on the slope threshold between grid points.
    """
    variant, gain = _policy_variant(policy)
    if uf is None:
        uf = build_update_functions(cfg, variant=variant, gain=gain)
    w_bar = long_term_equilibrium(cfg, uf)
    if uf.degenerate:
        return InstabilityVerdict(
            unstable=False, omega=None, max_slope=0.0, w_bar=w_bar, degenerate=True
        )

    h = (uf.w1 - uf.w0) / SLOPE_STEP_DIV

    def slope(w: float) -> float:
        return (uf.w_update(w + h) - uf.w_update(w - h)) / (2.0 * h)

    delta = 0.25 * (uf.w1 - uf.w0)
    half = (grid_points - 1) // 2
    grid = [w_bar + delta * (k - half) / half for k in range(2 * half + 1)]
    grid[half] = w_bar
    slopes = [slope(w) for w in grid]
    max_slope = min(slopes)

    if slopes[half] >= -1.0:
        return InstabilityVerdict(
            unstable=False, omega=None, max_slope=max_slope, w_bar=w_bar
        )

    lo_idx = half
    while lo_idx > 0 and slopes[lo_idx - 1] < -1.0:
        lo_idx -= 1
    hi_idx = half
    while hi_idx < len(grid) - 1 and slopes[hi_idx + 1] < -1.0:
        hi_idx += 1

    def refine(inside: float, outside: float) -> float:
        for _ in range(40):
            mid = 0.5 * (inside + outside)
            if slope(mid) < -1.0:
                inside = mid
            else:
                outside = mid
            if abs(outside - inside) <= 1e-6 * max(1.0, abs(mid)):
                break
        return inside

    omega_0 = grid[lo_idx] if lo_idx > 0 else grid[0]
    if lo_idx > 0:
        omega_0 = refine(grid[lo_idx], grid[lo_idx - 1])
    omega_1 = grid[hi_idx] if hi_idx < len(grid) - 1 else grid[-1]
    if hi_idx < len(grid) - 1:
        omega_1 = refine(grid[hi_idx], grid[hi_idx + 1])
    return InstabilityVerdict(
        unstable=True,
        omega=(omega_0, omega_1),
        max_slope=max_slope,
        w_bar=w_bar,
    )


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------

SWEEP_PARAMETERS = (
    "capacity",  # Mbps
    "path_prop_delay",  # seconds
    "buffer_bdp_multiple",  # buffer as a multiple of the path BDP
    "btl_delay_fraction",  # bottleneck propagation delay as a share of tau_p
)

_PARAM_ALIASES = {
    "capacity": "capacity",
    "capacity_mbps": "capacity",
    "prop_delay": "path_prop_delay",
    "path_prop_delay": "path_prop_delay",
    "buffer": "buffer_bdp_multiple",
    "buffer_bdp_multiple": "buffer_bdp_multiple",
    "btl_delay_fraction": "btl_delay_fraction",
    "btl_fraction": "btl_delay_fraction",
}


def canonical_parameter(name: str) -> str:
    try:
        return _PARAM_ALIASES[name]
    except KeyError:
        raise ValueError(
            f"unknown sweep parameter {name!r}; choose from {sorted(set(_PARAM_ALIASES))}"
        ) from None


def abstract_parameters(cfg: NetworkConfig) -> dict:
    """Express a configuration in the sweep's parameter space."""
    return {
        "capacity": segments_per_sec_to_mbps(cfg.capacity, cfg.mss),
        "path_prop_delay": cfg.path_prop_delay,
        "buffer_bdp_multiple": cfg.buffer / (cfg.capacity * cfg.path_prop_delay),
        "btl_delay_fraction": cfg.btl_prop_delay / cfg.path_prop_delay,
    }


def materialize(params: dict, base: NetworkConfig) -> NetworkConfig:
    """Build a NetworkConfig from abstract sweep parameters.

    The estimate floor stays at 1% of capacity so that both equilibrium
    branches remain reachable across sweep scales.
    """
    capacity = mbps_to_segments_per_sec(params["capacity"], base.mss)
    tau_p = params["path_prop_delay"]
    return NetworkConfig(
        capacity=capacity,
        path_prop_delay=tau_p,
        btl_prop_delay=params["btl_delay_fraction"] * tau_p,
        buffer=params["buffer_bdp_multiple"] * capacity * tau_p,
        n_bbr=base.n_bbr,
        n_cubic=base.n_cubic,
        mss=base.mss,
        cubic_b=base.cubic_b,
        cubic_c=base.cubic_c,
    )


@dataclass(frozen=True)
class SweepCell:
    x_name: str
    x_value: float
    y_name: str
    y_value: float
    verdict: InstabilityVerdict | None
    error: str | None = None


@dataclass(frozen=True)
class SweepSpec:
    name: str
    lo: float
    hi: float
    steps: int

    def values(self) -> list:
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.steps == 1:
            return [self.lo]
        return [
            self.lo + (self.hi - self.lo) * k / (self.steps - 1)
            for k in range(self.steps)
        ]


def sweep(
    cfg_base: NetworkConfig,
    param_x: SweepSpec,
    param_y: SweepSpec,
    policy="vanilla",
) -> list:
    """Instability verdicts over a 2-D parameter grid.

    Unswept parameters stay at the base configuration's values; per-cell
    solver failures are recorded in the cell and never abort the sweep.
    """
    x_name = canonical_parameter(param_x.name)
    y_name = canonical_parameter(param_y.name)
    base_params = abstract_parameters(cfg_base)
    cells = []
    for xv in param_x.values():
        for yv in param_y.values():
            params = dict(base_params)
            params[x_name] = xv
            params[y_name] = yv
            try:
                cfg = materialize(params, cfg_base)
                verdict = instability_condition(cfg, policy=policy)
                cells.append(SweepCell(x_name, xv, y_name, yv, verdict))
            except Exception as exc:  # noqa: BLE001 - recorded in-cell
                cells.append(SweepCell(x_name, xv, y_name, yv, None, error=str(exc)))
    return cells


SWEEP_CSV_HEADER = "x_name,x_value,y_name,y_value,unstable,max_slope,w_bar"


def write_sweep_csv(cells: list, path: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write(SWEEP_CSV_HEADER + "\n")
        for cell in cells:
            if cell.verdict is None:
                tail = ",,"
            else:
                v = cell.verdict
                tail = f"{int(v.unstable)},{v.max_slope!r},{v.w_bar!r}"
            handle.write(
                f"{cell.x_name},{cell.x_value!r},{cell.y_name},{cell.y_value!r},{tail}\n"
            )


# ---------------------------------------------------------------------------
# Oscillation detection on probe-time series (cross-validation of verdicts)
# ---------------------------------------------------------------------------

def probe_series_spread(values) -> float:
    """Relative peak-to-trough spread (max - min) / mean."""
    if len(values) < 2:
        return 0.0
    mean = math.fsum(values) / len(values)
    return (max(values) - min(values)) / mean


def tau_min_oscillating(values, window: int = 6, threshold: float = 0.02) -> bool:
    """Non-convergence of the min-RTT estimate over the trailing window."""
    if len(values) < window:
        return False
    return probe_series_spread(values[-window:]) > threshold


def tau_min_converged(values, window: int = 3, tol: float = 0.01) -> bool:
    """Trailing probe measurements agree within ``tol`` relative."""
    if len(values) < window:
        return False
    tail = values[-window:]
    return max(tail) / min(tail) - 1.0 <= tol


def recurring_values(values, rel_tol: float = 0.01, min_count: int = 3) -> list:
    """Cluster a probe series by relative tolerance; return the recurring
    cluster representatives (clusters with at least ``min_count`` members)."""
    clusters: list[list] = []
    for v in sorted(values):
        if clusters and v <= clusters[-1][0] * (1.0 + rel_tol):
            clusters[-1].append(v)
        else:
            clusters.append([v])
    return [
        math.fsum(cl) / len(cl) for cl in clusters if len(cl) >= min_count
    ]
