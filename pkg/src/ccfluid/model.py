"""Core domain types and the pure right-hand-side functions of the fluid model.

Unit conventions used throughout the package: data volumes are counted in
MSS-sized segments, rates in segments/second and time in seconds.  Link
capacities given in Mbps are converted once, at configuration load time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

BITS_PER_BYTE = 8

#: Pacing-gain cap of the bandwidth-probing phase.
ALPHA_CAP = 1.25

#: Relative tolerance used to decide that the bottleneck queue is full.
#: Fixed-step integration never lands exactly on the buffer size.
QUEUE_FULL_RTOL = 1e-6


class ConfigError(ValueError):
    """A network configuration violates its invariants or cannot be parsed."""


def mbps_to_segments_per_sec(mbps: float, mss: int) -> float:
    """Convert a rate in Mbps to segments/second for the given segment size."""
    return mbps * 1e6 / (BITS_PER_BYTE * mss)


def segments_per_sec_to_mbps(rate: float, mss: int) -> float:
    return rate * BITS_PER_BYTE * mss / 1e6


@dataclass(frozen=True)
class NetworkConfig:
    """Topology and protocol parameters of the single-bottleneck network.

    capacity        -- bottleneck capacity in segments/second
    path_prop_delay -- per-flow round-trip propagation delay in seconds
    btl_prop_delay  -- bottleneck-link one-way propagation delay in seconds
    buffer          -- bottleneck buffer in segments
    n_bbr, n_cubic  -- flow counts per congestion-control algorithm
    mss             -- segment size in bytes (unit conversion only)
    chi             -- floor of the bottleneck-bandwidth estimate in
                       segments/second; defaults to 1% of capacity
    cubic_b         -- loss-reduction parameter
    cubic_c         -- window-scaling parameter
    """

    capacity: float
    path_prop_delay: float
    btl_prop_delay: float
    buffer: float
    n_bbr: int = 1
    n_cubic: int = 1
    mss: int = 1500
    chi: float = None  # type: ignore[assignment]
    cubic_b: float = 0.3
    cubic_c: float = 0.4

    def __post_init__(self):
        if self.chi is None:
            object.__setattr__(self, "chi", 0.01 * self.capacity)
        if not self.capacity > 0:
            raise ConfigError("capacity must be positive")
        if not self.buffer > 0:
            raise ConfigError("buffer must be positive")
        if not self.path_prop_delay > 0:
            raise ConfigError("path_prop_delay must be positive")
        if not 0 < self.btl_prop_delay <= self.path_prop_delay:
            raise ConfigError(
                "btl_prop_delay must satisfy 0 < btl_prop_delay <= path_prop_delay"
            )
        if not 0 < self.chi < self.capacity:
            raise ConfigError("chi must satisfy 0 < chi < capacity")
        if not 0 < self.cubic_b < 1:
            raise ConfigError("cubic_b must lie in (0, 1)")
        if not self.cubic_c > 0:
            raise ConfigError("cubic_c must be positive")
        if self.n_bbr < 0 or self.n_cubic < 0 or self.n_bbr + self.n_cubic < 1:
            raise ConfigError("need n_bbr + n_cubic >= 1 with non-negative counts")

    @property
    def bdp(self) -> float:
        """Path bandwidth-delay product in segments."""
        return self.capacity * self.path_prop_delay

    def to_dict(self) -> dict:
        return {
            "capacity_segments_per_sec": self.capacity,
            "capacity_mbps": segments_per_sec_to_mbps(self.capacity, self.mss),
            "path_prop_delay": self.path_prop_delay,
            "btl_prop_delay": self.btl_prop_delay,
            "buffer_segments": self.buffer,
            "n_bbr": self.n_bbr,
            "n_cubic": self.n_cubic,
            "mss": self.mss,
            "chi": self.chi,
            "cubic_b": self.cubic_b,
            "cubic_c": self.cubic_c,
        }


_CONFIG_KEYS = {
    "capacity",
    "path_prop_delay",
    "btl_prop_delay",
    "buffer",
    "n_bbr",
    "n_cubic",
    "mss",
    "chi",
    "cubic_b",
    "cubic_c",
}


def config_from_dict(doc: dict) -> NetworkConfig:
    """Build a NetworkConfig from a JSON-style document.

    ``capacity`` must be an object carrying exactly one of the keys ``mbps``
    or ``segments_per_sec``.  ``buffer`` is either a plain number (segments)
    or an object with exactly one of ``segments``, ``bytes`` or
    ``bdp_multiple``.
    """
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key in ("capacity", "path_prop_delay", "btl_prop_delay", "buffer"):
        if key not in doc:
            raise ConfigError(f"missing configuration key: {key}")

    mss = int(doc.get("mss", 1500))
    if mss <= 0:
        raise ConfigError("mss must be positive")

    cap = doc["capacity"]
    if not isinstance(cap, dict) or len(set(cap) & {"mbps", "segments_per_sec"}) != 1:
        raise ConfigError(
            'capacity must carry exactly one of "mbps" or "segments_per_sec"'
        )
    if "mbps" in cap:
        capacity = mbps_to_segments_per_sec(float(cap["mbps"]), mss)
    else:
        capacity = float(cap["segments_per_sec"])

    path_prop_delay = float(doc["path_prop_delay"])
    buf = doc["buffer"]
    if isinstance(buf, dict):
        if len(set(buf) & {"segments", "bytes", "bdp_multiple"}) != 1:
            raise ConfigError(
                'buffer object must carry exactly one of "segments", "bytes" '
                'or "bdp_multiple"'
            )
        if "segments" in buf:
            buffer = float(buf["segments"])
        elif "bytes" in buf:
            buffer = float(buf["bytes"]) / mss
        else:
            buffer = float(buf["bdp_multiple"]) * capacity * path_prop_delay
    else:
        buffer = float(buf)

    kwargs = {}
    if "chi" in doc:
        kwargs["chi"] = float(doc["chi"])
    if "cubic_b" in doc:
        kwargs["cubic_b"] = float(doc["cubic_b"])
    if "cubic_c" in doc:
        kwargs["cubic_c"] = float(doc["cubic_c"])
    return NetworkConfig(
        capacity=capacity,
        path_prop_delay=path_prop_delay,
        btl_prop_delay=float(doc["btl_prop_delay"]),
        buffer=buffer,
        n_bbr=int(doc.get("n_bbr", 1)),
        n_cubic=int(doc.get("n_cubic", 1)),
        mss=mss,
        **kwargs,
    )


def load_config(path: str) -> NetworkConfig:
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in configuration file {path!r}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"configuration file {path!r} must contain a JSON object")
    return config_from_dict(doc)


@dataclass(frozen=True)
class BbrFlowState:
    """Per-flow BBR state.

    x_btl       -- bottleneck-bandwidth estimate, segments/second
    tau_min     -- minimum-RTT estimate, seconds
    probe_clock -- seconds until the next RTT-probing step
    probe_history -- recent probe measurements (detect-and-freeze policy)
    """

    x_btl: float
    tau_min: float
    probe_clock: float = 10.0
    probe_history: tuple = ()


@dataclass(frozen=True)
class CubicFlowState:
    """Per-flow CUBIC state: recorded maximum window and growth duration."""

    w_max: float
    s: float


@dataclass(frozen=True)
class SystemState:
    """Dynamic state of the competition: per-flow states plus the queue."""

    t: float
    bbr: tuple
    cubic: tuple
    queue: float

    def validate(self, cfg: NetworkConfig) -> None:
        if len(self.bbr) != cfg.n_bbr or len(self.cubic) != cfg.n_cubic:
            raise ValueError("flow-state list lengths do not match the configuration")
        if not 0 <= self.queue <= cfg.buffer * (1 + QUEUE_FULL_RTOL):
            raise ValueError("queue outside [0, buffer]")
        for flow in self.bbr:
            if flow.x_btl < cfg.chi * (1 - 1e-12):
                raise ValueError("x_btl below the estimate floor chi")
            if flow.tau_min < cfg.path_prop_delay * (1 - 1e-12):
                raise ValueError("tau_min below the propagation delay")
        for flow in self.cubic:
            if not flow.w_max > 0 or flow.s < 0:
                raise ValueError("CUBIC state outside its domain")


@dataclass(frozen=True)
class Rates:
    """Instantaneous rates and strengths derived from a system state."""

    x_bbr: tuple
    x_cubic: tuple
    y: float
    p: float
    tau: float
    alpha: tuple
    beta: tuple


def window_growth(w_max: float, s: float, cfg: NetworkConfig) -> float:
    """CUBIC window-growth function.

    Returns the congestion window reached ``s`` seconds after a loss that
    recorded maximum window ``w_max``.
    """
    if not w_max > 0:
        raise ValueError(f"w_max must be positive, got {w_max}")
    b, c = cfg.cubic_b, cfg.cubic_c
    return w_max + c * (s - (b * w_max / c) ** (1.0 / 3.0)) ** 3


def bbr_strengths(tau_min: float, tau: float) -> tuple:
    """Probing strength and strength of a BBRv1 flow given its delays.

    Both coefficients derive from the congestion-window constraint of twice
    the estimated bandwidth-delay product; the probing strength is
    additionally capped by the 5/4 pacing gain.
    """
    if not (tau_min > 0 and tau > 0):
        raise ValueError("delays must be positive")
    ratio = 2.0 * tau_min / tau
    return min(ALPHA_CAP, ratio), min(1.0, ratio)


def bbrv2_strengths(tau_min: float, tau: float) -> tuple:
    """Strengths under the tighter inflight bounds of BBRv2.

    The long-term bound caps probing at (5/4) of the estimated BDP and the
    short-term bound caps cruising at one BDP, so both coefficients are
    pointwise below their BBRv1 counterparts.
    """
    if not (tau_min > 0 and tau > 0):
        raise ValueError("delays must be positive")
    ratio = min(1.0, tau_min / tau)
    return ALPHA_CAP * ratio, ratio


def loss_rate(y: float, queue: float, cfg: NetworkConfig) -> float:
    """Loss rate at the bottleneck: the relative excess once the buffer is full."""
    if y < 0:
        raise ValueError("total load must be non-negative")
    if y > cfg.capacity and queue >= cfg.buffer * (1 - QUEUE_FULL_RTOL):
        return (y - cfg.capacity) / y
    return 0.0


def total_load(state: SystemState, cfg: NetworkConfig, strengths=bbr_strengths) -> Rates:
    """Per-flow rates, total load and loss for the given state.

    ``strengths`` selects the rule mapping (tau_min, tau) to (alpha, beta);
    adaptation policies substitute their own rule here.
    """
    tau = cfg.path_prop_delay + state.queue / cfg.capacity
    alphas, betas, x_bbr = [], [], []
    for flow in state.bbr:
        a, b = strengths(flow.tau_min, tau)
        alphas.append(a)
        betas.append(b)
        x_bbr.append(b * flow.x_btl)
    x_cubic = [window_growth(k.w_max, k.s, cfg) / tau for k in state.cubic]
    y = math.fsum(x_bbr) + math.fsum(x_cubic)
    return Rates(
        x_bbr=tuple(x_bbr),
        x_cubic=tuple(x_cubic),
        y=y,
        p=loss_rate(y, state.queue, cfg),
        tau=tau,
        alpha=tuple(alphas),
        beta=tuple(betas),
    )


def backoff_queue(state: SystemState, cfg: NetworkConfig) -> float:
    """Residual bottleneck queue during a synchronized RTT-probing step.

    Probing BBR flows shrink their windows to 4 segments while CUBIC flows
    hold their loss-reduced windows; the inflight volume beyond the
    bottleneck pipe accumulates in the buffer.
    """
    inflight = 4.0 * cfg.n_bbr
    inflight += (1.0 - cfg.cubic_b) * math.fsum(
        window_growth(k.w_max, k.s, cfg) for k in state.cubic
    )
    raw = inflight - cfg.btl_prop_delay * cfg.capacity
    return min(cfg.buffer, max(0.0, raw))
