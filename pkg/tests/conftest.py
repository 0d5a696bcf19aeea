import numpy as np
import pytest

from ccfluid.model import NetworkConfig

MSS = 1500
PAPER_CAPACITY = 100e6 / (8 * MSS)  # 100 Mbps in segments/s
PAPER_BUFFER = 750000 / MSS  # 750 KB in segments


@pytest.fixture(scope="session")
def default_cfg() -> NetworkConfig:
    """Paper-default network: 100 Mbps, 40 ms RTT propagation, 10 ms
    bottleneck one-way, 1.5-BDP buffer."""
    return NetworkConfig(
        capacity=PAPER_CAPACITY,
        path_prop_delay=0.04,
        btl_prop_delay=0.01,
        buffer=PAPER_BUFFER,
    )


def random_config(rng: np.random.Generator) -> NetworkConfig:
    """Valid configuration drawn from practically relevant ranges."""
    mbps = rng.uniform(5, 400)
    tau_p = rng.uniform(0.005, 0.15)
    capacity = mbps * 1e6 / (8 * MSS)
    return NetworkConfig(
        capacity=capacity,
        path_prop_delay=tau_p,
        btl_prop_delay=float(rng.uniform(0.1, 0.6)) * tau_p,
        buffer=float(rng.uniform(0.2, 4.0)) * capacity * tau_p,
        chi=float(rng.uniform(0.002, 0.05)) * capacity,
    )


@pytest.fixture(scope="session")
def vanilla_trace_120(default_cfg):
    """120 s vanilla simulation at paper defaults, shared across tests."""
    from ccfluid.dynamics import AdaptationPolicy, IntegratorSettings, simulate

    return simulate(
        default_cfg, AdaptationPolicy("vanilla"), IntegratorSettings(horizon=120.0)
    )


@pytest.fixture(scope="session")
def bbrv2_trace_120(default_cfg):
    from ccfluid.dynamics import AdaptationPolicy, IntegratorSettings, simulate

    return simulate(
        default_cfg, AdaptationPolicy("bbrv2"), IntegratorSettings(horizon=120.0)
    )


@pytest.fixture(scope="session")
def sweep_20x20(default_cfg):
    """Capacity x buffer-multiple instability sweep shared across tests."""
    from ccfluid.stability import SweepSpec, sweep

    return sweep(
        default_cfg,
        SweepSpec("capacity", 1.0, 200.0, 20),
        SweepSpec("buffer", 0.1, 3.0, 20),
    )
