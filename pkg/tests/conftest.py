import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from d2dmtc.channel import ChannelParams, cellular_links
from d2dmtc.geometry import DeviceTable, build_environment, deploy_devices

# every property runs 1000 derandomized (seeded) cases
settings.register_profile("seeded", max_examples=1000, derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.data_too_large])
settings.load_profile("seeded")


@pytest.fixture(scope="session")
def env():
    return build_environment(866.0, rng_seed=3)


@pytest.fixture(scope="session")
def small_deployment(env):
    """200 devices: the desk-scale scenario used by the oracle tests."""
    devices = deploy_devices(env, 200, rng_seed=11)
    table = DeviceTable.from_devices(devices, env)
    return devices, table, cellular_links(env, table, ChannelParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
