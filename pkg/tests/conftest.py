import pytest

from strata.clock import VirtualClock
from strata.devices import Device, DeviceProfile, DevicePool
from strata.stack import Stack
from strata.telemetry import AddbStore

BLOCK = 512


def make_profile(blocks, block_size=BLOCK, tier=1):
    # Keep the tier performance ordering from the defaults but size the
    # segment to the test's needs.
    latencies = {1: 1e-6, 2: 50e-6, 3: 5e-3, 4: 15e-3}
    bws = {1: 10e9, 2: 2e9, 3: 200e6, 4: 100e6}
    return DeviceProfile(capacity_bytes=blocks * block_size,
                         read_bw=bws[tier], write_bw=bws[tier],
                         latency=latencies[tier])


def make_pool(tmp_path, spec, block_size=BLOCK):
    """spec: list of (device_id, tier, blocks[, spare]) tuples."""
    pool = DevicePool()
    for entry in spec:
        dev_id, tier, blocks = entry[:3]
        spare = entry[3] if len(entry) > 3 else False
        pool.add(Device(dev_id, tier, make_profile(blocks, block_size, tier),
                        str(tmp_path / f"{dev_id}.seg"), block_size, spare=spare))
    return pool


@pytest.fixture
def make_stack(tmp_path):
    stacks = []

    def _make(spec=None, name="redo.log", with_addb=False, block_size=BLOCK):
        spec = spec or [(f"d{i}", 1, 512) for i in range(4)]
        pool = make_pool(tmp_path, spec, block_size)
        clock = VirtualClock()
        addb = AddbStore(clock) if with_addb else None
        stack = Stack(pool, str(tmp_path / name), clock=clock, addb=addb)
        stacks.append(stack)
        return stack

    yield _make
    for s in stacks:
        try:
            s.close()
        except Exception:
            pass
