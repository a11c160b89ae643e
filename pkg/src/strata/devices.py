"""Emulated storage devices grouped into four tiers.

Each device persists to one backing file:

    magic "SAGEDEV1" | version u32 LE | block_size u64 LE | capacity u64 LE
    ... blocks at fixed offsets (header_size + index * block_size)

Performance is modeled, not real: every operation returns its virtual cost
(seconds) computed from the device profile. Callers decide what to do with
the cost (advance a clock, sleep in the simulator, ignore it).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import BadConfig, BadLength, DeviceFailed, OutOfCapacity

MAGIC = b"SAGEDEV1"
VERSION = 1
_HEADER = struct.Struct("<8sIQQ")

# Invented defaults, tunable via config; chosen so that latency strictly
# increases and bandwidth strictly decreases from tier 1 to tier 4.
DEFAULT_TIER_PROFILES = {
    1: dict(capacity_bytes=64 * 2**20, read_bw=10e9, write_bw=10e9, latency=1e-6),
    2: dict(capacity_bytes=256 * 2**20, read_bw=2e9, write_bw=2e9, latency=50e-6),
    3: dict(capacity_bytes=1024 * 2**20, read_bw=200e6, write_bw=200e6, latency=5e-3),
    4: dict(capacity_bytes=4096 * 2**20, read_bw=100e6, write_bw=100e6, latency=15e-3),
}

TIERS = (1, 2, 3, 4)  # 1=NVRAM, 2=flash SSD, 3=fast disk, 4=archive


@dataclass(frozen=True)
class DeviceProfile:
    capacity_bytes: int
    read_bw: float  # bytes per virtual second
    write_bw: float
    latency: float  # virtual seconds per op

    def __post_init__(self):
        if min(self.capacity_bytes, self.read_bw, self.write_bw, self.latency) <= 0:
            raise BadConfig("device profile fields must all be positive")


def default_profile(tier: int) -> DeviceProfile:
    if tier not in DEFAULT_TIER_PROFILES:
        raise BadConfig(f"tier must be 1..4, got {tier}")
    return DeviceProfile(**DEFAULT_TIER_PROFILES[tier])


class Device:
    """One file-backed block device.

    A device serializes its own operations; the simulation drives it from a
    single scheduler so no locking is needed here.
    """

    def __init__(self, device_id: str, tier: int, profile: DeviceProfile,
                 path: str, block_size: int, spare: bool = False):
        if tier not in TIERS:
            raise BadConfig(f"tier must be 1..4, got {tier}")
        self.device_id = device_id
        self.tier = tier
        self.profile = profile
        self.path = path
        self.block_size = block_size
        self.spare = spare
        self.failed = False
        self.bytes_read = 0
        self.bytes_written = 0
        self.on_fail: Optional[Callable[["Device"], None]] = None
        self.n_blocks = profile.capacity_bytes // block_size
        if os.path.exists(path):
            self._open_existing()
        else:
            self._create()

    def _create(self):
        self._fh = open(self.path, "w+b")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.block_size,
                                    self.profile.capacity_bytes))
        self._fh.flush()

    def _open_existing(self):
        self._fh = open(self.path, "r+b")
        hdr = self._fh.read(_HEADER.size)
        magic, version, block_size, capacity = _HEADER.unpack(hdr)
        if magic != MAGIC or version != VERSION:
            raise BadConfig(f"{self.path}: not a device segment")
        if block_size != self.block_size or capacity != self.profile.capacity_bytes:
            raise BadConfig(f"{self.path}: geometry mismatch with config")

    def _offset(self, index: int) -> int:
        return _HEADER.size + index * self.block_size

    def write_block(self, index: int, data: bytes) -> float:
        if self.failed:
            raise DeviceFailed(self.device_id)
        if not 0 <= index < self.n_blocks:
            raise OutOfCapacity(f"{self.device_id}: block {index} of {self.n_blocks}")
        if len(data) != self.block_size:
            raise BadLength(f"need exactly {self.block_size} bytes, got {len(data)}")
        self._fh.seek(self._offset(index))
        self._fh.write(data)
        self._fh.flush()
        self.bytes_written += len(data)
        return self.profile.latency + len(data) / self.profile.write_bw

    def read_block(self, index: int) -> tuple[bytes, float]:
        if self.failed:
            raise DeviceFailed(self.device_id)
        if not 0 <= index < self.n_blocks:
            raise OutOfCapacity(f"{self.device_id}: block {index} of {self.n_blocks}")
        self._fh.seek(self._offset(index))
        data = self._fh.read(self.block_size)
        if len(data) < self.block_size:
            # Never-written tail of the segment reads as zeros.
            data = data + bytes(self.block_size - len(data))
        self.bytes_read += len(data)
        return data, self.profile.latency + len(data) / self.profile.read_bw

    def fail(self) -> None:
        self.failed = True
        if self.on_fail is not None:
            self.on_fail(self)

    def restore(self, wipe: bool = False) -> None:
        """Bring a failed device back. wipe=True models a replacement drive."""
        self.failed = False
        if wipe:
            self._fh.seek(0)
            self._fh.truncate(_HEADER.size)
            self._fh.seek(0)
            self._fh.write(_HEADER.pack(MAGIC, VERSION, self.block_size,
                                        self.profile.capacity_bytes))
            self._fh.flush()

    def reopen(self) -> None:
        """Simulate a process restart: drop the handle, reattach to the file."""
        self._fh.close()
        self._open_existing()

    def close(self) -> None:
        self._fh.close()


class DevicePool:
    """All devices of a cluster, with tier and spare lookups."""

    def __init__(self):
        self._devices: dict[str, Device] = {}

    def add(self, device: Device) -> None:
        if device.device_id in self._devices:
            raise BadConfig(f"duplicate device id {device.device_id!r}")
        self._devices[device.device_id] = device

    def get(self, device_id: str) -> Device:
        try:
            return self._devices[device_id]
        except KeyError:
            raise BadConfig(f"unknown device {device_id!r}") from None

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._devices

    def all(self) -> list[Device]:
        return [self._devices[k] for k in sorted(self._devices)]

    def by_tier(self, tier: int, include_spares: bool = False) -> list[Device]:
        return [d for d in self.all()
                if d.tier == tier and (include_spares or not d.spare)]

    def spares(self, tier: int) -> list[Device]:
        return [d for d in self.all() if d.tier == tier and d.spare and not d.failed]

    def reopen_all(self) -> None:
        for d in self.all():
            d.reopen()

    def close_all(self) -> None:
        for d in self.all():
            d.close()
