"""strata: a simulated tiered object-storage stack.

Block devices in four performance tiers, parity-striped objects, an ordered
key-value metadata index, redo-log transactions, tier migration, failure
repair, near-data function shipping, storage-backed windows, producer/
consumer element streams, and a deterministic cluster harness with virtual
time. Performance is modeled (virtual costs), correctness is real (data
round-trips through backing files).
"""

from .clock import VirtualClock
from .core import (
    BlockSpec,
    ContainerRegistry,
    Extent,
    Mirrored,
    Placement,
    Striped,
    Tiered,
    layout_map,
)
from .cluster import Cluster, spawn
from .config import default_config, load as load_config, save as save_config
from .devices import Device, DevicePool, DeviceProfile, default_profile
from .errors import StorageError
from .hsm import HsmEngine, HsmPolicy
from .indices import Index, IndexRegistry
from .objects import ObjectStore
from .repair import FailureEvent, HaMonitor, Thresholds
from .shipping import FunctionDescriptor, FunctionRegistry, Shipper
from .sim import Channel, Get, Join, Put, Simulator, Sleep
from .stack import Stack, Txn
from .streams import DrainReport, StreamDescriptor, StreamEngine
from .telemetry import AddbRecord, AddbStore, load_tsv
from .wal import RedoLog, fnv1a64
from .windows import Window, WindowAccess, WindowManager, stream_kernels

__version__ = "0.1.0"

__all__ = [
    "AddbRecord", "AddbStore", "BlockSpec", "Channel", "Cluster",
    "ContainerRegistry", "Device", "DevicePool", "DeviceProfile",
    "DrainReport", "Extent", "FailureEvent", "FunctionDescriptor",
    "FunctionRegistry", "Get", "HaMonitor", "HsmEngine", "HsmPolicy",
    "Index", "IndexRegistry", "Join", "Mirrored", "ObjectStore", "Placement",
    "Put", "RedoLog", "Shipper", "Simulator", "Sleep", "Stack",
    "StorageError", "StreamDescriptor", "StreamEngine", "Striped", "Thresholds",
    "Tiered", "Txn", "VirtualClock", "Window", "WindowAccess",
    "WindowManager", "default_config", "default_profile", "fnv1a64",
    "layout_map", "load_config", "load_tsv", "save_config", "spawn",
    "stream_kernels",
]
