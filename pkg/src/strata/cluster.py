"""Deterministic simulated cluster: nodes, message transport with cost
accounting, a shared virtual clock, and fault injection.

The whole cluster forms one metadata domain: a single redo log and object
engine shared by every storage node, with the transport mapping devices to
their owning nodes for locality accounting. Crashing any storage node
therefore restarts the domain (volatile state lost, backing files kept).
"""
from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Optional

from . import config as configmod
from .clock import VirtualClock
from .devices import Device, DeviceProfile, DevicePool, default_profile
from .errors import BadConfig, NodeDown, Partitioned
from .hsm import HsmEngine, HsmPolicy
from .repair import HaMonitor, Thresholds
from .shipping import FunctionRegistry, Shipper
from .sim import Simulator
from .stack import Stack
from .streams import StreamEngine
from .telemetry import AddbStore
from .windows import WindowManager

ENVELOPE_BYTES = 64


@dataclass
class Node:
    node_id: str
    roles: tuple[str, ...]
    ranks: int
    device_ids: tuple[str, ...]
    up: bool = True


@dataclass(frozen=True)
class Message:
    t: float
    src: str
    dst: str
    tag: str
    nbytes: int


class Cluster:
    """Running cluster built from a validated config dict."""

    def __init__(self, config: dict, workdir: str,
                 clock: Optional[VirtualClock] = None):
        configmod.validate(config)
        self.config = config
        self.workdir = workdir
        os.makedirs(workdir, exist_ok=True)
        self.clock = clock or VirtualClock()
        self.seed = int(config["seed"])
        self.rng = random.Random(self.seed)
        self.addb = AddbStore(self.clock, node="cluster")

        net = config["network"]
        self.latency = float(net["latency"])
        self.bandwidth = float(net["bandwidth"])

        self.nodes: dict[str, Node] = {}
        self._node_of_device: dict[str, str] = {}
        self.pool = DevicePool()
        for node_cfg in config["nodes"]:
            dev_ids = []
            for i, dev_cfg in enumerate(node_cfg.get("devices", [])):
                dev_id = configmod.device_id(node_cfg["node_id"], dev_cfg, i)
                tier = dev_cfg["tier"]
                base = default_profile(tier)
                profile = DeviceProfile(
                    capacity_bytes=dev_cfg["blocks"] * dev_cfg.get("block_size", 4096),
                    read_bw=dev_cfg.get("read_bw", base.read_bw),
                    write_bw=dev_cfg.get("write_bw", base.write_bw),
                    latency=dev_cfg.get("latency", base.latency),
                )
                device = Device(dev_id, tier, profile,
                                os.path.join(workdir, dev_id + ".seg"),
                                dev_cfg.get("block_size", 4096),
                                spare=dev_cfg.get("spare", False))
                self.pool.add(device)
                self._node_of_device[dev_id] = node_cfg["node_id"]
                dev_ids.append(dev_id)
            self.nodes[node_cfg["node_id"]] = Node(
                node_cfg["node_id"], tuple(node_cfg.get("roles", [])),
                int(node_cfg.get("ranks", 1)), tuple(dev_ids))

        self.stack = Stack(self.pool, os.path.join(workdir, "redo.log"),
                           clock=self.clock, addb=self.addb)
        self.windows = WindowManager(self.stack)
        hsm_cfg = config.get("hsm", {})
        self.hsm = HsmEngine(self.stack, HsmPolicy(
            promote_rate_threshold=hsm_cfg.get("promote_rate_threshold", 0.05),
            demote_idle_threshold=hsm_cfg.get("demote_idle_threshold", 300.0),
            half_life=hsm_cfg.get("half_life", 100.0),
            chunk_blocks=hsm_cfg.get("chunk_blocks", 64),
        ))
        self.hsm.attach_telemetry(self.addb)
        ha_cfg = config.get("ha", {})
        self.ha = HaMonitor(self.stack, Thresholds(
            k_events=ha_cfg.get("k_events", 3),
            window=ha_cfg.get("window", 60.0),
        ))
        for device in self.pool.all():
            device.on_fail = self._on_device_fail
        self.functions = FunctionRegistry()
        self.shipper = Shipper(self.stack, transport=self,
                               registry=self.functions,
                               coordinator=self._pick_coordinator())
        self.sim = Simulator(self.clock)
        self.streams = StreamEngine(
            self.sim, addb=self.addb,
            net_cost=lambda nbytes: self.latency + nbytes / self.bandwidth)

        self.messages: list[Message] = []
        self.bytes_sent = 0
        self.bytes_received = 0
        self.bytes_dropped = 0
        self._partitions: list[tuple[frozenset[str], float, float]] = []
        self._pending_faults = sorted(
            config.get("fault_plan", []),
            key=lambda a: a.get("t", a.get("t0", 0.0)))

    def _pick_coordinator(self) -> str:
        for node in self.nodes.values():
            if "compute" in node.roles and not node.device_ids:
                return node.node_id
        return next(iter(self.nodes))

    # -- transport (shipper and streams call into this) ------------------------

    def node_of_device(self, device_id: str) -> str:
        return self._node_of_device[device_id]

    def _partitioned(self, src: str, dst: str, now: float) -> bool:
        for group, t0, t1 in self._partitions:
            if t0 <= now < t1 and (src in group) != (dst in group):
                return True
        return False

    def rpc(self, src: str, dst: str, tag: str, nbytes: int) -> float:
        """Send one message; returns the link cost, which is also added to
        the shared virtual clock."""
        now = self.clock.now
        for end in (src, dst):
            if end in self.nodes and not self.nodes[end].up:
                raise NodeDown(end)
        if src == dst:
            self.messages.append(Message(now, src, dst, tag, nbytes))
            self.bytes_sent += nbytes + ENVELOPE_BYTES
            self.bytes_received += nbytes + ENVELOPE_BYTES
            return 0.0
        if self._partitioned(src, dst, now):
            self.bytes_dropped += nbytes + ENVELOPE_BYTES
            self.bytes_sent += nbytes + ENVELOPE_BYTES
            self.ha.ingest(dst, "timeout", now)
            raise Partitioned(f"{src} -> {dst} at t={now}")
        cost = self.latency + (nbytes + ENVELOPE_BYTES) / self.bandwidth
        self.messages.append(Message(now, src, dst, tag, nbytes))
        self.bytes_sent += nbytes + ENVELOPE_BYTES
        self.bytes_received += nbytes + ENVELOPE_BYTES
        self.clock.advance(cost)
        self.addb.emit("net", "rpc", nbytes,
                       tags={"src": src, "dst": dst, "tag": tag})
        return cost

    # -- fault injection ---------------------------------------------------------

    def _on_device_fail(self, device) -> None:
        self.ha.ingest(device.device_id, "offline", self.clock.now)

    def crash_node(self, node_id: str) -> None:
        node = self.nodes[node_id]
        node.up = False
        if node.device_ids:
            # storage node: the metadata domain restarts and replays its log
            self.stack.crash()
            self.windows.reattach()
        self.addb.emit("ha", "node_crash", 1, tags={"node": node_id})

    def restart_node(self, node_id: str) -> None:
        self.nodes[node_id].up = True
        self.addb.emit("ha", "node_restart", 1, tags={"node": node_id})

    def fail_device(self, device_id: str) -> None:
        self.pool.get(device_id).fail()
        self.ha.tick()

    def partition(self, nodes, t0: float, t1: float) -> None:
        self._partitions.append((frozenset(nodes), t0, t1))

    def apply_faults(self, now: Optional[float] = None) -> int:
        """Fire every scheduled fault whose time has arrived."""
        now = self.clock.now if now is None else now
        fired = 0
        remaining = []
        for action in self._pending_faults:
            start = action.get("t", action.get("t0", 0.0))
            if start > now:
                remaining.append(action)
                continue
            kind = action["action"]
            if kind == "crash":
                self.crash_node(action["node"])
            elif kind == "restart":
                self.restart_node(action["node"])
            elif kind == "fail_device":
                self.fail_device(action["device"])
            elif kind == "partition":
                self.partition(action["nodes"], action["t0"], action["t1"])
            fired += 1
        self._pending_faults = remaining
        return fired

    def schedule_faults(self) -> None:
        """Register the fault plan on the event scheduler (for runs driven by
        the simulator rather than a synchronous loop)."""
        for action in self._pending_faults:
            start = action.get("t", action.get("t0", 0.0))
            self.sim.call_at(start, self._fire, action)
        self._pending_faults = []

    def _fire(self, action: dict) -> None:
        kind = action["action"]
        if kind == "crash":
            self.crash_node(action["node"])
        elif kind == "restart":
            self.restart_node(action["node"])
        elif kind == "fail_device":
            self.fail_device(action["device"])
        elif kind == "partition":
            self.partition(action["nodes"], action["t0"], action["t1"])

    # -- lifecycle ---------------------------------------------------------------

    def storage_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if "storage" in n.roles]

    def close(self) -> None:
        self.stack.close()


def spawn(config: dict, workdir: str) -> Cluster:
    return Cluster(config, workdir)
