"""Cluster configuration: JSON on disk, plain dicts in memory.

A config names the nodes (with roles and attached devices), the network
profile, the tiering and repair policies, the fault plan, and the seed.
`validate` raises BadConfig on structural problems so every consumer can
assume a well-formed dict.
"""
from __future__ import annotations

import json
from pathlib import Path

from .errors import BadConfig

ROLES = ("storage", "compute", "consumer")
FAULT_ACTIONS = ("crash", "restart", "fail_device", "partition")


def default_config(seed: int = 0) -> dict:
    """Three storage nodes carrying tiers 1-4, one spare-holding node, and a
    client node for compute/consumer ranks."""
    def storage_node(i: int) -> dict:
        return {
            "node_id": f"store{i}",
            "roles": ["storage", "compute"],
            "ranks": 4,
            "devices": [
                {"tier": 1, "blocks": 4096, "block_size": 4096},
                {"tier": 2, "blocks": 8192, "block_size": 4096},
                {"tier": 3, "blocks": 16384, "block_size": 4096},
                {"tier": 4, "blocks": 32768, "block_size": 4096},
            ],
        }

    return {
        "seed": seed,
        "network": {"latency": 1e-5, "bandwidth": 1e9},
        "nodes": [
            storage_node(0),
            storage_node(1),
            storage_node(2),
            {
                "node_id": "spare0",
                "roles": ["storage"],
                "ranks": 1,
                "devices": [
                    {"tier": t, "blocks": n, "block_size": 4096, "spare": True}
                    for t, n in ((1, 4096), (2, 8192), (3, 16384), (4, 32768))
                ],
            },
            {"node_id": "client", "roles": ["compute", "consumer"],
             "ranks": 16, "devices": []},
        ],
        "hsm": {
            "promote_rate_threshold": 0.05,
            "demote_idle_threshold": 300.0,
            "half_life": 100.0,
            "chunk_blocks": 64,
        },
        "ha": {"k_events": 3, "window": 60.0},
        "fault_plan": [],
    }


def validate(config: dict) -> dict:
    if not isinstance(config, dict):
        raise BadConfig("config must be a mapping")
    for key in ("seed", "network", "nodes"):
        if key not in config:
            raise BadConfig(f"missing config key {key!r}")
    net = config["network"]
    if not (net.get("latency", 0) > 0 and net.get("bandwidth", 0) > 0):
        raise BadConfig("network latency and bandwidth must be positive")
    if not config["nodes"]:
        raise BadConfig("at least one node required")
    seen_nodes: set[str] = set()
    seen_devices: set[str] = set()
    for node in config["nodes"]:
        node_id = node.get("node_id")
        if not node_id or node_id in seen_nodes:
            raise BadConfig(f"bad or duplicate node id {node_id!r}")
        seen_nodes.add(node_id)
        roles = node.get("roles", [])
        if not roles or any(r not in ROLES for r in roles):
            raise BadConfig(f"node {node_id}: roles must be drawn from {ROLES}")
        devices = node.get("devices", [])
        if "storage" in roles and not devices:
            raise BadConfig(f"storage node {node_id} owns no devices")
        if devices and "storage" not in roles:
            raise BadConfig(f"node {node_id} has devices but no storage role")
        for i, dev in enumerate(devices):
            dev_id = device_id(node_id, dev, i)
            if dev_id in seen_devices:
                raise BadConfig(f"duplicate device {dev_id}")
            seen_devices.add(dev_id)
            if dev.get("tier") not in (1, 2, 3, 4):
                raise BadConfig(f"device {dev_id}: tier must be 1..4")
            if dev.get("blocks", 0) <= 0:
                raise BadConfig(f"device {dev_id}: blocks must be positive")
    for action in config.get("fault_plan", []):
        kind = action.get("action")
        if kind not in FAULT_ACTIONS:
            raise BadConfig(f"unknown fault action {kind!r}")
        if kind == "partition":
            if action.get("t0") is None or action.get("t1") is None:
                raise BadConfig("partition needs t0 and t1")
            if not set(action.get("nodes", [])) <= seen_nodes:
                raise BadConfig("partition names unknown nodes")
        else:
            if action.get("t") is None:
                raise BadConfig(f"{kind} needs a time t")
            if kind == "fail_device":
                if action.get("device") not in seen_devices:
                    raise BadConfig("fail_device names an unknown device")
            elif action.get("node") not in seen_nodes:
                raise BadConfig(f"{kind} names an unknown node")
    return config


def device_id(node_id: str, dev: dict, ordinal: int) -> str:
    return dev.get("device_id") or f"{node_id}.t{dev['tier']}.{ordinal}"


def load(path) -> dict:
    with open(path) as f:
        return validate(json.load(f))


def save(config: dict, path) -> None:
    Path(path).write_text(json.dumps(config, indent=2) + "\n")
