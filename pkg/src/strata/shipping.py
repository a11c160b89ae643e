"""Function shipping: run registered computations on the nodes that hold an
object's data units and combine the partial results at the caller.

Only function descriptors and partial results cross the network; raw data
blocks never leave their node on the healthy path. Combiners must be
associative and commutative (property-checked with random triples at
registration), so partials merge in any order.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .core import DATA, Extent, Mirrored, Tiered, layout_map
from .errors import (
    CombinerNotAssociative,
    AlreadyExists,
    DeviceFailed,
    ResultTooLarge,
    UnknownFunction,
    UnknownTarget,
)
from .stack import Stack
from .wal import FNV_OFFSET_BASIS, fnv1a64

MAX_PARTIAL_BYTES = 64 * 1024
_MASK64 = (1 << 64) - 1
ENVELOPE_BYTES = 64  # per-message accounting overhead, mirrors the harness


class Transport(Protocol):
    def node_of_device(self, device_id: str) -> str: ...
    def rpc(self, src: str, dst: str, tag: str, nbytes: int) -> float: ...


class LocalTransport:
    """Single-node fallback: everything is local, zero link cost."""

    def __init__(self, node: str = "local"):
        self.node = node
        self.messages: list[tuple[str, str, str, int]] = []

    def node_of_device(self, device_id: str) -> str:
        return self.node

    def rpc(self, src: str, dst: str, tag: str, nbytes: int) -> float:
        self.messages.append((src, dst, tag, nbytes))
        return 0.0


@dataclass
class FunctionDescriptor:
    name: str
    map_unit: Callable[[bytes, bytes], bytes]      # (unit bytes, params) -> partial
    combine: Callable[[bytes, bytes, bytes], bytes]  # (a, b, params) -> merged
    # generates representative partials for the registration property check
    gen_partial: Callable[[random.Random, bytes], bytes] = \
        lambda rng, params: rng.getrandbits(64).to_bytes(8, "little")
    # aggregate of an empty target
    identity: Callable[[bytes], bytes] = lambda params: b""


@dataclass
class ComputationResult:
    function: str
    partials: dict[str, bytes]  # node -> partial
    aggregate: bytes
    shipped_bytes: int
    fetch_equivalent_bytes: int


def _u64(b: bytes) -> int:
    return struct.unpack("<Q", b)[0]


def _p64(v: int) -> bytes:
    return struct.pack("<Q", v & _MASK64)


# -- builtins -------------------------------------------------------------------

def _sum_map(data: bytes, params: bytes) -> bytes:
    total = 0
    for (v,) in struct.iter_unpack("<q", data[:len(data) - len(data) % 8]):
        total += v
    return _p64(total)


def _add_combine(a: bytes, b: bytes, params: bytes) -> bytes:
    return _p64(_u64(a) + _u64(b))


def _checksum_map(data: bytes, params: bytes) -> bytes:
    # Blockwise FNV-1a folded by modular addition, seeded with the FNV
    # offset basis so the empty aggregate equals the basis. Addition makes
    # the fold order-independent across nodes.
    return _p64(FNV_OFFSET_BASIS + fnv1a64(data))


def _checksum_combine(a: bytes, b: bytes, params: bytes) -> bytes:
    return _p64(_u64(a) + _u64(b) - FNV_OFFSET_BASIS)


def _count_match_map(data: bytes, params: bytes) -> bytes:
    # Non-overlapping matches within each storage unit; patterns never span
    # unit boundaries by definition.
    return _p64(data.count(params) if params else 0)


_HIST_HDR = struct.Struct("<Idd")


def histogram_params(nbins: int, lo: float, hi: float) -> bytes:
    return _HIST_HDR.pack(nbins, lo, hi)


def _histogram_map(data: bytes, params: bytes) -> bytes:
    nbins, lo, hi = _HIST_HDR.unpack(params)
    counts = [0] * nbins
    width = (hi - lo) / nbins
    for (v,) in struct.iter_unpack("<d", data[:len(data) - len(data) % 8]):
        if lo <= v < hi:
            counts[int((v - lo) / width)] += 1
    return struct.pack(f"<{nbins}Q", *counts)


def _histogram_combine(a: bytes, b: bytes, params: bytes) -> bytes:
    if not a:
        return b
    if not b:
        return a
    n = len(a) // 8
    av = struct.unpack(f"<{n}Q", a)
    bv = struct.unpack(f"<{n}Q", b)
    return struct.pack(f"<{n}Q", *[(x + y) & _MASK64 for x, y in zip(av, bv)])


def _gen_hist_partial(rng: random.Random, params: bytes) -> bytes:
    nbins = _HIST_HDR.unpack(params)[0] if params else 4
    return struct.pack(f"<{nbins}Q", *[rng.randrange(1000) for _ in range(nbins)])


class FunctionRegistry:
    def __init__(self, check_seed: int = 0x5eed):
        self._functions: dict[str, FunctionDescriptor] = {}
        self._check_seed = check_seed
        for fd in (
            FunctionDescriptor("SUM_I64", _sum_map, _add_combine,
                               identity=lambda p: _p64(0)),
            FunctionDescriptor("CHECKSUM64", _checksum_map, _checksum_combine,
                               lambda rng, p: _p64(FNV_OFFSET_BASIS + rng.getrandbits(63)),
                               identity=lambda p: _p64(FNV_OFFSET_BASIS)),
            FunctionDescriptor("COUNT_MATCH", _count_match_map, _add_combine,
                               identity=lambda p: _p64(0)),
            FunctionDescriptor("HISTOGRAM", _histogram_map, _histogram_combine,
                               _gen_hist_partial),
        ):
            self._functions[fd.name] = fd

    def get(self, name: str) -> FunctionDescriptor:
        try:
            return self._functions[name]
        except KeyError:
            raise UnknownFunction(name) from None

    def register(self, fd: FunctionDescriptor, params: bytes = b"",
                 trials: int = 100) -> str:
        """Register a plugin after property-checking its combiner laws."""
        if fd.name in self._functions:
            raise AlreadyExists(f"function {fd.name!r} already registered")
        rng = random.Random(self._check_seed)
        for _ in range(trials):
            a, b, c = (fd.gen_partial(rng, params) for _ in range(3))
            if fd.combine(a, b, params) != fd.combine(b, a, params):
                raise CombinerNotAssociative(f"{fd.name}: combiner is not commutative")
            left = fd.combine(fd.combine(a, b, params), c, params)
            right = fd.combine(a, fd.combine(b, c, params), params)
            if left != right:
                raise CombinerNotAssociative(f"{fd.name}: combiner is not associative")
        self._functions[fd.name] = fd
        return fd.name


class Shipper:
    def __init__(self, stack: Stack, transport: Optional[Transport] = None,
                 registry: Optional[FunctionRegistry] = None,
                 coordinator: str = "client"):
        self.stack = stack
        self.transport = transport or LocalTransport()
        self.registry = registry or FunctionRegistry()
        self.coordinator = coordinator

    # -- local execution on one node -------------------------------------------

    def _local_units(self, obj: int) -> dict[str, list]:
        """Data-unit placements grouped by owning node, parity excluded,
        mirrored replicas counted once (first replica only)."""
        meta = self.stack.objects.meta(obj)
        if meta.size_blocks == 0:
            return {}
        by_node: dict[str, list] = {}
        seen_blocks: set[int] = set()
        for pl in layout_map(meta.layout, Extent(0, meta.size_blocks)):
            if pl.role != DATA or pl.block in seen_blocks:
                continue
            seen_blocks.add(pl.block)
            node = self.transport.node_of_device(pl.device_id)
            by_node.setdefault(node, []).append(pl)
        return by_node

    def _compute_partial(self, obj: int, placements, fd: FunctionDescriptor,
                         params: bytes) -> tuple[bytes, float]:
        meta = self.stack.objects.meta(obj)
        partial = b""
        cost = 0.0
        have = False
        for pl in sorted(placements, key=lambda p: p.block):
            sub = meta.layout.resolve(pl.block) if isinstance(meta.layout, Tiered) else meta.layout
            try:
                data, c = self.stack.objects._read_unit(meta, pl)
            except DeviceFailed:
                # resilience path: reconstruct via surviving group members
                data, c = self.stack.objects.read_unit_degraded(meta, sub, pl)
            cost += c
            mapped = fd.map_unit(data, params)
            partial = fd.combine(partial, mapped, params) if have else mapped
            have = True
        if len(partial) > MAX_PARTIAL_BYTES:
            raise ResultTooLarge(
                f"partial of {len(partial)} bytes exceeds {MAX_PARTIAL_BYTES}; "
                "write large results to an object instead")
        return partial, cost

    # -- shipping ------------------------------------------------------------------

    def ship(self, function: str, target, params: bytes = b"") -> ComputationResult:
        """Run `function` near the data of an object id or container name."""
        fd = self.registry.get(function)
        if isinstance(target, str):
            if not self.stack.containers.exists(target):
                raise UnknownTarget(target)
            objects = self.stack.containers.list_members(target)
        else:
            if not self.stack.objects.exists(target):
                raise UnknownTarget(str(target))
            objects = [target]

        partials_by_node: dict[str, bytes] = {}
        shipped = 0
        fetch_equivalent = 0
        cost = 0.0
        for obj in objects:
            meta = self.stack.objects.meta(obj)
            fetch_equivalent += meta.size_blocks * meta.spec.block_size
            for node, placements in sorted(self._local_units(obj).items()):
                exec_nbytes = len(function) + len(params) + 32
                cost += self.transport.rpc(self.coordinator, node, "SHIP_EXEC", exec_nbytes)
                partial, c = self._compute_partial(obj, placements, fd, params)
                cost += c
                cost += self.transport.rpc(node, self.coordinator, "SHIP_RESULT", len(partial))
                shipped += 2 * ENVELOPE_BYTES + exec_nbytes + len(partial)
                if node in partials_by_node:
                    partials_by_node[node] = fd.combine(partials_by_node[node], partial, params)
                else:
                    partials_by_node[node] = partial

        aggregate = fd.identity(params)
        have = False
        for node in sorted(partials_by_node):
            aggregate = (fd.combine(aggregate, partials_by_node[node], params)
                         if have else partials_by_node[node])
            have = True
        if self.stack.addb is not None:
            self.stack.addb.emit("ship", "exec", len(partials_by_node),
                                 tags={"function": function})
        return ComputationResult(function, partials_by_node, aggregate,
                                 shipped, fetch_equivalent)


def result_bytes_accounting(result: ComputationResult) -> tuple[int, int]:
    return result.shipped_bytes, result.fetch_equivalent_bytes
