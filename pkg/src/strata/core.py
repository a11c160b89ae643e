"""Shared model types: block geometry, extents, layouts and containers.

Everything here is immutable after construction except ``Container``
membership, which callers must serialize externally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .errors import (
    AlreadyExists,
    ExtentOutsideLayout,
    InvalidLayout,
    NotPowerOfTwo,
    UnknownContainer,
    UnknownObject,
)

# Object ids are opaque 128-bit integers. They are never reused after delete;
# the object engine keeps a tombstone set to enforce that.
ObjectId = int

DATA = "data"
PARITY = "parity"


def validate_block_size(size: int) -> None:
    """Reject block sizes that are not a positive power of two."""
    if size <= 0 or size & (size - 1):
        raise NotPowerOfTwo(f"block size {size} is not a power of two")


@dataclass(frozen=True)
class BlockSpec:
    block_size: int

    def __post_init__(self):
        validate_block_size(self.block_size)


def byte_to_block(offset: int, spec: BlockSpec) -> tuple[int, int]:
    """Translate a byte offset into (block index, intra-block offset)."""
    if offset < 0:
        raise ValueError("offset must be non-negative")
    return offset // spec.block_size, offset % spec.block_size


@dataclass(frozen=True)
class Extent:
    start_block: int
    block_count: int

    def __post_init__(self):
        if self.start_block < 0 or self.block_count <= 0:
            raise ValueError("extent needs start >= 0 and count > 0")

    @property
    def end_block(self) -> int:
        """One past the last block."""
        return self.start_block + self.block_count

    def contains(self, block: int) -> bool:
        return self.start_block <= block < self.end_block

    def overlaps(self, other: "Extent") -> bool:
        return self.start_block < other.end_block and other.start_block < self.end_block

    def blocks(self) -> Iterator[int]:
        return iter(range(self.start_block, self.end_block))


@dataclass(frozen=True)
class Striped:
    """N data units plus P parity units per stripe row.

    P is restricted to {0, 1}; parity is XOR. The parity unit of stripe
    group g rotates: it lives on device (N + g) mod (N + 1), so rebuild
    load after a failure is spread across all member devices.
    """

    data_units: int
    parity_units: int
    devices: tuple[str, ...]

    def __post_init__(self):
        if self.data_units < 1:
            raise InvalidLayout("striped layout needs data_units >= 1")
        if self.parity_units not in (0, 1):
            raise InvalidLayout("parity_units must be 0 or 1 (XOR parity only)")
        if len(self.devices) != self.data_units + self.parity_units:
            raise InvalidLayout(
                f"striped({self.data_units},{self.parity_units}) needs "
                f"{self.data_units + self.parity_units} devices, got {len(self.devices)}"
            )
        if len(set(self.devices)) != len(self.devices):
            raise InvalidLayout("duplicate device in striped layout")


@dataclass(frozen=True)
class Mirrored:
    devices: tuple[str, ...]

    def __post_init__(self):
        if len(self.devices) < 1:
            raise InvalidLayout("mirrored layout needs at least one replica")
        if len(set(self.devices)) != len(self.devices):
            raise InvalidLayout("duplicate device in mirrored layout")

    @property
    def replicas(self) -> int:
        return len(self.devices)


@dataclass(frozen=True)
class Tiered:
    """A base layout with per-extent overrides (extents must be disjoint)."""

    base: Union[Striped, Mirrored]
    parts: tuple[tuple[Extent, Union[Striped, Mirrored]], ...] = ()

    def __post_init__(self):
        parts = sorted(self.parts, key=lambda p: p[0].start_block)
        for (a, _), (b, _) in zip(parts, parts[1:]):
            if a.overlaps(b):
                raise InvalidLayout("tiered sub-layouts must cover disjoint extents")
        object.__setattr__(self, "parts", tuple(parts))

    def resolve(self, block: int) -> Union[Striped, Mirrored]:
        for extent, sub in self.parts:
            if extent.contains(block):
                return sub
        return self.base


Layout = Union[Striped, Mirrored, Tiered]


def layout_devices(layout: Layout) -> set[str]:
    if isinstance(layout, Tiered):
        out = set(layout.base.devices)
        for _, sub in layout.parts:
            out.update(sub.devices)
        return out
    return set(layout.devices)


def substitute_device(layout: Layout, old: str, new: str) -> Layout:
    """Return a copy of `layout` with device id `old` replaced by `new`."""
    if isinstance(layout, Striped):
        devs = tuple(new if d == old else d for d in layout.devices)
        return Striped(layout.data_units, layout.parity_units, devs)
    if isinstance(layout, Mirrored):
        return Mirrored(tuple(new if d == old else d for d in layout.devices))
    return Tiered(
        substitute_device(layout.base, old, new),
        tuple((e, substitute_device(s, old, new)) for e, s in layout.parts),
    )


@dataclass(frozen=True)
class Placement:
    """One unit of an object's data on one device.

    ``local_index`` is the device-local block index used by the device layer;
    ``block`` is the object-relative block (None for parity units).
    ``group`` is the stripe row for striped layouts, the block itself for
    mirrored ones.
    """

    device_id: str
    local_index: int
    role: str  # DATA or PARITY
    group: int
    block: Optional[int]


def _striped_group_devices(layout: Striped, group: int) -> tuple[list[str], Optional[str]]:
    """Device ids holding (data units in order, parity unit) of one group."""
    n, p = layout.data_units, layout.parity_units
    if p == 0:
        return list(layout.devices), None
    pidx = (n + group) % (n + 1)
    data = [layout.devices[i] for i in range(n + 1) if i != pidx]
    return data, layout.devices[pidx]


def striped_group_placements(layout: Striped, group: int) -> list[Placement]:
    """All N (+1 parity) unit placements of one stripe group."""
    data_devs, parity_dev = _striped_group_devices(layout, group)
    n = layout.data_units
    out = [
        Placement(dev, group, DATA, group, group * n + i)
        for i, dev in enumerate(data_devs)
    ]
    if parity_dev is not None:
        out.append(Placement(parity_dev, group, PARITY, group, None))
    return out


def layout_map(layout: Layout, extent: Extent) -> list[Placement]:
    """Deterministic device placement for every block of `extent`.

    For striped layouts the parity unit of each touched group is included
    once. Tiered layouts delegate per block to the covering sub-layout.
    """
    if isinstance(layout, Tiered):
        out: list[Placement] = []
        # Group consecutive blocks governed by the same sub-layout so parity
        # units are emitted once per (sub-layout, group).
        seen_parity: set[tuple[int, str]] = set()
        for b in extent.blocks():
            sub = layout.resolve(b)
            for pl in layout_map(sub, Extent(b, 1)):
                if pl.role == PARITY:
                    key = (pl.group, pl.device_id)
                    if key in seen_parity:
                        continue
                    seen_parity.add(key)
                out.append(pl)
        return out

    if isinstance(layout, Mirrored):
        return [
            Placement(dev, b, DATA, b, b)
            for b in extent.blocks()
            for dev in layout.devices
        ]

    n = layout.data_units
    out = []
    touched_groups: list[int] = []
    for b in extent.blocks():
        g, i = divmod(b, n)
        data_devs, _ = _striped_group_devices(layout, g)
        out.append(Placement(data_devs[i], g, DATA, g, b))
        if not touched_groups or touched_groups[-1] != g:
            touched_groups.append(g)
    if layout.parity_units:
        for g in touched_groups:
            _, parity_dev = _striped_group_devices(layout, g)
            out.append(Placement(parity_dev, g, PARITY, g, None))
    return out


def layout_to_dict(layout: Layout) -> dict:
    if isinstance(layout, Striped):
        return {
            "kind": "striped",
            "data_units": layout.data_units,
            "parity_units": layout.parity_units,
            "devices": list(layout.devices),
        }
    if isinstance(layout, Mirrored):
        return {"kind": "mirrored", "devices": list(layout.devices)}
    return {
        "kind": "tiered",
        "base": layout_to_dict(layout.base),
        "parts": [
            [{"start": e.start_block, "count": e.block_count}, layout_to_dict(s)]
            for e, s in layout.parts
        ],
    }


def layout_from_dict(d: dict) -> Layout:
    kind = d.get("kind")
    if kind == "striped":
        return Striped(d["data_units"], d["parity_units"], tuple(d["devices"]))
    if kind == "mirrored":
        return Mirrored(tuple(d["devices"]))
    if kind == "tiered":
        return Tiered(
            layout_from_dict(d["base"]),
            tuple(
                (Extent(e["start"], e["count"]), layout_from_dict(s))
                for e, s in d["parts"]
            ),
        )
    raise InvalidLayout(f"unknown layout kind {kind!r}")


# -- containers ---------------------------------------------------------------

@dataclass
class Container:
    container_id: str
    label: str = ""
    members: set[ObjectId] = field(default_factory=set)
    placement_hint: Optional[int] = None  # advisory tier; HSM may override


class ContainerRegistry:
    """Named groupings of objects. Membership is set-semantics only; changing
    it never moves data."""

    def __init__(self):
        self._containers: dict[str, Container] = {}

    def create(self, container_id: str, label: str = "", placement_hint: Optional[int] = None) -> Container:
        if container_id in self._containers:
            raise AlreadyExists(f"container {container_id!r} exists")
        c = Container(container_id, label, set(), placement_hint)
        self._containers[container_id] = c
        return c

    def _get(self, container_id: str) -> Container:
        try:
            return self._containers[container_id]
        except KeyError:
            raise UnknownContainer(container_id) from None

    def add_member(self, container_id: str, obj: ObjectId) -> None:
        self._get(container_id).members.add(obj)

    def remove_member(self, container_id: str, obj: ObjectId) -> None:
        c = self._get(container_id)
        if obj not in c.members:
            raise UnknownObject(f"object {obj} not in container {container_id!r}")
        c.members.remove(obj)

    def list_members(self, container_id: str) -> list[ObjectId]:
        return sorted(self._get(container_id).members)

    def exists(self, container_id: str) -> bool:
        return container_id in self._containers
