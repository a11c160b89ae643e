"""Parallel element streams from producer ranks to consumer ranks.

Each consumer owns one bounded channel; producers route to a consumer by
rank (p mod number-of-consumers over the sorted consumer list) and block
when the channel is full, so peak consumer-side buffering never exceeds the
channel capacity. Delivery is exactly-once for acknowledged sends and FIFO
per producer. Elements are handed to the attached computation in arrival
order and released immediately after it acknowledges them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    AlreadyAttached,
    InvalidDescriptor,
    SchemaMismatch,
    StreamTerminated,
)
from .sim import Get, Put, Simulator, Sleep, Task

# wire accounting: stream_id u64 + seq u64 prefix ahead of the element bytes
WIRE_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True)
class StreamDescriptor:
    stream_id: int
    producers: frozenset[int]
    consumers: frozenset[int]
    element_size: int
    capacity: int = 1024

    def validate(self) -> None:
        if not self.producers or not self.consumers:
            raise InvalidDescriptor("producer and consumer sets must be non-empty")
        if self.producers & self.consumers:
            raise InvalidDescriptor("producer and consumer sets must be disjoint")
        if self.element_size <= 0:
            raise InvalidDescriptor("element size must be positive")
        if self.capacity <= 0:
            raise InvalidDescriptor("channel capacity must be positive")


@dataclass
class DrainReport:
    total: int
    per_consumer: dict[int, int]
    crashed_producers: tuple[int, ...] = ()
    crashed_consumers: tuple[int, ...] = ()
    peak_depth: int = 0


class Computation:
    """Consumer-side per-element hook; override on_element / on_drain."""

    def on_element(self, consumer: int, producer: int, seq: int,
                   element: bytes) -> float:
        return 0.0

    def on_drain(self, consumer: int) -> None:
        pass


class WriteToObject(Computation):
    """Appends received elements to an object, flushing block-aligned chunks
    through durable writes. The final partial block is zero-padded."""

    def __init__(self, stack, obj_id: int, block_size: int = 4096):
        self.stack = stack
        self.obj_id = obj_id
        self.block_size = block_size
        self._buf = bytearray()
        self._next_block = 0
        self.bytes_received = 0

    def on_element(self, consumer, producer, seq, element) -> float:
        self._buf.extend(element)
        self.bytes_received += len(element)
        cost = 0.0
        while len(self._buf) >= self.block_size:
            chunk = bytes(self._buf[:self.block_size])
            del self._buf[:self.block_size]
            txn = self.stack.begin()
            txn.obj_write(self.obj_id, self._next_block, chunk)
            txn.commit()
            cost += txn.apply_cost
            self._next_block += 1
        return cost

    def on_drain(self, consumer) -> None:
        if self._buf:
            pad = self.block_size - len(self._buf)
            txn = self.stack.begin()
            txn.obj_write(self.obj_id, self._next_block,
                          bytes(self._buf) + b"\x00" * pad)
            txn.commit()
            self._next_block += 1
            self._buf.clear()


class Histogram(Computation):
    """Bins one little-endian f64 field of each element."""

    def __init__(self, field_offset: int, nbins: int, lo: float, hi: float):
        self.field_offset = field_offset
        self.nbins = nbins
        self.lo = lo
        self.hi = hi
        self.counts = [0] * nbins

    def on_element(self, consumer, producer, seq, element) -> float:
        (v,) = struct.unpack_from("<d", element, self.field_offset)
        if self.lo <= v < self.hi:
            width = (self.hi - self.lo) / self.nbins
            self.counts[int((v - self.lo) / width)] += 1
        return 0.0


class Plugin(Computation):
    def __init__(self, fn: Callable[[int, int, int, bytes], Optional[float]]):
        self.fn = fn

    def on_element(self, consumer, producer, seq, element) -> float:
        return self.fn(consumer, producer, seq, element) or 0.0


class _Close:
    __slots__ = ("producer",)

    def __init__(self, producer: int):
        self.producer = producer


class ProducerHandle:
    def __init__(self, stream: "Stream", rank: int):
        self.stream = stream
        self.rank = rank
        self._seq = 0
        self.acked: list[tuple[int, bytes]] = []  # (seq, element)
        self.closed = False

    def send(self, element: bytes):
        """Generator (use `yield from handle.send(e)` inside a task body);
        returns after the element is accepted by the routed channel."""
        stream = self.stream
        if stream.terminated:
            raise StreamTerminated(f"stream {stream.descriptor.stream_id}")
        if self.closed:
            raise StreamTerminated(f"producer {self.rank} already closed")
        if len(element) != stream.descriptor.element_size:
            raise SchemaMismatch(
                f"element of {len(element)} bytes on a stream with "
                f"{stream.descriptor.element_size}-byte schema")
        seq = self._seq
        self._seq += 1
        consumer = stream.route(self.rank)
        yield Put(stream.channels[consumer], (self.rank, seq, bytes(element)))
        cost = stream.net_cost(WIRE_HEADER.size + len(element))
        if cost > 0:
            yield Sleep(cost)
        self.acked.append((seq, element))
        stream._acked_count += 1

    def close(self):
        """Generator: signals end-of-stream for this producer to every
        consumer it may have routed to."""
        self.closed = True
        for consumer in sorted(self.stream._consumers_seen_by(self.rank)):
            yield Put(self.stream.channels[consumer], _Close(self.rank))


class Stream:
    def __init__(self, engine: "StreamEngine", descriptor: StreamDescriptor):
        descriptor.validate()
        self.engine = engine
        self.sim = engine.sim
        self.descriptor = descriptor
        self.net_cost = engine.net_cost
        self.consumer_order = sorted(descriptor.consumers)
        self.live_consumers = list(self.consumer_order)
        self.channels = {c: self.sim.channel(descriptor.capacity)
                         for c in self.consumer_order}
        self.handles = {p: ProducerHandle(self, p)
                        for p in descriptor.producers}
        self.computations: dict[int, Computation] = {}
        self.terminated = False
        self.delivered: list[tuple[int, int, int, bytes]] = []
        self.per_consumer: dict[int, int] = {c: 0 for c in self.consumer_order}
        self.crashed_consumers: list[int] = []
        self._consumer_tasks: dict[int, Task] = {}
        self._producer_tasks: dict[int, Task] = {}
        self._acked_count = 0
        # consumers a producer has routed elements to (close must reach all)
        self._routes_used: dict[int, set[int]] = {p: set()
                                                  for p in descriptor.producers}

    # -- routing ---------------------------------------------------------------

    def route(self, producer: int) -> int:
        consumer = self.live_consumers[producer % len(self.live_consumers)]
        self._routes_used[producer].add(consumer)
        return consumer

    def _consumers_seen_by(self, producer: int) -> set[int]:
        used = self._routes_used[producer]
        return used if used else {self.route(producer)}

    # -- lifecycle ---------------------------------------------------------------

    def attach(self, consumer: int, computation: Computation) -> None:
        if consumer not in self.descriptor.consumers:
            raise InvalidDescriptor(f"rank {consumer} is not a consumer")
        if consumer in self.computations:
            raise AlreadyAttached(f"consumer {consumer} already has a computation")
        self.computations[consumer] = computation

    def start(self) -> None:
        for c in self.consumer_order:
            self._consumer_tasks[c] = self.sim.spawn(
                self._consumer_loop(c), name=f"stream{self.descriptor.stream_id}:c{c}")

    def spawn_producer(self, rank: int, body) -> Task:
        """Run `body(handle)` (a generator function) as the producer task for
        `rank`; close is signalled automatically when the body returns."""
        handle = self.handles[rank]

        def runner():
            yield from body(handle)
            yield from handle.close()

        task = self.sim.spawn(runner(), name=f"stream{self.descriptor.stream_id}:p{rank}")
        self._producer_tasks[rank] = task
        return task

    def _consumer_loop(self, consumer: int):
        chan = self.channels[consumer]
        closed: set[int] = set()
        expected_seq: dict[int, int] = {}
        while True:
            msg = yield Get(chan)
            if isinstance(msg, _Close):
                closed.add(msg.producer)
                if closed >= self._producers_routed_to(consumer):
                    break
                continue
            producer, seq, element = msg
            prev = expected_seq.get(producer, -1)
            if seq <= prev:
                continue  # stale duplicate; never processed twice
            expected_seq[producer] = seq
            comp = self.computations.get(consumer)
            cost = comp.on_element(consumer, producer, seq, element) if comp else 0.0
            self.delivered.append((consumer, producer, seq, element))
            self.per_consumer[consumer] += 1
            if self.engine.addb is not None:
                self.engine.addb.emit("stream", "deliver", 1,
                                      tags={"stream": str(self.descriptor.stream_id),
                                            "consumer": str(consumer)})
            if cost > 0:
                yield Sleep(cost)
        comp = self.computations.get(consumer)
        if comp:
            comp.on_drain(consumer)

    def _producers_routed_to(self, consumer: int) -> set[int]:
        return {p for p in self.descriptor.producers
                if consumer in self._consumers_seen_by(p)}

    def kill_consumer(self, consumer: int) -> None:
        """Crash a consumer: its buffered in-flight elements are lost (not
        replayed) and its producers are rerouted to the survivors."""
        if consumer not in self.live_consumers or len(self.live_consumers) == 1:
            raise InvalidDescriptor(f"cannot kill consumer {consumer}")
        self.live_consumers.remove(consumer)
        self.crashed_consumers.append(consumer)
        task = self._consumer_tasks.get(consumer)
        if task:
            task.kill()
        chan = self.channels[consumer]
        chan.items.clear()
        # release producers blocked on the dead channel; their in-flight
        # element is lost with the consumer and is not replayed
        for putter, _ in list(chan._putters):
            putter._blocked_on = None
            self.sim._resume(putter, None)
        chan._putters.clear()

    def terminate(self) -> DrainReport:
        """Drain every in-flight element and return the delivery report.

        Producers that never closed (crashed mid-stream) are flagged; a
        synthetic close is injected on their behalf so consumers can finish.
        """
        crashed: list[int] = []
        for rank, handle in sorted(self.handles.items()):
            if handle.closed:
                continue
            task = self._producer_tasks.get(rank)
            if task is not None and not task.done:
                task.kill()
            if task is not None:
                crashed.append(rank)
            handle.closed = True
            for consumer in sorted(self._consumers_seen_by(rank)):
                self.sim.spawn(self._inject_close(consumer, rank),
                               name=f"close:p{rank}")
        self.sim.run()
        self.terminated = True
        peak = max(ch.peak_depth for ch in self.channels.values())
        report = DrainReport(
            total=sum(self.per_consumer.values()),
            per_consumer=dict(self.per_consumer),
            crashed_producers=tuple(crashed),
            crashed_consumers=tuple(self.crashed_consumers),
            peak_depth=peak,
        )
        if self.engine.addb is not None:
            self.engine.addb.emit("stream", "terminate", report.total,
                                  tags={"stream": str(self.descriptor.stream_id)})
        return report

    def _inject_close(self, consumer: int, producer: int):
        yield Put(self.channels[consumer], _Close(producer))


class StreamEngine:
    def __init__(self, sim: Simulator, addb=None,
                 net_cost: Callable[[int], float] = lambda nbytes: 0.0):
        self.sim = sim
        self.addb = addb
        self.net_cost = net_cost
        self._streams: dict[int, Stream] = {}

    def create(self, descriptor: StreamDescriptor) -> Stream:
        if descriptor.stream_id in self._streams:
            raise InvalidDescriptor(f"stream {descriptor.stream_id} exists")
        stream = Stream(self, descriptor)
        self._streams[descriptor.stream_id] = stream
        return stream
