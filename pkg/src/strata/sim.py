"""Minimal deterministic discrete-event kernel.

Ranks are cooperatively scheduled generator tasks. A task yields effects:

    Sleep(dt)        resume after dt virtual seconds
    Put(chan, item)  enqueue (blocks while the channel is full)
    Get(chan)        dequeue (blocks while the channel is empty)
    Join(task)       resume when another task finishes

Events fire in (time, sequence) order, so identical inputs replay
identically. There is no wall-clock parallelism by design: determinism is
worth more than speed for testing.
"""
from __future__ import annotations

import heapq
from collections import deque
from typing import Any, Generator, Optional

from .clock import VirtualClock


class Sleep:
    __slots__ = ("dt",)

    def __init__(self, dt: float):
        self.dt = dt


class Put:
    __slots__ = ("channel", "item")

    def __init__(self, channel: "Channel", item: Any):
        self.channel = channel
        self.item = item


class Get:
    __slots__ = ("channel",)

    def __init__(self, channel: "Channel"):
        self.channel = channel


class Join:
    __slots__ = ("task",)

    def __init__(self, task: "Task"):
        self.task = task


class Task:
    def __init__(self, sim: "Simulator", gen: Generator, name: str = ""):
        self.sim = sim
        self.gen = gen
        self.name = name
        self.done = False
        self.alive = True
        self.value = None
        self.waiters: list["Task"] = []
        # channel currently blocked on, for clean cancellation
        self._blocked_on: Optional[Channel] = None

    def kill(self) -> None:
        """Stop the task immediately; pending blocked operations are
        abandoned (a blocked Put's item is NOT enqueued)."""
        if self.done or not self.alive:
            return
        self.alive = False
        if self._blocked_on is not None:
            self._blocked_on._cancel(self)
            self._blocked_on = None
        self.gen.close()
        self._finish(None)

    def _finish(self, value) -> None:
        self.done = True
        self.value = value
        for waiter in self.waiters:
            self.sim._resume(waiter, None)
        self.waiters.clear()


class Channel:
    """Bounded FIFO channel; full channels exert backpressure on putters."""

    def __init__(self, sim: "Simulator", capacity: int = 1024):
        self.sim = sim
        self.capacity = capacity
        self.items: deque = deque()
        self._getters: deque[Task] = deque()
        self._putters: deque[tuple[Task, Any]] = deque()
        self.peak_depth = 0

    def __len__(self) -> int:
        return len(self.items)

    def _cancel(self, task: Task) -> None:
        self._getters = deque(t for t in self._getters if t is not task)
        self._putters = deque((t, i) for t, i in self._putters if t is not task)

    def _try_put(self, task: Task, item: Any) -> bool:
        if self._getters:
            getter = self._getters.popleft()
            getter._blocked_on = None
            self.sim._resume(getter, item)
            return True
        if len(self.items) < self.capacity:
            self.items.append(item)
            self.peak_depth = max(self.peak_depth, len(self.items))
            return True
        self._putters.append((task, item))
        task._blocked_on = self
        return False

    def _try_get(self, task: Task) -> tuple[bool, Any]:
        if self.items:
            item = self.items.popleft()
            if self._putters:
                putter, pending = self._putters.popleft()
                putter._blocked_on = None
                self.items.append(pending)
                self.peak_depth = max(self.peak_depth, len(self.items))
                self.sim._resume(putter, None)
            return True, item
        if self._putters:
            # zero-capacity style direct handoff
            putter, pending = self._putters.popleft()
            putter._blocked_on = None
            self.sim._resume(putter, None)
            return True, pending
        self._getters.append(task)
        task._blocked_on = self
        return False, None


class Simulator:
    def __init__(self, clock: Optional[VirtualClock] = None):
        self.clock = clock or VirtualClock()
        self._heap: list[tuple[float, int, Task, Any]] = []
        self._seq = 0

    @property
    def now(self) -> float:
        return self.clock.now

    def channel(self, capacity: int = 1024) -> Channel:
        return Channel(self, capacity)

    def spawn(self, gen: Generator, name: str = "") -> Task:
        task = Task(self, gen, name)
        self._resume(task, None)
        return task

    def call_at(self, t: float, fn, *args) -> Task:
        """Run a plain callable at absolute virtual time t."""
        def runner():
            dt = t - self.clock.now
            if dt > 0:
                yield Sleep(dt)
            fn(*args)
        return self.spawn(runner(), name=f"at:{t}")

    def _resume(self, task: Task, value, delay: float = 0.0) -> None:
        heapq.heappush(self._heap, (self.clock.now + delay, self._seq, task, value))
        self._seq += 1

    def _step_task(self, task: Task, send_value) -> None:
        try:
            effect = task.gen.send(send_value)
        except StopIteration as stop:
            task._finish(stop.value)
            return
        self._dispatch(task, effect)

    def _dispatch(self, task: Task, effect) -> None:
        if isinstance(effect, Sleep):
            self._resume(task, None, delay=effect.dt)
        elif isinstance(effect, Put):
            if effect.channel._try_put(task, effect.item):
                self._resume(task, None)
        elif isinstance(effect, Get):
            ok, item = effect.channel._try_get(task)
            if ok:
                self._resume(task, item)
        elif isinstance(effect, Join):
            if effect.task.done:
                self._resume(task, None)
            else:
                effect.task.waiters.append(task)
        else:
            raise TypeError(f"task {task.name!r} yielded {effect!r}")

    def run(self, until: Optional[float] = None) -> None:
        """Process events until the heap drains (or `until` is reached)."""
        while self._heap:
            t, _, task, value = heapq.heappop(self._heap)
            if until is not None and t > until:
                heapq.heappush(self._heap, (t, self._seq, task, value))
                self._seq += 1
                self.clock.now = until
                return
            if t > self.clock.now:
                self.clock.now = t
            if not task.alive or task.done:
                continue
            self._step_task(task, value)
