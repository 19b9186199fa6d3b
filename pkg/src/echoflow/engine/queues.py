from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, Iterable

from ..databatch import DataBatch

DEFAULT_CAPACITY = 1024


class EdgeQueue:
    """Bounded FIFO of batches with one producer and one consumer.

    ``on_put`` is called after every successful put so a parked consumer
    can wake up without polling.
    """

    def __init__(self, key: str, capacity: int = DEFAULT_CAPACITY):
        self.key = key
        self.capacity = capacity
        self._items: deque[DataBatch] = deque()
        self._cond = threading.Condition()
        self.on_put: Callable[[], None] | None = None
        self.enqueued = 0

    def __len__(self) -> int:
        return len(self._items)

    @property
    def depth(self) -> int:
        return len(self._items)

    @property
    def tuple_depth(self) -> int:
        with self._cond:
            return sum(b.count for b in self._items)

    def put(self, batch: DataBatch, timeout: float | None = None, stop: threading.Event | None = None) -> bool:
        """Enqueue, blocking while full. Returns False on timeout or stop."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while len(self._items) >= self.capacity:
                if stop is not None and stop.is_set():
                    return False
                remaining = 0.1 if deadline is None else min(0.1, deadline - time.monotonic())
                if remaining <= 0:
                    return False
                self._cond.wait(remaining)
            self._items.append(batch)
            self.enqueued += 1
            self._cond.notify_all()
        if self.on_put:
            self.on_put()
        return True

    def force(self, batches: Iterable[DataBatch]) -> int:
        """Append regardless of capacity (queued-batch transfer during migration)."""
        n = 0
        with self._cond:
            for b in batches:
                self._items.append(b)
                n += 1
            self.enqueued += n
            self._cond.notify_all()
        if n and self.on_put:
            self.on_put()
        return n

    def get_nowait(self) -> DataBatch | None:
        with self._cond:
            if not self._items:
                return None
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def wait_nonempty(self, timeout: float) -> bool:
        with self._cond:
            if self._items:
                return True
            self._cond.wait(timeout)
            return bool(self._items)

    def peek(self, n: int) -> list[DataBatch]:
        with self._cond:
            return [self._items[i] for i in range(min(n, len(self._items)))]

    def remove_ids(self, ids: Iterable[str]) -> int:
        wanted = set(ids)
        if not wanted:
            return 0
        with self._cond:
            kept = deque(b for b in self._items if b.id not in wanted)
            removed = len(self._items) - len(kept)
            self._items = kept
            self._cond.notify_all()
        return removed

    def snapshot(self) -> list[DataBatch]:
        with self._cond:
            return list(self._items)

    def drain(self) -> list[DataBatch]:
        with self._cond:
            items = list(self._items)
            self._items.clear()
            self._cond.notify_all()
        return items
