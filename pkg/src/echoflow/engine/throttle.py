"""Cooperative CPU throttle for worker sandboxes.

Processors charge synthetic work (microseconds of single-core time) to the
worker's bucket. The bucket refills at ``cpu_millis`` scaled by the profile
speed, so a throttled worker serialises work like a slower CPU would.
"""

from __future__ import annotations

import threading
import time

# profile -> speed factor relative to a reference core; None means no throttle
PROFILES: dict[str, float | None] = {
    "unthrottled": None,
    "cloud": None,
    "fog-throttled": 0.35,
    "edge-throttled": 0.1,
}


class UnknownProfile(ValueError):
    pass


class TokenBucket:
    def __init__(self, rate_per_s: float, burst_s: float = 0.25):
        if rate_per_s <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_s
        self.burst_s = burst_s
        self._busy_until = time.monotonic()
        self._lock = threading.Lock()
        self.consumed = 0.0

    def reserve(self, amount: float) -> float:
        """Account ``amount`` tokens and return how long the caller must wait."""
        with self._lock:
            now = time.monotonic()
            start = max(now - self.burst_s, self._busy_until)
            self._busy_until = start + amount / self.rate
            self.consumed += amount
            return self._busy_until - now

    def consume(self, amount: float, stop: threading.Event | None = None) -> None:
        wait = self.reserve(amount)
        if wait <= 0:
            return
        if stop is not None:
            stop.wait(wait)
        else:
            time.sleep(wait)


class Throttle:
    """Per-worker throttle; a no-op for unthrottled profiles."""

    def __init__(self, cpu_millis: int, profile: str = "unthrottled"):
        if profile not in PROFILES:
            raise UnknownProfile(f"unknown profile {profile!r}; known: {', '.join(PROFILES)}")
        self.profile = profile
        self.cpu_millis = cpu_millis
        speed = PROFILES[profile]
        self.bucket = None
        if speed is not None and cpu_millis > 0:
            # cpu_millis/1000 cores, each delivering 1e6 work-us per second at reference speed
            self.bucket = TokenBucket(cpu_millis * 1000.0 * speed)
        self.charged = 0.0

    @property
    def throttled(self) -> bool:
        return self.bucket is not None

    def charge(self, work_us: float, stop: threading.Event | None = None) -> None:
        if work_us <= 0:
            return
        self.charged += work_us
        if self.bucket is not None:
            self.bucket.consume(work_us, stop)

    def capacity_per_s(self) -> float | None:
        return self.bucket.rate if self.bucket else None
