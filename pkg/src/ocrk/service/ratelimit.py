"""Token bucket gating job deliveries."""
from __future__ import annotations

import threading
import time


class TokenBucket:
    """Capacity ``rate`` tokens, refilled continuously at ``rate`` per second."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(rate if capacity is None else capacity)
        self._clock = clock
        self._tokens = self.capacity
        self._stamp = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
        self._stamp = now

    def try_acquire(self) -> bool:
        with self._lock:
            self._refill()
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return True
            return False

    def available(self) -> float:
        with self._lock:
            self._refill()
            return self._tokens


def rate_limit(max_starts_per_second: float) -> TokenBucket:
    return TokenBucket(max_starts_per_second)
