"""Time sources. Everything that reads the clock goes through one of these,
so tests can drive components on simulated time."""

from __future__ import annotations

import time


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class SimulatedClock:
    """Manually advanced clock for deterministic runs."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot run backwards")
        self._now += int(delta_ms)
        return self._now

    def set(self, now_ms: int) -> int:
        if now_ms < self._now:
            raise ValueError("clock cannot run backwards")
        self._now = int(now_ms)
        return self._now
