"""Stage counters used to verify that prompt queries never re-enter build stages."""

from __future__ import annotations

import threading

STAGES = ("render", "track", "validate", "embed", "fuse", "query")


class StageCounters:
    """Thread-safe per-stage call counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = {stage: 0 for stage in STAGES}

    def increment(self, stage: str) -> None:
        with self._lock:
            self._counts[stage] += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            for stage in self._counts:
                self._counts[stage] = 0


counters = StageCounters()
