"""Append-only cost accounting.

Every cost claim in this package is backed by ledger events, never by
wall-clock measurements.  NFE (number of function evaluations) is the sum
over generation events of denoising steps times the temporal length of the
latent chunk; verification events are counted but contribute no NFE.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field


@dataclass(frozen=True)
class CostEvent:
    kind: str  # "generate" | "verify"
    node_id: int
    steps: int
    temporal_length: int
    wall: float  # monotonic reference; diagnostic only, never hashed


@dataclass
class NfeLedger:
    """Thread-safe append-only record of generation/verification events."""

    events: list[CostEvent] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_generate(self, node_id: int, steps: int, temporal_length: int) -> None:
        self._append(CostEvent("generate", node_id, steps, temporal_length,
                               time.perf_counter()))

    def record_verify(self, node_id: int, temporal_length: int = 0) -> None:
        self._append(CostEvent("verify", node_id, 0, temporal_length,
                               time.perf_counter()))

    def _append(self, event: CostEvent) -> None:
        with self._lock:
            self.events.append(event)

    @property
    def generation_calls(self) -> int:
        return sum(1 for e in self.events if e.kind == "generate")

    @property
    def verify_calls(self) -> int:
        return sum(1 for e in self.events if e.kind == "verify")

    @property
    def nfe_total(self) -> int:
        return sum(
            e.steps * e.temporal_length for e in self.events if e.kind == "generate"
        )

    def totals(self) -> dict[str, int]:
        return {
            "generation_calls": self.generation_calls,
            "verify_calls": self.verify_calls,
            "nfe_total": self.nfe_total,
        }
