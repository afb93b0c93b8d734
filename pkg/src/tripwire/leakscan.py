"""Conservative reachability-based leak detection at epoch boundaries.

Marking is a breadth-first scan seeded from register values and every
eight-byte-aligned globals word: any value that resolves to a carved
slot (interior addresses included) is treated as a reference. Marked
live objects contribute every eight-byte-aligned word of their full
payload capacity to the work queue. Freed objects are never scanned,
but a freed object still sitting in quarantine gets its marked bit set
when reached so the optional reachable-freed ("potential dangling
pointer") report can pick it up. The sweep then reports every
allocated-but-unmarked slot and clears all marked bits.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NotAHeapObject
from .quarantine import QuarantineEntry, QuarantineQueue
from .vheap import Allocator, MemoryImage


@dataclass
class LeakEvidence:
    leaked: list[tuple[int, int]] = field(default_factory=list)  # (payload, requested)
    reachable_freed: list[QuarantineEntry] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.leaked or self.reachable_freed)


class LeakScanner:
    def __init__(self, image: MemoryImage, allocator: Allocator, quarantine: QuarantineQueue | None):
        self.image = image
        self.allocator = allocator
        self.quarantine = quarantine
        self.heap_base = image.heap_base
        self.heap_end = image.heap_base + image.heap_size

    def _roots(self, registers: dict[str, int]) -> list[int]:
        roots = [v for v in registers.values() if self.heap_base <= v < self.heap_end]
        words = np.frombuffer(self.image.globals, dtype="<u8")
        hits = words[(words >= self.heap_base) & (words < self.heap_end)]
        roots.extend(int(v) for v in hits)
        return roots

    def mark(self, registers: dict[str, int]) -> None:
        """BFS from the conservative root set, setting marked bits.

        Expects all marked bits clear (sweep leaves them that way).
        """
        pending = deque(self._roots(registers))
        while pending:
            value = pending.popleft()
            try:
                view = self.allocator.object_bounds(value)
            except NotAHeapObject:
                continue
            if view.marked:
                continue
            if not view.allocated:
                if self.quarantine is not None and self.quarantine.entry_for(view.payload):
                    self.allocator.set_marked(view.payload, True)
                continue
            self.allocator.set_marked(view.payload, True)
            payload_bytes = self.image.read(view.payload, view.capacity)
            for word in struct.unpack_from(f"<{view.capacity // 8}Q", payload_bytes):
                if self.heap_base <= word < self.heap_end:
                    pending.append(word)

    def sweep(self, dangling: bool, suppress: set[int] = frozenset()) -> LeakEvidence:
        """Collect allocated-but-unmarked slots, then clear all marks.

        suppress holds payload addresses already reported in an earlier
        epoch (and not since reallocated); they stay leaked but are not
        reported again.
        """
        evidence = LeakEvidence()
        for view in self.allocator.carved_slots():
            if view.allocated and not view.marked and view.payload not in suppress:
                evidence.leaked.append((view.payload, view.requested))
            if (
                dangling
                and not view.allocated
                and view.marked
                and self.quarantine is not None
                and view.payload not in suppress
            ):
                entry = self.quarantine.entry_for(view.payload)
                if entry is not None:
                    evidence.reachable_freed.append(entry)
            if view.marked:
                self.allocator.set_marked(view.payload, False)
        evidence.leaked.sort()
        evidence.reachable_freed.sort(key=lambda e: e.payload)
        return evidence


def record_leak_sites(leaked_payloads, site_log) -> dict[int, tuple[tuple[str, ...], int] | None]:
    """Map each leaked payload to its last in-epoch allocation site.

    Addresses with no malloc during the replayed epoch map to None,
    meaning the object was allocated in a prior epoch and its site is
    unknown.
    """
    return {addr: site_log.alloc_sites.get(addr) for addr in leaked_payloads}
