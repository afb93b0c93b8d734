"""FIFO quarantine for freed objects (use-after-free tripwires).

Freed slots are withheld from reuse in a FIFO queue and the leading
prefix of each payload (128 bytes by default) is filled with canaries
and tracked in the shared bitmap. Slots leave the queue oldest-first
whenever the queue exceeds its object-count or capacity-sum threshold;
each evicted slot is verified before the allocator may reuse it. A
slot evicted with corrupted canaries is withheld from reuse entirely.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .config import EngineConfig
from .overflow import OverflowDetector, align_up
from .vheap import Allocator, MemoryImage, WORD


@dataclass(frozen=True)
class QuarantineEntry:
    payload: int
    capacity: int
    requested: int
    free_stack: tuple[str, ...]
    free_event: int
    free_epoch: int


@dataclass(frozen=True)
class UafItem:
    """A corrupted quarantined word plus the entry it was found in."""

    word: int
    entry: QuarantineEntry


class QuarantineQueue:
    def __init__(
        self,
        config: EngineConfig,
        image: MemoryImage,
        allocator: Allocator,
        detector: OverflowDetector,
        fill_enabled: bool = True,
    ):
        self.config = config
        self.image = image
        self.allocator = allocator
        self.detector = detector
        # off when the queue only delays reuse for dangling detection
        self.fill_enabled = fill_enabled
        self.entries: deque[QuarantineEntry] = deque()
        self.by_payload: dict[int, QuarantineEntry] = {}
        self.total_bytes = 0

    def __len__(self) -> int:
        return len(self.entries)

    def entry_for(self, payload: int) -> QuarantineEntry | None:
        return self.by_payload.get(payload)

    def prefix_len(self, entry: QuarantineEntry) -> int:
        return min(self.config.uaf_fill_prefix, entry.capacity)

    # -- free path --------------------------------------------------------

    def on_free(self, entry: QuarantineEntry) -> list[UafItem]:
        """Quarantine a freed slot; returns evidence from any evictions.

        The caller has already cleared the allocated bit and run the
        overflow free-time check. The canaried prefix is filled here and
        its fully covered words are tracked in the shared bitmap.
        """
        if self.fill_enabled:
            fill = self.prefix_len(entry)
            self.image.write_fill(entry.payload, fill, self.config.canary_byte)
            tracked = fill & ~(WORD - 1)
            if tracked:
                self.detector.bitmap.set_range(entry.payload, tracked)
        self.entries.append(entry)
        self.by_payload[entry.payload] = entry
        self.total_bytes += entry.capacity
        return self._maintain()

    def _maintain(self) -> list[UafItem]:
        """Evict oldest entries until both thresholds hold again."""
        evidence: list[UafItem] = []
        while (
            len(self.entries) > self.config.quarantine_max_count
            or self.total_bytes > self.config.quarantine_max_bytes
        ):
            entry = self.entries.popleft()
            del self.by_payload[entry.payload]
            self.total_bytes -= entry.capacity
            evidence.extend(self.verify_and_release(entry))
        return evidence

    def verify_and_release(self, entry: QuarantineEntry) -> list[UafItem]:
        """Check the canaried prefix of an evicted entry.

        Clean entries go back to the allocator free list with their
        prefix bits cleared. Corrupted entries are reported and withheld
        from reuse (their slot stays out of circulation).
        """
        if not self.fill_enabled:
            self.allocator.release_slot(entry.payload)
            return []
        corrupted: set[int] = set()
        fill = self.prefix_len(entry)
        tracked = fill & ~(WORD - 1)
        canary = self.config.canary_word
        for addr in range(entry.payload, entry.payload + tracked, WORD):
            if self.detector.bitmap.test_word(addr) and self.image.read(addr, WORD) != canary:
                corrupted.add(addr)
        partial = fill - tracked
        if partial:
            expect = bytes([self.config.canary_byte]) * partial
            if self.image.read(entry.payload + tracked, partial) != expect:
                corrupted.add(entry.payload + tracked)
        if corrupted:
            return [UafItem(word, entry) for word in sorted(corrupted)]
        self.detector.bitmap.clear_range(entry.payload, tracked)
        self.allocator.release_slot(entry.payload)
        return []

    # -- epoch-boundary attribution ----------------------------------------

    def split_scan_words(self, words: list[int]) -> tuple[list[UafItem], list[int]]:
        """Partition corrupted scan words into quarantine hits and the rest.

        A word is use-after-free evidence iff it falls inside the
        canaried prefix of some entry still in the queue.
        """
        uaf: list[UafItem] = []
        rest: list[int] = []
        for word in words:
            owner = None
            for entry in self.entries:
                if entry.payload <= word < entry.payload + self.prefix_len(entry):
                    owner = entry
                    break
            if owner is None:
                rest.append(word)
            else:
                uaf.append(UafItem(word, owner))
        return uaf, rest

    # -- snapshot -----------------------------------------------------------

    def snapshot(self):
        return tuple(self.entries), self.total_bytes

    def restore(self, snap) -> None:
        entries, total = snap
        self.entries = deque(entries)
        self.by_payload = {e.payload: e for e in entries}
        self.total_bytes = total
