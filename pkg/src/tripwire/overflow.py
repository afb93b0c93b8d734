"""Buffer-overflow tripwires: canary planting, shadow bitmap, epoch scan.

Every slot gets a canary-filled guard word, and allocation requests
below their slot capacity get the unrequested payload tail filled with
canaries as well. A shadow bitmap holds one bit per eight-byte heap
word for every word the detector filled completely; partially filled
words are left out of the bitmap and checked byte-wise at free time
instead, so the bitmap stays strictly word-granular.

Normal execution never checks canaries on the write path. All tracked
words are verified in one pass at epoch boundaries; the scan skips
zero bitmap bytes in bulk and compares exactly one heap word per set
bit, which is what keeps per-write overhead at zero.
"""

from __future__ import annotations

import numpy as np

from .config import EngineConfig
from .vheap import MemoryImage, WORD


def align_up(value: int, step: int = WORD) -> int:
    return (value + step - 1) & ~(step - 1)


class CanaryBitmap:
    """One bit per eight-byte heap word; set means "detector-filled canary"."""

    def __init__(self, image: MemoryImage):
        self.image = image
        self.heap_base = image.heap_base
        self.bits = bytearray(self._bits_len(image.heap_prefix))
        image.grow_hooks.append(self._on_grow)

    @staticmethod
    def _bits_len(heap_prefix: int) -> int:
        return (heap_prefix // WORD + 7) // 8

    def _on_grow(self, heap_prefix: int) -> None:
        need = self._bits_len(heap_prefix)
        if need > len(self.bits):
            self.bits.extend(bytes(need - len(self.bits)))
        elif need < len(self.bits):
            del self.bits[need:]

    def _word_index(self, addr: int) -> int:
        return (addr - self.heap_base) >> 3

    def set_word(self, addr: int) -> None:
        w = self._word_index(addr)
        self.bits[w >> 3] |= 1 << (w & 7)

    def clear_word(self, addr: int) -> None:
        w = self._word_index(addr)
        self.bits[w >> 3] &= ~(1 << (w & 7))

    def test_word(self, addr: int) -> bool:
        w = self._word_index(addr)
        return bool(self.bits[w >> 3] & (1 << (w & 7)))

    def _span(self, start_addr: int, end_addr: int, value: bool) -> None:
        w0 = self._word_index(start_addr)
        w1 = self._word_index(end_addr)
        if w1 <= w0:
            return
        head = min(w1, align_up(w0, 8))
        for w in range(w0, head):
            if value:
                self.bits[w >> 3] |= 1 << (w & 7)
            else:
                self.bits[w >> 3] &= ~(1 << (w & 7))
        if head >= w1:
            return
        mid_end = w1 & ~7
        if mid_end > head:
            fill = 0xFF if value else 0x00
            self.bits[head >> 3 : mid_end >> 3] = bytes([fill]) * ((mid_end - head) >> 3)
        for w in range(max(mid_end, head), w1):
            if value:
                self.bits[w >> 3] |= 1 << (w & 7)
            else:
                self.bits[w >> 3] &= ~(1 << (w & 7))

    def set_range(self, addr: int, nbytes: int) -> None:
        """Set bits for the word-aligned byte range [addr, addr + nbytes)."""
        self._span(addr, addr + nbytes, True)

    def clear_range(self, addr: int, nbytes: int) -> None:
        self._span(addr, addr + nbytes, False)

    def popcount(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()

    def snapshot(self) -> bytes:
        return bytes(self.bits)

    def restore(self, snap: bytes) -> None:
        self.bits = bytearray(snap)
        self._on_grow(self.image.heap_prefix)


class OverflowDetector:
    """Plants and verifies heap canaries; owns the shared shadow bitmap.

    The use-after-free quarantine writes its prefix canaries through the
    same bitmap, so the epoch scan below is the single evidence pass for
    both detectors; attribution of corrupted words happens afterwards.
    """

    def __init__(self, config: EngineConfig, image: MemoryImage):
        self.config = config
        self.image = image
        self.bitmap = CanaryBitmap(image)
        self.canary_word = config.canary_word
        # (set bits, words compared) per epoch scan, for overhead assertions
        self.scan_records: list[tuple[int, int]] = []

    # -- planting ---------------------------------------------------------

    def plant_on_alloc(self, payload: int, requested: int, capacity: int) -> None:
        """Fill the guard word and the unrequested payload tail.

        Bits are set for the guard word and for every *fully* canaried
        eight-byte word in [requested, capacity); a leading partial word
        is filled but stays untracked. Stale bits from the slot's previous
        life are cleared first.
        """
        guard = payload - 32
        self.image.write_fill(guard, WORD, self.config.canary_byte)
        self.bitmap.set_word(guard)
        self.bitmap.clear_range(payload, capacity)
        if requested < capacity:
            self.image.write_fill(payload + requested, capacity - requested, self.config.canary_byte)
            tracked_from = align_up(requested)
            if tracked_from < capacity:
                self.bitmap.set_range(payload + tracked_from, capacity - tracked_from)

    # -- checks -----------------------------------------------------------

    def _corrupted_tracked_words(self, start: int, end: int) -> list[int]:
        """Words in [start, end) that are tracked but no longer canaries."""
        out = []
        addr = start
        while addr < end:
            if self.bitmap.test_word(addr) and self.image.read(addr, WORD) != self.canary_word:
                out.append(addr)
            addr += WORD
        return out

    def check_on_free(self, payload: int, requested: int, capacity: int) -> list[int]:
        """Free-time verification for objects with interior canaries.

        Exact power-of-two requests (requested == capacity) carry no
        interior evidence and are deferred to the epoch scan. For the
        rest, both the interior range and the guard word are verified.
        Returns corrupted word addresses; the caller decides what to do.
        """
        if requested >= capacity:
            return []
        corrupted = set()
        guard = payload - 32
        if self.bitmap.test_word(guard) and self.image.read(guard, WORD) != self.canary_word:
            corrupted.add(guard)
        tracked_from = align_up(requested)
        corrupted.update(self._corrupted_tracked_words(payload + tracked_from, payload + capacity))
        partial = min(tracked_from, capacity) - requested
        if partial:
            expect = bytes([self.config.canary_byte]) * partial
            if self.image.read(payload + requested, partial) != expect:
                corrupted.add(payload + (requested & ~7))
        return sorted(corrupted)

    def epoch_scan(self) -> list[int]:
        """Compare every tracked word against the canary word.

        Zero bitmap bytes are skipped in bulk (vectorized nonzero over
        the bitmap); each set bit costs exactly one word comparison.
        Returns corrupted word addresses in ascending order.
        """
        bits = self.bitmap.bits
        corrupted: list[int] = []
        set_bits = 0
        comparisons = 0
        if bits:
            arr = np.frombuffer(bits, dtype=np.uint8)
            heap = self.image.heap
            canary = self.canary_word
            base = self.image.heap_base
            for byte_idx in np.flatnonzero(arr).tolist():
                pending = bits[byte_idx]
                word_base = byte_idx << 3
                while pending:
                    low = pending & (-pending)
                    pending ^= low
                    w = word_base + low.bit_length() - 1
                    set_bits += 1
                    comparisons += 1
                    off = w << 3
                    if heap[off : off + 8] != canary:
                        corrupted.append(base + off)
        self.scan_records.append((set_bits, comparisons))
        return corrupted

    def retire_words(self, words) -> None:
        """Stop tracking reported words that still hold corrupted bytes.

        Keeps one error from being re-reported at every later boundary;
        words the detector has since legitimately refilled stay tracked.
        """
        for addr in words:
            if self.image.read(addr, WORD) != self.canary_word:
                self.bitmap.clear_word(addr)
