"""Deterministic BiBOP-style virtual heap.

The modeled address space has two writable regions: a globals array of
eight-byte words and one large pre-reserved heap region. The allocator
carves the heap region into per-size-class chunks and bump-allocates
fixed-stride slots inside them, so the address returned for the N-th
allocation is a pure function of the preceding allocate/release
history. Each slot is laid out as:

    [guard word: 8 bytes][header: 24 bytes][payload: capacity]

with capacity the next power of two >= max(request, min class). The
header lives in modeled memory (requested size and allocated/marked
flag bits), so byte-exact snapshots of the memory image capture it for
free. Engine bookkeeping (chunk table, free lists, cursors) lives in
ordinary Python objects and never occupies modeled heap addresses.

The heap image is materialized lazily in chunk-sized steps: untouched
tail space reads as zeros, and only the materialized prefix is copied
by snapshots, keeping large default geometry cheap at small scale.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import EngineConfig
from .errors import (
    NotAHeapObject,
    NotQuarantined,
    OutOfVirtualHeap,
    OversizeRequest,
    SegfaultModel,
)

GUARD_BYTES = 8
HEADER_BYTES = 24
SLOT_OVERHEAD = GUARD_BYTES + HEADER_BYTES
WORD = 8

_FLAG_ALLOCATED = 1
_FLAG_MARKED = 2

U64_MASK = (1 << 64) - 1


def next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length() if n > 1 else 1


class MemoryImage:
    """The modeled program's writable memory: heap region plus globals.

    All access is bounds-checked against the two mapped ranges; anything
    else raises SegfaultModel. Trace-driven writes pass internal=False so
    an observer installed by the engine (the replay watchpoint check) can
    see them; detector and header writes are internal and invisible to it.
    """

    def __init__(self, config: EngineConfig):
        self.heap_base = config.heap_base
        self.heap_size = config.heap_size
        self.chunk_size = config.chunk_size
        self.globals_base = config.globals_base
        self.globals_size = 8 * config.globals_words
        self.heap = bytearray()
        self.globals = bytearray(self.globals_size)
        self.write_observer = None
        self.grow_hooks: list = []

    @property
    def heap_prefix(self) -> int:
        return len(self.heap)

    def ensure_heap(self, nbytes: int) -> None:
        """Materialize the heap prefix up to nbytes, in chunk steps."""
        if nbytes <= len(self.heap):
            return
        target = -(-nbytes // self.chunk_size) * self.chunk_size
        self.heap.extend(bytes(target - len(self.heap)))
        for hook in self.grow_hooks:
            hook(target)

    def _locate(self, addr: int, length: int) -> tuple[bytearray | None, int]:
        if length < 0:
            raise SegfaultModel(addr, length)
        if self.heap_base <= addr and addr + length <= self.heap_base + self.heap_size:
            return self.heap, addr - self.heap_base
        if self.globals_base <= addr and addr + length <= self.globals_base + self.globals_size:
            return self.globals, addr - self.globals_base
        raise SegfaultModel(addr, length)

    def read(self, addr: int, length: int) -> bytes:
        buf, off = self._locate(addr, length)
        if buf is self.heap and off + length > len(buf):
            avail = max(0, len(buf) - off)
            return bytes(buf[off : off + avail]) + bytes(length - avail)
        return bytes(buf[off : off + length])

    def write_fill(self, addr: int, length: int, fill: int, internal: bool = True) -> None:
        buf, off = self._locate(addr, length)
        if not internal and self.write_observer is not None:
            self.write_observer(addr, length)
        if buf is self.heap:
            self.ensure_heap(off + length)
        buf[off : off + length] = bytes([fill]) * length

    def write_bytes(self, addr: int, data: bytes) -> None:
        buf, off = self._locate(addr, len(data))
        if buf is self.heap:
            self.ensure_heap(off + len(data))
        buf[off : off + len(data)] = data

    def read_word(self, addr: int) -> int:
        return int.from_bytes(self.read(addr, 8), "little")

    def write_word(self, addr: int, value: int, internal: bool = True) -> None:
        buf, off = self._locate(addr, 8)
        if not internal and self.write_observer is not None:
            self.write_observer(addr, 8)
        if buf is self.heap:
            self.ensure_heap(off + 8)
        buf[off : off + 8] = (value & U64_MASK).to_bytes(8, "little")

    def snapshot(self) -> tuple[bytes, bytes]:
        return bytes(self.heap), bytes(self.globals)

    def restore(self, snap: tuple[bytes, bytes]) -> None:
        heap, globs = snap
        self.heap = bytearray(heap)
        self.globals = bytearray(globs)
        for hook in self.grow_hooks:
            hook(len(self.heap))


@dataclass
class ObjectView:
    """Resolved slot: payload bounds plus the header fields."""

    slot: int
    payload: int
    capacity: int
    requested: int
    allocated: bool
    marked: bool
    class_shift: int

    @property
    def guard(self) -> int:
        return self.slot

    @property
    def header(self) -> int:
        return self.slot + GUARD_BYTES


@dataclass
class _Chunk:
    base: int
    class_shift: int
    stride: int
    carved: int = 0


class _ClassState:
    __slots__ = ("shift", "capacity", "stride", "bump", "limit", "free_list")

    def __init__(self, shift: int):
        self.shift = shift
        self.capacity = 1 << shift
        self.stride = SLOT_OVERHEAD + self.capacity
        self.bump = 0  # next fresh slot address; 0 = no chunk yet
        self.limit = 0
        self.free_list: list[int] = []  # payload addrs, LIFO


class Allocator:
    """Power-of-two size classes over chunked regions of the heap."""

    def __init__(self, config: EngineConfig, image: MemoryImage):
        self.config = config
        self.image = image
        self.min_shift = config.min_class.bit_length() - 1
        self.max_shift = config.max_class.bit_length() - 1
        self.chunks: list[_Chunk] = []
        self.classes: dict[int, _ClassState] = {}
        self._free_set: set[int] = set()
        self._max_chunks = config.heap_size // config.chunk_size

    # -- header codec ---------------------------------------------------

    def _header_base(self, payload: int) -> int:
        return payload - HEADER_BYTES

    def read_header(self, payload: int) -> tuple[int, int]:
        base = self._header_base(payload)
        raw = self.image.read(base, 16)
        requested = int.from_bytes(raw[0:8], "little")
        flags = int.from_bytes(raw[8:16], "little")
        return requested, flags

    def write_header(self, payload: int, requested: int, flags: int) -> None:
        base = self._header_base(payload)
        self.image.write_bytes(
            base, requested.to_bytes(8, "little") + flags.to_bytes(8, "little")
        )

    def set_allocated(self, payload: int, value: bool) -> None:
        requested, flags = self.read_header(payload)
        flags = (flags | _FLAG_ALLOCATED) if value else (flags & ~_FLAG_ALLOCATED)
        self.write_header(payload, requested, flags)

    def set_marked(self, payload: int, value: bool) -> None:
        requested, flags = self.read_header(payload)
        flags = (flags | _FLAG_MARKED) if value else (flags & ~_FLAG_MARKED)
        self.write_header(payload, requested, flags)

    # -- allocation -----------------------------------------------------

    def class_for(self, size: int) -> _ClassState:
        if size < 1:
            raise OversizeRequest(f"allocation size must be positive, got {size}")
        capacity = next_pow2(max(size, self.config.min_class))
        if capacity > self.config.max_class:
            raise OversizeRequest(f"{size} bytes exceeds the largest class ({self.config.max_class})")
        shift = capacity.bit_length() - 1
        state = self.classes.get(shift)
        if state is None:
            state = self.classes[shift] = _ClassState(shift)
        return state

    def allocate(self, size: int) -> int:
        """Carve or reuse a slot; returns the payload address.

        The header is initialized (requested size, allocated bit set,
        marked bit clear). Canary planting is the overflow detector's
        job and happens separately.
        """
        state = self.class_for(size)
        if state.free_list:
            payload = state.free_list.pop()
            self._free_set.discard(payload)
        else:
            if state.bump + state.stride > state.limit:
                self._acquire_chunk(state)
            slot = state.bump
            state.bump += state.stride
            chunk = self.chunks[(slot - self.config.heap_base) // self.config.chunk_size]
            chunk.carved += 1
            payload = slot + SLOT_OVERHEAD
        self.write_header(payload, size, _FLAG_ALLOCATED)
        return payload

    def _acquire_chunk(self, state: _ClassState) -> None:
        if len(self.chunks) >= self._max_chunks:
            raise OutOfVirtualHeap(
                f"heap region exhausted after {len(self.chunks)} chunks"
            )
        base = self.config.heap_base + len(self.chunks) * self.config.chunk_size
        self.chunks.append(_Chunk(base, state.shift, state.stride))
        state.bump = base
        state.limit = base + self.config.chunk_size
        self.image.ensure_heap(state.limit - self.config.heap_base)

    def release_slot(self, payload: int) -> None:
        """Return a quarantine-evicted slot to its class free list (LIFO)."""
        try:
            view = self.object_bounds(payload)
        except NotAHeapObject:
            raise NotQuarantined(f"0x{payload:x} was never carved from the heap")
        if view.payload != payload:
            raise NotQuarantined(f"0x{payload:x} is not a payload start")
        if view.allocated:
            raise NotQuarantined(f"0x{payload:x} is still allocated")
        if payload in self._free_set:
            raise NotQuarantined(f"0x{payload:x} is already on a free list")
        self.classes[view.class_shift].free_list.append(payload)
        self._free_set.add(payload)

    def is_free_listed(self, payload: int) -> bool:
        return payload in self._free_set

    # -- lookup ----------------------------------------------------------

    def object_bounds(self, addr: int) -> ObjectView:
        """Resolve any address inside a carved slot (interior included)."""
        base = self.config.heap_base
        if not base <= addr < base + self.config.heap_size:
            raise NotAHeapObject(f"0x{addr:x} outside the heap region")
        chunk_idx = (addr - base) // self.config.chunk_size
        if chunk_idx >= len(self.chunks):
            raise NotAHeapObject(f"0x{addr:x} in an unassigned chunk")
        chunk = self.chunks[chunk_idx]
        offset = addr - chunk.base
        slot_idx = offset // chunk.stride
        if slot_idx >= chunk.carved:
            raise NotAHeapObject(f"0x{addr:x} past the carve cursor")
        slot = chunk.base + slot_idx * chunk.stride
        payload = slot + SLOT_OVERHEAD
        capacity = chunk.stride - SLOT_OVERHEAD
        requested, flags = self.read_header(payload)
        return ObjectView(
            slot=slot,
            payload=payload,
            capacity=capacity,
            requested=min(requested, capacity),
            allocated=bool(flags & _FLAG_ALLOCATED),
            marked=bool(flags & _FLAG_MARKED),
            class_shift=chunk.class_shift,
        )

    def carved_slots(self):
        """Yield an ObjectView for every slot ever carved, in address order
        within each chunk and chunk-acquisition order overall."""
        for chunk in self.chunks:
            for i in range(chunk.carved):
                payload = chunk.base + i * chunk.stride + SLOT_OVERHEAD
                yield self.object_bounds(payload)

    def carved_heap_end(self) -> int:
        return self.config.heap_base + len(self.chunks) * self.config.chunk_size

    # -- snapshot ---------------------------------------------------------

    def snapshot(self):
        return (
            [(c.base, c.class_shift, c.stride, c.carved) for c in self.chunks],
            {s: (st.bump, st.limit, tuple(st.free_list)) for s, st in self.classes.items()},
        )

    def restore(self, snap) -> None:
        chunk_rows, class_rows = snap
        self.chunks = [_Chunk(b, s, t, c) for (b, s, t, c) in chunk_rows]
        self.classes = {}
        self._free_set = set()
        for shift, (bump, limit, free_list) in class_rows.items():
            state = _ClassState(shift)
            state.bump = bump
            state.limit = limit
            state.free_list = list(free_list)
            self.classes[shift] = state
            self._free_set.update(free_list)
