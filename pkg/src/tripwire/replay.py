"""Replay instrumentation: simulated watchpoints and call-site recording.

During re-execution the engine arms up to a small fixed number of
watchpoints (four by default, mirroring the x86 debug-register budget)
on corrupted canary words, ordered by address. Every trace-driven write
is checked for overlap with the armed words; engine-internal writes
such as canary planting never reach the check. Traps do not stop the
replay: the whole epoch range re-executes so one report can accumulate
every write that hit a watched word. Allocation and deallocation call
sites are recorded only here, never during normal execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import reports as rp
from .quarantine import UafItem
from .vheap import WORD


@dataclass(frozen=True)
class Watchpoint:
    word_addr: int
    kind: str  # rp.KIND_OVERFLOW or rp.KIND_UAF


@dataclass
class Trap:
    word_addr: int
    event_id: int
    stack: tuple[str, ...]


class WatchpointSet:
    """Armed word watchpoints plus the traps they collected."""

    def __init__(self, watchpoints: list[Watchpoint]):
        self.watchpoints = watchpoints
        self.traps: dict[int, list[Trap]] = {wp.word_addr: [] for wp in watchpoints}
        self._words = sorted(self.traps)

    @classmethod
    def arm(cls, words_with_kinds: list[tuple[int, str]], limit: int) -> tuple["WatchpointSet", list[tuple[int, str]]]:
        """Arm the first `limit` corrupted words by address order.

        Returns the set and the words left unwatched (reported without
        event attribution).
        """
        ordered = sorted(words_with_kinds)
        armed = [Watchpoint(w, kind) for w, kind in ordered[:limit]]
        return cls(armed), ordered[limit:]

    def __len__(self) -> int:
        return len(self.watchpoints)

    def overlapping(self, addr: int, length: int) -> list[int]:
        end = addr + length
        return [w for w in self._words if w < end and addr < w + WORD]

    def record(self, word: int, event_id: int, stack: tuple[str, ...]) -> None:
        self.traps[word].append(Trap(word, event_id, stack))

    def check_write(self, addr: int, length: int, event_id: int, stack: tuple[str, ...]) -> int:
        """Record a trap for every armed word overlapping the write."""
        hits = 0
        for word in self.overlapping(addr, length):
            self.record(word, event_id, stack)
            hits += 1
        return hits


@dataclass
class SiteLog:
    """Per-replay record of allocation and deallocation call sites."""

    alloc_sites: dict[int, tuple[tuple[str, ...], int]] = field(default_factory=dict)
    free_sites: dict[int, tuple[tuple[str, ...], int]] = field(default_factory=dict)

    def record_alloc(self, payload: int, stack: tuple[str, ...], event_id: int) -> None:
        self.alloc_sites[payload] = (stack, event_id)

    def record_free(self, payload: int, stack: tuple[str, ...], event_id: int) -> None:
        self.free_sites[payload] = (stack, event_id)


def _alloc_fields(payload: int | None, site_log: SiteLog | None) -> dict:
    if payload is None:
        return {"alloc_stack": None, "alloc_event": None, "alloc_prior_epoch": False}
    site = site_log.alloc_sites.get(payload) if site_log else None
    if site is None:
        return {"alloc_stack": None, "alloc_event": None, "alloc_prior_epoch": True}
    stack, event_id = site
    return {"alloc_stack": stack, "alloc_event": event_id, "alloc_prior_epoch": False}


def overflow_report(
    epoch: int,
    word: int,
    owner_payload: int | None,
    owner_size: int | None,
    traps: list[Trap] | None,
    site_log: SiteLog | None,
) -> rp.ErrorReport:
    events = tuple((t.event_id, t.stack) for t in traps) if traps else ()
    return rp.ErrorReport(
        kind=rp.KIND_OVERFLOW,
        epoch=epoch,
        corrupted_addr=word,
        object_addr=owner_payload,
        object_size=owner_size,
        offending_events=events,
        unattributed=not events,
        **_alloc_fields(owner_payload, site_log),
    )


def uaf_report(
    epoch: int,
    item: UafItem,
    traps: list[Trap] | None,
    site_log: SiteLog | None,
) -> rp.ErrorReport:
    events = tuple((t.event_id, t.stack) for t in traps) if traps else ()
    entry = item.entry
    free_site = site_log.free_sites.get(entry.payload) if site_log else None
    free_stack, free_event = free_site if free_site else (entry.free_stack, entry.free_event)
    return rp.ErrorReport(
        kind=rp.KIND_UAF,
        epoch=epoch,
        corrupted_addr=item.word,
        object_addr=entry.payload,
        object_size=entry.requested,
        offending_events=events,
        free_stack=free_stack,
        free_event=free_event,
        unattributed=not events,
        **_alloc_fields(entry.payload, site_log),
    )


def leak_report(
    epoch: int,
    payload: int,
    requested: int,
    site_log: SiteLog | None,
) -> rp.ErrorReport:
    site = site_log.alloc_sites.get(payload) if site_log else None
    if site is None:
        return rp.ErrorReport(
            kind=rp.KIND_LEAK,
            epoch=epoch,
            object_addr=payload,
            object_size=requested,
            alloc_prior_epoch=True,
        )
    stack, event_id = site
    return rp.ErrorReport(
        kind=rp.KIND_LEAK,
        epoch=epoch,
        object_addr=payload,
        object_size=requested,
        offending_events=((event_id, stack),),
        alloc_stack=stack,
        alloc_event=event_id,
    )


def reachable_freed_report(epoch: int, entry, site_log: SiteLog | None) -> rp.ErrorReport:
    return rp.ErrorReport(
        kind=rp.KIND_LEAK,
        epoch=epoch,
        object_addr=entry.payload,
        object_size=entry.requested,
        free_stack=entry.free_stack,
        free_event=entry.free_event,
        reachable_freed=True,
        **_alloc_fields(entry.payload, site_log),
    )
