"""The execution engine: epochs at full speed, evidence checks at
boundaries, rollback and instrumented replay when evidence turns up.

Execution is divided into epochs. Each epoch starts with a byte-exact
snapshot of the modeled writable memory plus machine, allocator,
bitmap, quarantine, and file-position state. Events then run at full
speed with no per-write checking. An epoch ends at an irrevocable
external call, a modeled segfault, or the end of the trace; the
detectors inspect state there. Corrupted canaries found at a free or
an eviction end-run the boundary and trigger the same path
immediately. On any evidence the engine restores the snapshot, arms
watchpoints on the corrupted words, re-executes the epoch's events
with call-site recording on, converts traps into reports, and resumes.

Identical (trace, config) inputs produce identical outcomes: the
allocator hands out addresses as a pure function of history, external
call results come from a deterministic model, and replay re-verifies
both against the recorded execution.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

from .config import EngineConfig
from .epoch import Category, EpochSnapshot, SyscallModel, classify
from .errors import (
    NotAHeapObject,
    OutOfVirtualHeap,
    OversizeRequest,
    ReplayDivergence,
    SegfaultModel,
)
from .leakscan import LeakScanner
from .overflow import OverflowDetector
from .quarantine import QuarantineEntry, QuarantineQueue, UafItem
from .replay import (
    SiteLog,
    WatchpointSet,
    leak_report,
    overflow_report,
    reachable_freed_report,
    uaf_report,
)
from .reports import (
    KIND_DOUBLE_FREE,
    KIND_OVERFLOW,
    KIND_SEGFAULT,
    KIND_UAF,
    ErrorReport,
    sort_reports,
)
from .trace import EventKind, TraceEvent, ValueExpr, parse_trace
from .vheap import Allocator, MemoryImage, U64_MASK, next_pow2


class Mode(enum.Enum):
    NORMAL = "normal"
    REPLAY = "replay"


@dataclass
class Counters:
    writes: int = 0
    # canary work done on the normal-mode write path; stays zero by design
    normal_write_checks: int = 0
    replay_watch_checks: int = 0
    allocations: int = 0
    frees: int = 0


@dataclass
class _Evidence:
    # (corrupted word, owning payload, owning requested size)
    overflow: list[tuple[int, int | None, int | None]] = field(default_factory=list)
    uaf: list[UafItem] = field(default_factory=list)
    leaked: list[tuple[int, int]] = field(default_factory=list)
    reachable_freed: list[QuarantineEntry] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.overflow or self.uaf or self.leaked or self.reachable_freed)


@dataclass(frozen=True)
class ReplaySummary:
    """One rollback+replay episode, kept for inspection and tests."""

    epoch: int
    replay_start: int
    replay_stop: int
    armed_words: tuple[int, ...]
    unwatched_words: tuple[int, ...]
    trap_count: int
    orig_hash: str
    post_hash: str
    replayed_allocs: int


@dataclass(frozen=True)
class RunOutcome:
    reports: tuple[ErrorReport, ...]
    final_state_hash: str
    epochs: int
    events_total: int
    events_executed: int
    alloc_sequence: tuple[int, ...]
    extcall_results: tuple[tuple[int, str, int], ...]
    epoch_end_hashes: tuple[str, ...]
    scan_records: tuple[tuple[int, int], ...]
    counters: Counters


class Engine:
    """Single-use executor for one parsed trace under one config."""

    def __init__(
        self,
        events: list[TraceEvent],
        config: EngineConfig | None = None,
        force_rollback_epochs=(),
    ):
        self.events = events
        self.config = config or EngineConfig()
        self.force_rollback_epochs = frozenset(force_rollback_epochs)

        self.image = MemoryImage(self.config)
        self.allocator = Allocator(self.config, self.image)
        self.overflow = OverflowDetector(self.config, self.image)
        # the queue also runs fill-free when only dangling detection
        # needs its delayed reuse
        self.quarantine = (
            QuarantineQueue(
                self.config,
                self.image,
                self.allocator,
                self.overflow,
                fill_enabled=self.config.detector_enabled("uaf"),
            )
            if self.config.detector_enabled("uaf") or self.config.dangling
            else None
        )
        self.leaks = LeakScanner(self.image, self.allocator, self.quarantine)
        self.syscalls = SyscallModel()

        self.registers: dict[str, int] = {}
        self.call_stack: list[str] = []
        self.bindings: dict[str, int] = {}
        self.cursor = 0

        self.mode = Mode.NORMAL
        self.counters = Counters()
        self.reports: list[ErrorReport] = []
        self.reported_evidence: set[int] = set()  # leak/dangling payloads already reported
        self.alloc_sequence: list[int] = []
        self.extcall_results: list[tuple[int, str, int]] = []
        self._extcall_by_id: dict[int, int] = {}
        self.epoch_end_hashes: list[str] = []
        self.replay_summaries: list[ReplaySummary] = []

        self.epochs_begun = 0
        self.epoch_index = -1
        self.snapshot: EpochSnapshot | None = None
        self._wps: WatchpointSet | None = None
        self._site_log: SiteLog | None = None
        self._replay_alloc_count = 0
        self._current_event: TraceEvent | None = None
        self._ran = False

    # -- hashing ----------------------------------------------------------

    def image_hash(self) -> str:
        h = hashlib.sha256()
        h.update(len(self.image.heap).to_bytes(8, "little"))
        h.update(self.image.heap)
        h.update(self.image.globals)
        return h.hexdigest()

    def full_state_hash(self) -> str:
        """Hash of all state rollback must reproduce (fidelity checks)."""
        h = hashlib.sha256()
        h.update(len(self.image.heap).to_bytes(8, "little"))
        h.update(self.image.heap)
        h.update(self.image.globals)
        h.update(repr(sorted(self.registers.items())).encode())
        h.update(repr(tuple(self.call_stack)).encode())
        h.update(repr(sorted(self.bindings.items())).encode())
        h.update(self.cursor.to_bytes(8, "little"))
        chunks, classes = self.allocator.snapshot()
        h.update(repr(chunks).encode())
        h.update(repr(sorted(classes.items())).encode())
        h.update(self.overflow.bitmap.bits)
        if self.quarantine is not None:
            h.update(repr(self.quarantine.snapshot()).encode())
        h.update(repr(sorted(self.syscalls.files.snapshot().items())).encode())
        h.update(self.syscalls.counter.to_bytes(8, "little"))
        return h.hexdigest()

    # -- epoch lifecycle ---------------------------------------------------

    def _capture_snapshot(self) -> EpochSnapshot:
        return EpochSnapshot(
            epoch_index=self.epoch_index,
            event_cursor=self.cursor,
            image=self.image.snapshot(),
            registers=dict(self.registers),
            call_stack=tuple(self.call_stack),
            bindings=dict(self.bindings),
            allocator=self.allocator.snapshot(),
            bitmap=self.overflow.bitmap.snapshot(),
            quarantine=self.quarantine.snapshot() if self.quarantine is not None else None,
            files=self.syscalls.files.snapshot(),
            alloc_seq_len=len(self.alloc_sequence),
        )

    def _restore_snapshot(self, snap: EpochSnapshot) -> None:
        self.image.restore(snap.image)
        self.registers = dict(snap.registers)
        self.call_stack = list(snap.call_stack)
        self.bindings = dict(snap.bindings)
        self.allocator.restore(snap.allocator)
        self.overflow.bitmap.restore(snap.bitmap)
        if self.quarantine is not None:
            self.quarantine.restore(snap.quarantine)
        self.syscalls.files.restore(snap.files)
        self.cursor = snap.event_cursor

    def _begin_epoch(self) -> None:
        self.epoch_index = self.epochs_begun
        self.epochs_begun += 1
        self.snapshot = self._capture_snapshot()

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunOutcome:
        if self._ran:
            raise RuntimeError("Engine instances are single use; build a new one")
        self._ran = True
        self._begin_epoch()
        total = len(self.events)
        while True:
            if self.cursor >= total:
                self._boundary(None)
                break
            ev = self.events[self.cursor]
            if ev.kind is EventKind.END:
                self._boundary(ev)
                break
            if (
                ev.kind is EventKind.EXT_CALL
                and classify(ev.call_name, ev.call_args) is Category.IRREVOCABLE
            ):
                if self._boundary(ev):
                    break
                continue
            try:
                evidence = self._execute(ev)
            except SegfaultModel as fault:
                self._boundary(ev, fault=fault)
                break
            self.cursor += 1
            if evidence:
                # free-time or eviction-time detection: roll back now,
                # replay through the detecting event, then continue
                orig_hash = self.full_state_hash()
                self._rollback_and_replay(evidence, ev.id + 1, orig_hash)
        return self._finish()

    def _finish(self) -> RunOutcome:
        return RunOutcome(
            reports=tuple(sort_reports(self.reports)),
            final_state_hash=self.image_hash(),
            epochs=self.epochs_begun,
            events_total=len(self.events),
            events_executed=self.cursor,
            alloc_sequence=tuple(self.alloc_sequence),
            extcall_results=tuple(self.extcall_results),
            epoch_end_hashes=tuple(self.epoch_end_hashes),
            scan_records=tuple(self.overflow.scan_records),
            counters=self.counters,
        )

    # -- boundaries -----------------------------------------------------------

    def _boundary(self, trigger: TraceEvent | None, fault: SegfaultModel | None = None) -> bool:
        """End the current epoch. Returns True when the run is over."""
        boundary_cursor = self.cursor
        boundary_hash = self.full_state_hash()
        if fault is not None and trigger is not None:
            self.reports.append(
                ErrorReport(
                    kind=KIND_SEGFAULT,
                    epoch=self.epoch_index,
                    corrupted_addr=fault.addr,
                    offending_events=((trigger.id, tuple(self.call_stack)),),
                )
            )
        evidence = self._collect_evidence()
        if evidence or self.epoch_index in self.force_rollback_epochs:
            self._rollback_and_replay(evidence, boundary_cursor, boundary_hash)
        self.epoch_end_hashes.append(boundary_hash)
        self.syscalls.commit()
        if fault is not None:
            return True
        if trigger is None or trigger.kind is EventKind.END:
            return True
        result = self.syscalls.apply_irrevocable(trigger)
        self._record_extcall(trigger, result)
        self.cursor += 1
        if trigger.call_name == "exit":
            return True
        self._begin_epoch()
        return False

    def _collect_evidence(self) -> _Evidence:
        evidence = _Evidence()
        if self.config.detector_enabled("overflow") or self.config.detector_enabled("uaf"):
            words = self.overflow.epoch_scan()
            if self.quarantine is not None and self.quarantine.fill_enabled:
                uaf_items, rest = self.quarantine.split_scan_words(words)
            else:
                uaf_items, rest = [], words
            evidence.uaf = uaf_items
            for word in rest:
                try:
                    view = self.allocator.object_bounds(word)
                    evidence.overflow.append((word, view.payload, view.requested))
                except NotAHeapObject:
                    evidence.overflow.append((word, None, None))
        if self.config.detector_enabled("leak"):
            self.leaks.mark(self.registers)
            found = self.leaks.sweep(self.config.dangling, self.reported_evidence)
            evidence.leaked = found.leaked
            evidence.reachable_freed = found.reachable_freed
        return evidence

    # -- rollback and replay -----------------------------------------------

    def _rollback_and_replay(self, evidence: _Evidence, stop: int, orig_hash: str) -> None:
        """Restore the epoch snapshot and re-execute events up to stop.

        stop is exclusive: the epoch-end path passes the boundary event's
        index (never re-executed); the mid-epoch path passes the
        detecting event's index + 1 so the free itself replays too.
        """
        resume_cursor = self.cursor
        words = [(w, KIND_OVERFLOW) for (w, _, _) in evidence.overflow]
        words += [(item.word, KIND_UAF) for item in evidence.uaf]
        self._restore_snapshot(self.snapshot)
        wps, unwatched = WatchpointSet.arm(words, self.config.max_watchpoints)
        self._wps = wps
        self._site_log = SiteLog()
        self._replay_alloc_count = 0
        self.syscalls.begin_replay()
        self.mode = Mode.REPLAY
        self.image.write_observer = self._observe_write
        try:
            while self.cursor < stop:
                self._execute(self.events[self.cursor])
                self.cursor += 1
        finally:
            self.image.write_observer = None
            self.mode = Mode.NORMAL
        self.syscalls.finish_replay()
        if self.cursor != resume_cursor:
            raise ReplayDivergence(
                f"replay stopped at event {self.cursor}, expected {resume_cursor}"
            )
        post_hash = self.full_state_hash()
        if post_hash != orig_hash:
            raise ReplayDivergence("replayed state differs from the recorded execution")
        self._emit_replay_reports(evidence)
        self.replay_summaries.append(
            ReplaySummary(
                epoch=self.epoch_index,
                replay_start=self.snapshot.event_cursor,
                replay_stop=stop,
                armed_words=tuple(sorted(wps.traps)),
                unwatched_words=tuple(w for w, _ in unwatched),
                trap_count=sum(len(t) for t in wps.traps.values()),
                orig_hash=orig_hash,
                post_hash=post_hash,
                replayed_allocs=self._replay_alloc_count,
            )
        )
        self._wps = None
        self._site_log = None

    def _emit_replay_reports(self, evidence: _Evidence) -> None:
        epoch = self.epoch_index
        site_log = self._site_log
        for word, owner, size in evidence.overflow:
            self.reports.append(
                overflow_report(epoch, word, owner, size, self._wps.traps.get(word), site_log)
            )
        for item in evidence.uaf:
            self.reports.append(
                uaf_report(epoch, item, self._wps.traps.get(item.word), site_log)
            )
        for payload, requested in evidence.leaked:
            self.reports.append(leak_report(epoch, payload, requested, site_log))
        for entry in evidence.reachable_freed:
            self.reports.append(reachable_freed_report(epoch, entry, site_log))
        # retire what was just reported so later boundaries stay quiet
        self.overflow.retire_words(
            [w for w, _, _ in evidence.overflow] + [item.word for item in evidence.uaf]
        )
        self.reported_evidence.update(p for p, _ in evidence.leaked)
        self.reported_evidence.update(e.payload for e in evidence.reachable_freed)

    def _observe_write(self, addr: int, length: int) -> None:
        self.counters.replay_watch_checks += 1
        if self._wps is None:
            return
        for word in self._wps.overlapping(addr, length):
            if self._write_hits_canary(word, addr, length):
                self._wps.record(word, self._current_event.id, tuple(self.call_stack))

    def _write_hits_canary(self, word: int, addr: int, length: int) -> bool:
        """True when the write touches bytes the detectors currently own.

        Hardware would trap on every access to the watched word; the
        handler has to discard writes that were legal at that point of
        the replayed epoch (the canary did not exist yet, e.g. a store
        to a still-live object that is freed and canaried only later).
        """
        if self.overflow.bitmap.test_word(word):
            return True
        try:
            view = self.allocator.object_bounds(word)
        except NotAHeapObject:
            return False
        end = addr + length

        def overlaps(lo: int, hi: int) -> bool:
            return lo < hi and addr < hi and lo < end

        # partial interior canaries: filled but untracked bytes
        if self.config.detector_enabled("overflow"):
            tail = view.payload + min((view.requested + 7) & ~7, view.capacity)
            if overlaps(view.payload + view.requested, tail):
                return True
        # partial tail of a quarantined prefix
        if self.quarantine is not None and self.quarantine.fill_enabled:
            entry = self.quarantine.entry_for(view.payload)
            if entry is not None:
                fill = self.quarantine.prefix_len(entry)
                if overlaps(view.payload + (fill & ~7), view.payload + fill):
                    return True
        return False

    # -- event dispatch ------------------------------------------------------

    def _resolve(self, value: ValueExpr) -> int:
        if value.literal is not None:
            return value.literal & U64_MASK
        return (self.bindings[value.var] + value.delta) & U64_MASK

    def _record_extcall(self, ev: TraceEvent, result: int) -> None:
        self.extcall_results.append((ev.id, ev.call_name, result))
        self._extcall_by_id[ev.id] = result

    def _execute(self, ev: TraceEvent) -> _Evidence | None:
        self._current_event = ev
        kind = ev.kind
        if kind is EventKind.STACK_PUSH:
            self.call_stack.append(ev.frame)
        elif kind is EventKind.STACK_POP:
            self.call_stack.pop()
        elif kind is EventKind.MALLOC:
            self._exec_malloc(ev)
        elif kind is EventKind.FREE:
            return self._exec_free(ev)
        elif kind is EventKind.WRITE:
            self.counters.writes += 1
            self.image.write_fill(self.bindings[ev.var] + ev.offset, ev.length, ev.fill, internal=False)
        elif kind is EventKind.WRITE_ABS:
            self.counters.writes += 1
            self.image.write_fill(self.bindings[ev.var] + ev.delta, ev.length, ev.fill, internal=False)
        elif kind is EventKind.READ:
            self.image.read(self.bindings[ev.var] + ev.offset, ev.length)
        elif kind is EventKind.REG_SET:
            self.registers[ev.reg] = self._resolve(ev.value)
        elif kind is EventKind.GLOBAL_SET:
            addr = self.config.globals_base + 8 * ev.index
            self.image.write_word(addr, self._resolve(ev.value), internal=False)
        elif kind is EventKind.EXT_CALL:
            category = classify(ev.call_name, ev.call_args)
            result = self.syscalls.handle(ev, category, replay=self.mode is Mode.REPLAY)
            if self.mode is Mode.NORMAL:
                self._record_extcall(ev, result)
            elif self._extcall_by_id.get(ev.id) != result:
                raise ReplayDivergence(
                    f"event {ev.id}: call {ev.call_name} returned {result}, "
                    f"expected {self._extcall_by_id.get(ev.id)}"
                )
        else:
            raise AssertionError(f"unexpected event kind {kind}")
        return None

    def _exec_malloc(self, ev: TraceEvent) -> None:
        try:
            payload = self.allocator.allocate(ev.size)
        except (OversizeRequest, OutOfVirtualHeap) as exc:
            raise type(exc)(f"event {ev.id} (line {ev.line_no}): {exc}") from exc
        if self.config.detector_enabled("overflow"):
            capacity = next_pow2(max(ev.size, self.config.min_class))
            self.overflow.plant_on_alloc(payload, ev.size, capacity)
        self.bindings[ev.var] = payload
        self.counters.allocations += 1
        if self.mode is Mode.NORMAL:
            self.alloc_sequence.append(payload)
            self.reported_evidence.discard(payload)
        else:
            expected_idx = self.snapshot.alloc_seq_len + self._replay_alloc_count
            if (
                expected_idx >= len(self.alloc_sequence)
                or self.alloc_sequence[expected_idx] != payload
            ):
                raise ReplayDivergence(
                    f"event {ev.id}: replayed allocation at 0x{payload:x} diverges"
                )
            self._replay_alloc_count += 1
            self._site_log.record_alloc(payload, tuple(self.call_stack), ev.id)

    def _exec_free(self, ev: TraceEvent) -> _Evidence | None:
        payload = self.bindings[ev.var]
        view = self.allocator.object_bounds(payload)
        self.counters.frees += 1
        if not view.allocated:
            if self.mode is Mode.NORMAL:
                entry = self.quarantine.entry_for(payload) if self.quarantine is not None else None
                self.reports.append(
                    ErrorReport(
                        kind=KIND_DOUBLE_FREE,
                        epoch=self.epoch_index,
                        object_addr=payload,
                        object_size=view.requested,
                        offending_events=((ev.id, tuple(self.call_stack)),),
                        prior_free_stack=entry.free_stack if entry else None,
                        prior_free_event=entry.free_event if entry else None,
                    )
                )
            return None
        evidence = _Evidence()
        if self.config.detector_enabled("overflow"):
            words = self.overflow.check_on_free(payload, view.requested, view.capacity)
            evidence.overflow = [(w, payload, view.requested) for w in words]
        self.allocator.set_allocated(payload, False)
        if self.quarantine is not None:
            entry = QuarantineEntry(
                payload=payload,
                capacity=view.capacity,
                requested=view.requested,
                free_stack=tuple(self.call_stack),
                free_event=ev.id,
                free_epoch=self.epoch_index,
            )
            evidence.uaf = self.quarantine.on_free(entry)
        else:
            self.allocator.release_slot(payload)
        if self.mode is Mode.REPLAY:
            self._site_log.record_free(payload, tuple(self.call_stack), ev.id)
            return None
        return evidence if evidence else None


def run_events(
    events: list[TraceEvent],
    config: EngineConfig | None = None,
    force_rollback_epochs=(),
) -> RunOutcome:
    return Engine(events, config, force_rollback_epochs).run()


def run_text(
    text: str,
    config: EngineConfig | None = None,
    force_rollback_epochs=(),
) -> RunOutcome:
    return run_events(parse_trace(text), config, force_rollback_epochs)
