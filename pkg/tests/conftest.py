from __future__ import annotations

from tripwire.config import EngineConfig


def small_config(**overrides) -> EngineConfig:
    """Desk-sized geometry so snapshots and scans stay tiny in tests."""
    kw = dict(
        heap_size=4 * 1024 * 1024,
        chunk_size=64 * 1024,
        globals_words=256,
        max_class=16 * 1024,
    )
    kw.update(overrides)
    return EngineConfig(**kw)
