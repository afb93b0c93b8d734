"""tripwire: evidence-based memory-error detection over event traces.

Programs under test are modeled as deterministic straight-line traces
executed against a virtual heap. The engine plants canary tripwires,
runs epochs at full speed, checks for evidence of buffer overflows,
use-after-free writes, and leaks at epoch boundaries, and on detection
rolls back and replays with simulated watchpoints to pinpoint the
exact offending event.
"""

from .config import EngineConfig, parse_detectors
from .engine import Engine, RunOutcome, run_events, run_text
from .errors import TripwireError
from .reports import ErrorReport, emit_json, emit_text
from .trace import EventKind, TraceEvent, parse_trace

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "EngineConfig",
    "ErrorReport",
    "EventKind",
    "RunOutcome",
    "TraceEvent",
    "TripwireError",
    "emit_json",
    "emit_text",
    "parse_detectors",
    "parse_trace",
    "run_events",
    "run_text",
    "__version__",
]
