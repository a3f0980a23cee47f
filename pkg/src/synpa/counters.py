"""Hardware-counter samples and trace-file providers.

A trace file carries one JSON header line followed by CSV rows, one row
per (quantum, thread):

    {"version": 1, "dispatch_width": 4, "quantum_ms": 100.0, "threads": ["a", "b"]}
    quantum,thread,cpu_cycles,inst_spec,stall_frontend,stall_backend
    0,a,1000,1200,200,300
    ...

Profile files (see :mod:`synpa.trainer`) use the same layout with an
extra ``committed_instructions`` column and a ``mode`` field in the
header.  Counter values are nonnegative integers; rows are ordered by
``(quantum, thread)`` and each thread occupies a contiguous range of
quanta.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    EndOfTrace,
    OutOfOrderPollError,
    RosterError,
    TraceError,
    UnsupportedPlatformError,
)

TRACE_VERSION = 1

#: CSV columns common to traces and profiles, in file order.
TRACE_COLUMNS = (
    "quantum",
    "thread",
    "cpu_cycles",
    "inst_spec",
    "stall_frontend",
    "stall_backend",
)

#: Extra column present only in profile files.
COMMITTED_COLUMN = "committed_instructions"

_COUNTER_FIELDS = ("cpu_cycles", "inst_spec", "stall_frontend", "stall_backend")


@dataclass(frozen=True)
class RawCounterSample:
    """One quantum's worth of dispatch-stage counters for one thread."""

    quantum_index: int
    thread_id: str
    cpu_cycles: int
    inst_spec: int
    stall_frontend: int
    stall_backend: int

    def __post_init__(self) -> None:
        for name in ("quantum_index",) + _COUNTER_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TraceError(f"{name} must be an integer, got {value!r}")
            if value < 0:
                raise TraceError(f"{name} must be nonnegative, got {value}")
        if not self.thread_id:
            raise TraceError("thread_id must be a non-empty string")


@dataclass(frozen=True)
class TraceHeader:
    """Parsed JSON header of a trace or profile file."""

    dispatch_width: int
    quantum_ms: float
    threads: tuple[str, ...]
    version: int = TRACE_VERSION
    mode: str | None = None  # "isolated" | "paired" (profiles only)
    partner: str | None = None  # co-runner app id for paired profiles

    def __post_init__(self) -> None:
        if self.version != TRACE_VERSION:
            raise TraceError(f"unsupported trace version {self.version}")
        if self.dispatch_width < 1:
            raise TraceError(f"dispatch_width must be >= 1, got {self.dispatch_width}")
        if self.quantum_ms <= 0:
            raise TraceError(f"quantum_ms must be positive, got {self.quantum_ms}")
        if len(set(self.threads)) != len(self.threads):
            raise TraceError("duplicate thread ids in header roster")
        if self.mode not in (None, "isolated", "paired"):
            raise TraceError(f"unknown profile mode {self.mode!r}")

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "dispatch_width": self.dispatch_width,
            "quantum_ms": self.quantum_ms,
            "threads": list(self.threads),
        }
        if self.mode is not None:
            doc["mode"] = self.mode
        if self.partner is not None:
            doc["partner"] = self.partner
        return json.dumps(doc, sort_keys=True)


def _parse_header(line: str) -> TraceHeader:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceError(f"header is not valid JSON: {exc}", line=1) from None
    if not isinstance(doc, dict):
        raise TraceError("header must be a JSON object", line=1)
    for key in ("version", "dispatch_width", "quantum_ms", "threads"):
        if key not in doc:
            raise TraceError(f"header missing required field {key!r}", line=1)
    threads = doc["threads"]
    if not isinstance(threads, list) or not all(isinstance(t, str) for t in threads):
        raise TraceError("header 'threads' must be a list of strings", line=1)
    try:
        return TraceHeader(
            version=int(doc["version"]),
            dispatch_width=int(doc["dispatch_width"]),
            quantum_ms=float(doc["quantum_ms"]),
            threads=tuple(threads),
            mode=doc.get("mode"),
            partner=doc.get("partner"),
        )
    except TraceError:
        raise
    except (TypeError, ValueError) as exc:
        raise TraceError(f"bad header field: {exc}", line=1) from None


def read_counter_file(
    path: str, *, require_committed: bool = False
) -> tuple[TraceHeader, list[RawCounterSample], list[int]]:
    """Parse a trace or profile file.

    Returns ``(header, samples, committed)`` where ``committed`` is the
    per-row committed-instruction column (empty for plain traces).
    Raises :class:`TraceError` with a line number on malformed input and
    :class:`RosterError` when rows disagree with the header roster.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise TraceError(f"cannot read trace {path!r}: {exc}") from None
    return parse_counter_text(text, require_committed=require_committed)


def parse_counter_text(
    text: str, *, require_committed: bool = False
) -> tuple[TraceHeader, list[RawCounterSample], list[int]]:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise TraceError("empty file: missing JSON header", line=1)
    header = _parse_header(lines[0])

    expected_cols = TRACE_COLUMNS + ((COMMITTED_COLUMN,) if require_committed else ())
    if len(lines) < 2 or not lines[1].strip():
        raise TraceError("missing CSV column header", line=2)
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    cols = tuple(c.strip() for c in next(reader))
    if cols != expected_cols:
        raise TraceError(
            f"unexpected columns {cols!r}; expected {expected_cols!r}", line=2
        )

    samples: list[RawCounterSample] = []
    committed: list[int] = []
    for offset, row in enumerate(reader):
        lineno = offset + 3
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(expected_cols):
            raise TraceError(
                f"expected {len(expected_cols)} fields, found {len(row)}", line=lineno
            )
        try:
            sample = RawCounterSample(
                quantum_index=int(row[0]),
                thread_id=row[1],
                cpu_cycles=int(row[2]),
                inst_spec=int(row[3]),
                stall_frontend=int(row[4]),
                stall_backend=int(row[5]),
            )
        except ValueError as exc:
            raise TraceError(f"bad counter value: {exc}", line=lineno) from None
        except TraceError as exc:
            raise TraceError(str(exc), line=lineno) from None
        samples.append(sample)
        if require_committed:
            try:
                done = int(row[6])
            except ValueError as exc:
                raise TraceError(f"bad committed count: {exc}", line=lineno) from None
            if done < 0:
                raise TraceError("committed_instructions must be >= 0", line=lineno)
            committed.append(done)

    _validate_roster(header, samples)
    return header, samples, committed


def _validate_roster(header: TraceHeader, samples: Sequence[RawCounterSample]) -> None:
    """Check roster membership, row ordering and per-thread contiguity."""
    roster = set(header.threads)
    last_key: tuple[int, str] | None = None
    seen: dict[str, list[int]] = {}
    for sample in samples:
        if sample.thread_id not in roster:
            raise RosterError(
                f"thread {sample.thread_id!r} not declared in header roster"
            )
        key = (sample.quantum_index, sample.thread_id)
        if last_key is not None and key <= last_key:
            raise TraceError(
                f"rows out of order: {key} follows {last_key} "
                "(must be sorted by (quantum, thread))"
            )
        last_key = key
        seen.setdefault(sample.thread_id, []).append(sample.quantum_index)

    for thread, quanta in sorted(seen.items()):
        for a, b in zip(quanta, quanta[1:]):
            if b != a + 1:
                raise TraceError(
                    f"thread {thread!r} has a gap between quanta {a} and {b}"
                )

    # Every quantum between the global first and last must have samples:
    # a silent quantum means some alive thread is missing.
    if samples:
        present = sorted({s.quantum_index for s in samples})
        for a, b in zip(present, present[1:]):
            if b != a + 1:
                raise TraceError(f"no samples for quantum {a + 1}")


class TraceProvider:
    """Replays counter samples from a parsed trace, quantum by quantum.

    ``poll`` must be called with the next unread quantum index; anything
    else is a contract violation.  Reading past the final quantum raises
    :class:`EndOfTrace`, which marks normal workload completion.
    """

    def __init__(self, header: TraceHeader, samples: Sequence[RawCounterSample]):
        self.header = header
        self._by_quantum: dict[int, list[RawCounterSample]] = {}
        for sample in samples:
            self._by_quantum.setdefault(sample.quantum_index, []).append(sample)
        self._quanta = sorted(self._by_quantum)
        self._cursor = 0

    @property
    def quanta(self) -> tuple[int, ...]:
        return tuple(self._quanta)

    @property
    def next_quantum(self) -> int | None:
        """The quantum index the next ``poll`` must request, or None at EOF."""
        if self._cursor >= len(self._quanta):
            return None
        return self._quanta[self._cursor]

    def poll(self, quantum_index: int) -> list[RawCounterSample]:
        expected = self.next_quantum
        if expected is None:
            raise EndOfTrace(f"trace exhausted after {len(self._quanta)} quanta")
        if quantum_index != expected:
            raise OutOfOrderPollError(
                f"poll requested quantum {quantum_index}, next unread is {expected}"
            )
        self._cursor += 1
        return list(self._by_quantum[expected])

    def __iter__(self) -> Iterator[tuple[int, list[RawCounterSample]]]:
        while self.next_quantum is not None:
            q = self.next_quantum
            yield q, self.poll(q)


def open_trace(path: str) -> TraceProvider:
    """Open a trace file and return a provider over its quanta."""
    header, samples, _ = read_counter_file(path)
    return TraceProvider(header, samples)


def format_trace(
    header: TraceHeader,
    samples: Iterable[RawCounterSample],
    committed: Mapping[tuple[int, str], int] | None = None,
) -> str:
    """Serialize samples to the on-disk format.

    Round trip guarantee: ``parse_counter_text(format_trace(h, s))``
    reproduces ``(h, s)``.  Pass ``committed`` (keyed by
    ``(quantum, thread)``) to emit the profile-file variant.
    """
    cols = TRACE_COLUMNS + ((COMMITTED_COLUMN,) if committed is not None else ())
    out = io.StringIO()
    out.write(header.to_json() + "\n")
    out.write(",".join(cols) + "\n")
    rows = sorted(samples, key=lambda s: (s.quantum_index, s.thread_id))
    for s in rows:
        base = (
            f"{s.quantum_index},{s.thread_id},{s.cpu_cycles},"
            f"{s.inst_spec},{s.stall_frontend},{s.stall_backend}"
        )
        if committed is not None:
            base += f",{committed[(s.quantum_index, s.thread_id)]}"
        out.write(base + "\n")
    return out.getvalue()


def write_trace(
    path: str,
    header: TraceHeader,
    samples: Iterable[RawCounterSample],
    committed: Mapping[tuple[int, str], int] | None = None,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trace(header, samples, committed))


class LiveCounterProvider:
    """Placeholder for a real perf-counter backend.

    Reading dispatch-stage counters needs OS/PMU support that this
    environment does not provide, so every poll raises
    :class:`UnsupportedPlatformError`.  The class exists to pin down the
    provider interface shared with :class:`TraceProvider`.
    """

    def __init__(self, threads: Sequence[str], dispatch_width: int = 4):
        self.header = TraceHeader(
            dispatch_width=dispatch_width, quantum_ms=100.0, threads=tuple(threads)
        )

    @property
    def next_quantum(self) -> int | None:
        raise UnsupportedPlatformError(
            "live counter collection is not available on this platform; "
            "record a trace and use TraceProvider instead"
        )

    def poll(self, quantum_index: int) -> list[RawCounterSample]:
        raise UnsupportedPlatformError(
            "live counter collection is not available on this platform; "
            "record a trace and use TraceProvider instead"
        )
