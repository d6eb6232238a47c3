"""Observation trace data model and its line-oriented text format.

A trace is what the hypervisor-side collector records about one workload
run: page-granular code fetches and data accesses, optional cache-line
sets, ciphertext block diffs, performance-counter snapshots, and window
markers.  The text format is one event per line with a small header, so
traces diff cleanly and can be inspected with standard tools.

Format summary::

    SEED <u64>            # header: collection seed
    NUM <u32>             # header: distinct code pages fetched
    CHANNELS page,cache   # header: channels that were enabled
    CF 1a2b               # code fetch, guest page number in lowercase hex
    MA 141b69 CL 3,60     # data access, optional ascending cache-line list
    CI 1f BK 7 <32hex> <32hex>   # ciphertext diff: block, before, after
    PN 5 9 2 1 0          # counter snapshot (5 counters)
    MARK START            # window marker (START/STOP)

'#' starts a comment; blank lines are ignored.  Guest page numbers are
40-bit, cache lines 0..63, blocks 0..255.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "CodeFetch",
    "DataAccess",
    "CiphertextDiff",
    "CounterSnapshot",
    "Marker",
    "Trace",
    "TraceError",
    "TraceSyntaxError",
    "parse_trace",
    "write_trace",
    "trace_stats",
    "windowed_events",
    "COUNTER_NAMES",
]

GPN_BITS = 40
GPN_LIMIT = 1 << GPN_BITS
LINES_PER_PAGE = 64
BLOCKS_PER_PAGE = 256
BLOCK_BYTES = 16

#: Order of the five sampled performance counters in a PN line.
COUNTER_NAMES = ("instructions", "uops", "branches", "taken_branches", "returns")

#: Canonical channel order for the CHANNELS header line.
CHANNEL_ORDER = ("page", "cache", "cipher", "pmc")


class TraceError(ValueError):
    """A trace violates a structural invariant."""


class TraceSyntaxError(TraceError):
    """The text form of a trace could not be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _check_gpn(gpn: int) -> None:
    if not 0 <= gpn < GPN_LIMIT:
        raise TraceError(f"guest page number out of range: {gpn:#x}")


@dataclass(frozen=True)
class CodeFetch:
    """The guest executed from a code page it had not mapped."""

    gpn: int

    def __post_init__(self):
        _check_gpn(self.gpn)


@dataclass(frozen=True)
class DataAccess:
    """The guest touched a data page absent from the tracked page queue.

    ``lines`` is the set of cache lines observed on the page while it
    stayed mapped, or ``None`` when the cache channel was off.
    """

    gpn: int
    lines: frozenset[int] | None = None

    def __post_init__(self):
        _check_gpn(self.gpn)
        if self.lines is not None:
            object.__setattr__(self, "lines", frozenset(self.lines))
            for ln in self.lines:
                if not 0 <= ln < LINES_PER_PAGE:
                    raise TraceError(f"cache line out of range: {ln}")


@dataclass(frozen=True)
class CiphertextDiff:
    """One 16-byte block of a page changed ciphertext while mapped."""

    gpn: int
    block: int
    before: bytes
    after: bytes

    def __post_init__(self):
        _check_gpn(self.gpn)
        if not 0 <= self.block < BLOCKS_PER_PAGE:
            raise TraceError(f"block index out of range: {self.block}")
        for name in ("before", "after"):
            val = getattr(self, name)
            if len(val) != BLOCK_BYTES:
                raise TraceError(f"{name} must be {BLOCK_BYTES} bytes, got {len(val)}")
        if self.before == self.after:
            raise TraceError("ciphertext diff with identical before/after")


@dataclass(frozen=True)
class CounterSnapshot:
    """Performance counters accumulated since the previous emitted event."""

    values: tuple[int, int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) != len(COUNTER_NAMES):
            raise TraceError(f"expected {len(COUNTER_NAMES)} counters")
        for v in self.values:
            if v < 0:
                raise TraceError("counter values must be non-negative")


@dataclass(frozen=True)
class Marker:
    """Boundary of a targeted-collection window."""

    kind: str  # "START" or "STOP"

    def __post_init__(self):
        if self.kind not in ("START", "STOP"):
            raise TraceError(f"marker kind must be START or STOP, got {self.kind!r}")


TraceEvent = CodeFetch | DataAccess | CiphertextDiff | CounterSnapshot | Marker


@dataclass(frozen=True)
class Trace:
    """An ordered event list plus collection metadata.

    Invariants, enforced at construction:

    * markers alternate START/STOP and are balanced;
    * ``num_code_pages`` equals the number of distinct CodeFetch pages.

    Pass ``num_code_pages=None`` to have it computed.
    """

    seed: int
    channels: frozenset[str]
    events: tuple[TraceEvent, ...]
    num_code_pages: int = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "channels", frozenset(self.channels))
        object.__setattr__(self, "events", tuple(self.events))
        if not 0 <= self.seed < (1 << 64):
            raise TraceError(f"seed out of range: {self.seed}")
        for ch in self.channels:
            if ch not in CHANNEL_ORDER:
                raise TraceError(f"unknown channel: {ch!r}")
        depth = 0
        cf_pages = set()
        for ev in self.events:
            if isinstance(ev, Marker):
                depth += 1 if ev.kind == "START" else -1
                if depth not in (0, 1):
                    raise TraceError("markers must alternate START/STOP")
            elif isinstance(ev, CodeFetch):
                cf_pages.add(ev.gpn)
        if depth != 0:
            raise TraceError("unbalanced markers")
        if self.num_code_pages is None:
            object.__setattr__(self, "num_code_pages", len(cf_pages))
        elif self.num_code_pages != len(cf_pages):
            raise TraceError(
                f"num_code_pages={self.num_code_pages} but trace has "
                f"{len(cf_pages)} distinct code pages"
            )

    @property
    def has_markers(self) -> bool:
        return any(isinstance(ev, Marker) for ev in self.events)

    def windowed_events(self) -> list["TraceEvent"]:
        return windowed_events(self)


def windowed_events(trace: Trace) -> list[TraceEvent]:
    """Events considered "observed": inside marker windows if markers exist.

    Traces without markers are returned whole.  Marker events themselves
    are excluded from the result; they delimit, they are not observations.
    """
    if not trace.has_markers:
        return [ev for ev in trace.events]
    out = []
    inside = False
    for ev in trace.events:
        if isinstance(ev, Marker):
            inside = ev.kind == "START"
        elif inside:
            out.append(ev)
    return out


def write_trace(trace: Trace) -> str:
    """Render a trace in canonical text form.

    Header lines come in SEED/NUM/CHANNELS order; the CHANNELS line is
    omitted when no channel is recorded.  Cache-line lists are ascending,
    hex is lowercase without an 0x prefix.
    """
    lines = [f"SEED {trace.seed}", f"NUM {trace.num_code_pages}"]
    if trace.channels:
        chans = ",".join(c for c in CHANNEL_ORDER if c in trace.channels)
        lines.append(f"CHANNELS {chans}")
    for ev in trace.events:
        if isinstance(ev, CodeFetch):
            lines.append(f"CF {ev.gpn:x}")
        elif isinstance(ev, DataAccess):
            if ev.lines is None:
                lines.append(f"MA {ev.gpn:x}")
            else:
                cl = ",".join(str(i) for i in sorted(ev.lines))
                lines.append(f"MA {ev.gpn:x} CL {cl}")
        elif isinstance(ev, CiphertextDiff):
            lines.append(
                f"CI {ev.gpn:x} BK {ev.block} {ev.before.hex()} {ev.after.hex()}"
            )
        elif isinstance(ev, CounterSnapshot):
            lines.append("PN " + " ".join(str(v) for v in ev.values))
        elif isinstance(ev, Marker):
            lines.append(f"MARK {ev.kind}")
        else:  # pragma: no cover - event union is closed
            raise TraceError(f"unknown event type: {ev!r}")
    return "\n".join(lines) + "\n"


def _parse_gpn(tok: str, lineno: int) -> int:
    if tok != tok.lower() or tok.startswith("0x"):
        raise TraceSyntaxError(lineno, f"page numbers are bare lowercase hex: {tok!r}")
    try:
        gpn = int(tok, 16)
    except ValueError:
        raise TraceSyntaxError(lineno, f"malformed hex page number: {tok!r}") from None
    if not 0 <= gpn < GPN_LIMIT:
        raise TraceSyntaxError(lineno, f"page number out of range: {tok!r}")
    return gpn


def _parse_uint(tok: str, lineno: int, what: str, limit: int) -> int:
    try:
        val = int(tok, 10)
    except ValueError:
        raise TraceSyntaxError(lineno, f"malformed {what}: {tok!r}") from None
    if not 0 <= val < limit:
        raise TraceSyntaxError(lineno, f"{what} out of range: {tok!r}")
    return val


def parse_trace(text: str) -> Trace:
    """Parse the text form produced by :func:`write_trace`.

    Header lines may appear in any order before the first event; a
    missing SEED defaults to 0, missing CHANNELS to the empty set, and a
    missing NUM is computed from the events.  ``write_trace(parse_trace(s))
    == s`` holds for canonical ``s``.
    """
    seed = 0
    num: int | None = None
    channels: frozenset[str] = frozenset()
    events: list[TraceEvent] = []
    header_done = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kind = toks[0]

        if kind in ("SEED", "NUM", "CHANNELS"):
            if header_done:
                raise TraceSyntaxError(lineno, f"{kind} header after first event")
            if kind == "SEED":
                if len(toks) != 2:
                    raise TraceSyntaxError(lineno, "SEED takes one value")
                seed = _parse_uint(toks[1], lineno, "seed", 1 << 64)
            elif kind == "NUM":
                if len(toks) != 2:
                    raise TraceSyntaxError(lineno, "NUM takes one value")
                num = _parse_uint(toks[1], lineno, "code page count", 1 << 32)
            else:
                if len(toks) != 2:
                    raise TraceSyntaxError(lineno, "CHANNELS takes one comma list")
                names = toks[1].split(",")
                for name in names:
                    if name not in CHANNEL_ORDER:
                        raise TraceSyntaxError(lineno, f"unknown channel: {name!r}")
                channels = frozenset(names)
            continue

        header_done = True
        try:
            if kind == "CF":
                if len(toks) != 2:
                    raise TraceSyntaxError(lineno, "CF takes one page number")
                events.append(CodeFetch(_parse_gpn(toks[1], lineno)))
            elif kind == "MA":
                if len(toks) == 2:
                    events.append(DataAccess(_parse_gpn(toks[1], lineno)))
                elif len(toks) == 4 and toks[2] == "CL":
                    gpn = _parse_gpn(toks[1], lineno)
                    idxs = [
                        _parse_uint(t, lineno, "cache line", LINES_PER_PAGE)
                        for t in toks[3].split(",")
                    ]
                    if idxs != sorted(set(idxs)):
                        raise TraceSyntaxError(
                            lineno, "cache line list must be ascending and unique"
                        )
                    events.append(DataAccess(gpn, frozenset(idxs)))
                else:
                    raise TraceSyntaxError(lineno, "MA takes a page and optional CL list")
            elif kind == "CI":
                if len(toks) != 6 or toks[2] != "BK":
                    raise TraceSyntaxError(
                        lineno, "CI takes page, BK, block, before, after"
                    )
                gpn = _parse_gpn(toks[1], lineno)
                block = _parse_uint(toks[3], lineno, "block index", BLOCKS_PER_PAGE)
                try:
                    before = bytes.fromhex(toks[4])
                    after = bytes.fromhex(toks[5])
                except ValueError:
                    raise TraceSyntaxError(lineno, "malformed ciphertext hex") from None
                if len(before) != BLOCK_BYTES or len(after) != BLOCK_BYTES:
                    raise TraceSyntaxError(lineno, "ciphertexts must be 16 bytes")
                events.append(CiphertextDiff(gpn, block, before, after))
            elif kind == "PN":
                if len(toks) != 1 + len(COUNTER_NAMES):
                    raise TraceSyntaxError(
                        lineno, f"PN takes {len(COUNTER_NAMES)} counter values"
                    )
                vals = tuple(
                    _parse_uint(t, lineno, "counter", 1 << 64) for t in toks[1:]
                )
                events.append(CounterSnapshot(vals))
            elif kind == "MARK":
                if len(toks) != 2 or toks[1] not in ("START", "STOP"):
                    raise TraceSyntaxError(lineno, "MARK takes START or STOP")
                events.append(Marker(toks[1]))
            else:
                raise TraceSyntaxError(lineno, f"unknown event kind: {kind!r}")
        except TraceError as exc:
            if isinstance(exc, TraceSyntaxError):
                raise
            raise TraceSyntaxError(lineno, str(exc)) from None

    try:
        return Trace(seed=seed, channels=channels, events=tuple(events), num_code_pages=num)
    except TraceError as exc:
        raise TraceError(f"invalid trace: {exc}") from None


def trace_stats(trace: Trace) -> dict[str, int]:
    """Event counts over the observed (marker-windowed) portion of a trace.

    Returns totals and distinct counts for code fetches, data accesses,
    cache lines (distinct means distinct (page, line) pairs) and
    ciphertext diffs (distinct (page, block) pairs).
    """
    total_cf = total_da = total_lines = total_ci = 0
    cf_pages: set[int] = set()
    da_pages: set[int] = set()
    line_keys: set[tuple[int, int]] = set()
    block_keys: set[tuple[int, int]] = set()
    for ev in windowed_events(trace):
        if isinstance(ev, CodeFetch):
            total_cf += 1
            cf_pages.add(ev.gpn)
        elif isinstance(ev, DataAccess):
            total_da += 1
            da_pages.add(ev.gpn)
            if ev.lines is not None:
                total_lines += len(ev.lines)
                line_keys.update((ev.gpn, ln) for ln in ev.lines)
        elif isinstance(ev, CiphertextDiff):
            total_ci += 1
            block_keys.add((ev.gpn, ev.block))
    return {
        "total_cf": total_cf,
        "unique_cf": len(cf_pages),
        "total_da": total_da,
        "unique_da": len(da_pages),
        "total_lines": total_lines,
        "unique_lines": len(line_keys),
        "total_ci": total_ci,
        "unique_ci_blocks": len(block_keys),
    }
