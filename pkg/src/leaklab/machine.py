"""Simulated guest machine and the hypervisor-side observation collector.

The machine side is deliberately small: workloads allocate 4kB guest
pages, then execute, read, write and branch against them.  Every such
action appends a compact raw event to the machine's tap.  The collector
replays that tap through a state machine that mimics what a malicious
hypervisor can observe on a memory-encrypted guest:

* page channel  - faults on unmapped code/data pages (the collector keeps
  one code page and a short FIFO of data pages mapped at a time);
* cache channel - which cache lines were touched on a faulted data page
  while it stayed mapped;
* cipher channel - which 16-byte blocks of a written page changed
  ciphertext between mapping and eviction (memory encryption here is
  deterministic per address, so equal plaintext hides, changed plaintext
  shows);
* pmc channel   - five performance counters accumulated between emitted
  events.

The collector is a pure function of (raw tap, policy, seed): identical
inputs give byte-identical traces.
"""

from __future__ import annotations

import hashlib
import random
from contextlib import contextmanager
from dataclasses import dataclass, field

from .trace import (
    BLOCK_BYTES,
    CodeFetch,
    CounterSnapshot,
    CiphertextDiff,
    DataAccess,
    Marker,
    Trace,
)

__all__ = [
    "SimMachine",
    "MachineFault",
    "CollectorError",
    "CollectorPolicy",
    "ciphertext_of",
    "collect",
    "run_collect",
    "PAGE_BYTES",
]

PAGE_BYTES = 4096

# Raw tap event kinds.  Tuples instead of objects: hot workloads emit
# tens of millions of these per dataset.
EXEC = 0    # (EXEC, gpn)
READ = 1    # (READ, gpn, line)
WRITE = 2   # (WRITE, gpn, line, block, old_bytes, new_bytes)
BRANCH = 3  # (BRANCH, taken, is_return)
MARK = 4    # (MARK, "START"|"STOP")
STEP = 5    # (STEP,)


class MachineFault(RuntimeError):
    """A workload accessed memory it does not own."""


class CollectorError(ValueError):
    """The collector policy or the raw tap is unusable."""


@dataclass
class PageAttrs:
    kind: str  # "code" or "data"
    encrypted: bool = True
    reserved: bool = False


class SimMachine:
    """A bag of guest pages plus an event tap.

    ``cipher_seed`` keys the per-address memory encryption;
    ``alloc_seed`` drives page-number assignment so layouts differ
    between runs the way ASLR and allocator state differ between real
    processes.
    """

    def __init__(self, cipher_seed: int = 0, alloc_seed: int = 0):
        self.cipher_seed = cipher_seed
        self._key = b"ctblk" + cipher_seed.to_bytes(8, "little")
        self._alloc_rng = random.Random(alloc_seed)
        self.pages: dict[int, bytearray] = {}
        self.attrs: dict[int, PageAttrs] = {}
        self.tap: list[tuple] = []
        self._tracing = True

    # -- allocation ----------------------------------------------------

    def alloc_page(self, kind: str = "data", *, encrypted: bool = True,
                   reserved: bool = False) -> int:
        """Allocate one fresh zeroed page, returning its guest page number."""
        while True:
            gpn = self._alloc_rng.getrandbits(40)
            if gpn not in self.pages:
                break
        self.pages[gpn] = bytearray(PAGE_BYTES)
        self.attrs[gpn] = PageAttrs(kind=kind, encrypted=encrypted, reserved=reserved)
        return gpn

    def alloc_pages(self, n: int, kind: str = "data", **kw) -> list[int]:
        return [self.alloc_page(kind, **kw) for _ in range(n)]

    # -- tap control ---------------------------------------------------

    def reset_tap(self) -> None:
        self.tap = []

    def set_tracing(self, enabled: bool) -> None:
        """Disable to run workload logic without recording events."""
        self._tracing = enabled

    # -- guest actions -------------------------------------------------

    def exec_page(self, gpn: int) -> None:
        if gpn not in self.pages:
            raise MachineFault(f"execute of unallocated page {gpn:#x}")
        if self._tracing:
            self.tap.append((EXEC, gpn))

    def read(self, gpn: int, offset: int, length: int) -> bytes:
        mem = self.pages.get(gpn)
        if mem is None:
            raise MachineFault(f"read of unallocated page {gpn:#x}")
        end = offset + length
        if offset < 0 or length <= 0 or end > PAGE_BYTES:
            raise MachineFault(
                f"read out of bounds: page {gpn:#x} offset {offset} length {length}"
            )
        if self._tracing:
            tap = self.tap
            for line in range(offset >> 6, (end - 1 >> 6) + 1):
                tap.append((READ, gpn, line))
        return bytes(mem[offset:end])

    def write(self, gpn: int, offset: int, data: bytes) -> None:
        mem = self.pages.get(gpn)
        if mem is None:
            raise MachineFault(f"write of unallocated page {gpn:#x}")
        end = offset + len(data)
        if offset < 0 or not data or end > PAGE_BYTES:
            raise MachineFault(
                f"write out of bounds: page {gpn:#x} offset {offset} "
                f"length {len(data)}"
            )
        if not self._tracing:
            mem[offset:end] = data
            return
        first_b = offset >> 4
        last_b = end - 1 >> 4
        olds = [bytes(mem[b << 4:(b << 4) + BLOCK_BYTES])
                for b in range(first_b, last_b + 1)]
        mem[offset:end] = data
        tap = self.tap
        for b, old in zip(range(first_b, last_b + 1), olds):
            new = bytes(mem[b << 4:(b << 4) + BLOCK_BYTES])
            tap.append((WRITE, gpn, b >> 2, b, old, new))

    def branch(self, taken: bool, is_return: bool = False) -> None:
        if self._tracing:
            self.tap.append((BRANCH, taken, is_return))

    def step(self) -> None:
        """End of one workload step (roughly: one guest instruction retires)."""
        if self._tracing:
            self.tap.append((STEP,))

    def marker_start(self) -> None:
        if self._tracing:
            self.tap.append((MARK, "START"))

    def marker_stop(self) -> None:
        if self._tracing:
            self.tap.append((MARK, "STOP"))

    @contextmanager
    def marked(self):
        self.marker_start()
        try:
            yield
        finally:
            self.marker_stop()


def ciphertext_of(machine: SimMachine, gpn: int, block: int, plaintext: bytes) -> bytes:
    """Deterministic per-address block encryption, 16-byte output.

    Keyed by the machine's cipher seed and tweaked by (page, block), so
    the same plaintext at the same address always encrypts identically
    while any single-bit change anywhere produces an unrelated block.
    """
    if len(plaintext) != BLOCK_BYTES:
        raise ValueError(f"plaintext must be {BLOCK_BYTES} bytes")
    msg = gpn.to_bytes(5, "little") + block.to_bytes(2, "little") + plaintext
    return hashlib.blake2b(msg, digest_size=BLOCK_BYTES, key=machine._key).digest()


@dataclass(frozen=True)
class CollectorPolicy:
    """What the hypervisor-side collector records and how.

    ``data_queue_len`` is how many data pages stay mapped at once (FIFO).
    The queue grows within one workload step if a single step touches
    more pages than it holds, then shrinks back at the step boundary.
    ``drop_prob``/``flip_prob`` model a lossy cache probe; both default
    to 0 (the cache channel is treated as noiseless).
    """

    channels: frozenset[str]
    data_queue_len: int = 4
    skip_unencrypted: bool = True
    skip_reserved: bool = True
    targeted: bool = False
    drop_prob: float = 0.0
    flip_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", frozenset(self.channels))
        valid = {"page", "cache", "cipher", "pmc"}
        if not self.channels:
            raise CollectorError("policy must enable at least one channel")
        unknown = self.channels - valid
        if unknown:
            raise CollectorError(f"unknown channels: {sorted(unknown)}")
        if "cache" in self.channels and "page" not in self.channels:
            raise CollectorError("cache channel requires the page channel")
        if self.data_queue_len < 1:
            raise CollectorError("data_queue_len must be >= 1")
        for name in ("drop_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise CollectorError(f"{name} must be in [0, 1]")

    @classmethod
    def from_json(cls, obj: dict) -> "CollectorPolicy":
        obj = dict(obj)
        noise = obj.pop("cache_noise", {})
        return cls(
            channels=frozenset(obj.pop("channels")),
            drop_prob=noise.get("drop_prob", 0.0),
            flip_prob=noise.get("flip_prob", 0.0),
            **obj,
        )

    def to_json(self) -> dict:
        return {
            "channels": sorted(self.channels),
            "data_queue_len": self.data_queue_len,
            "skip_unencrypted": self.skip_unencrypted,
            "skip_reserved": self.skip_reserved,
            "targeted": self.targeted,
            "cache_noise": {"drop_prob": self.drop_prob, "flip_prob": self.flip_prob},
            "rng_seed": self.rng_seed,
        }


class _PageWindow:
    """Per-mapped-data-page state between fault and eviction."""

    __slots__ = ("gpn", "lines", "baseline", "current", "ma")

    def __init__(self, gpn: int, ma: list):
        self.gpn = gpn
        self.lines: set[int] = set()
        self.baseline: dict[int, bytes] = {}
        self.current: dict[int, bytes] = {}
        self.ma = ma  # mutable ["MA", gpn, lines] placeholder in the out list


def collect(machine: SimMachine, tap: list[tuple], policy: CollectorPolicy,
            trace_seed: int | None = None) -> Trace:
    """Replay a raw tap through the collector state machine.

    All four channels are tracked unconditionally and filtered at the
    end, so disabling one channel can never change what the others see.
    """
    rng = random.Random(policy.rng_seed)
    attrs = machine.attrs
    skip_unenc = policy.skip_unencrypted
    skip_res = policy.skip_reserved

    out: list = []  # TraceEvent | mutable MA placeholder
    mapped_code: int | None = None
    queue: list[_PageWindow] = []
    by_gpn: dict[int, _PageWindow] = {}
    step_touched: set[int] = set()
    cap = policy.data_queue_len
    marker_depth = 0

    # counters: instructions, uops, branches, taken, returns
    c_ins = c_uop = c_br = c_tk = c_rt = 0

    def emit_counters():
        nonlocal c_ins, c_uop, c_br, c_tk, c_rt
        out.append(CounterSnapshot((c_ins, c_uop, c_br, c_tk, c_rt)))
        c_ins = c_uop = c_br = c_tk = c_rt = 0

    def finalize(win: _PageWindow):
        # attach the line set observed while mapped, through the noise model
        lines = win.lines
        if policy.drop_prob or policy.flip_prob:
            noisy = set()
            for ln in sorted(lines):
                if policy.drop_prob and rng.random() < policy.drop_prob:
                    continue
                if policy.flip_prob and rng.random() < policy.flip_prob:
                    ln = rng.randrange(64)
                noisy.add(ln)
            lines = noisy
        win.ma[2] = frozenset(lines)
        # diff every block written while mapped against its value at fault
        diffs = []
        for block, base in win.baseline.items():
            cur = win.current[block]
            if cur != base:
                diffs.append((block, base, cur))
        gpn = win.gpn
        for block, base, cur in sorted(diffs):
            out.append(CiphertextDiff(
                gpn, block,
                ciphertext_of(machine, gpn, block, base),
                ciphertext_of(machine, gpn, block, cur),
            ))

    def evict_front():
        win = queue.pop(0)
        del by_gpn[win.gpn]
        finalize(win)

    def flush_all():
        while queue:
            evict_front()

    def fault(gpn: int):
        # FIFO eviction, but never evict a page touched in the current
        # step: a single step needs all its pages mapped at once, so the
        # queue grows instead and shrinks back at the step boundary.
        if len(queue) >= cap and queue[0].gpn not in step_touched:
            evict_front()
        ma = ["MA", gpn, None]
        win = _PageWindow(gpn, ma)
        queue.append(win)
        by_gpn[gpn] = win
        out.append(ma)
        emit_counters()

    for ev in tap:
        kind = ev[0]
        if kind == READ or kind == WRITE:
            gpn = ev[1]
            pa = attrs[gpn]
            c_ins += 1
            c_uop += 2
            if (skip_unenc and not pa.encrypted) or (skip_res and pa.reserved):
                continue
            win = by_gpn.get(gpn)
            if win is None:
                fault(gpn)
                win = by_gpn[gpn]
            step_touched.add(gpn)
            win.lines.add(ev[2])
            if kind == WRITE:
                block = ev[3]
                if block not in win.baseline:
                    win.baseline[block] = ev[4]
                win.current[block] = ev[5]
        elif kind == EXEC:
            gpn = ev[1]
            pa = attrs[gpn]
            c_ins += 1
            c_uop += 1
            if (skip_unenc and not pa.encrypted) or (skip_res and pa.reserved):
                continue
            if gpn != mapped_code:
                mapped_code = gpn
                out.append(CodeFetch(gpn))
                emit_counters()
        elif kind == BRANCH:
            c_ins += 1
            c_uop += 1
            c_br += 1
            if ev[1]:
                c_tk += 1
            if ev[2]:
                c_rt += 1
        elif kind == STEP:
            step_touched.clear()
            while len(queue) > cap:
                evict_front()
        elif kind == MARK:
            mk = ev[1]
            marker_depth += 1 if mk == "START" else -1
            if marker_depth not in (0, 1):
                raise CollectorError("unbalanced markers in workload")
            # a marker visit flushes hypervisor tracking state: pending
            # observations are read out and all mappings dropped
            flush_all()
            step_touched.clear()
            mapped_code = None
            out.append(Marker(mk))
        else:  # pragma: no cover - tap kinds are closed
            raise CollectorError(f"unknown tap event kind: {kind}")

    if marker_depth != 0:
        raise CollectorError("unbalanced markers in workload")
    flush_all()

    # freeze MA placeholders
    events: list = []
    for item in out:
        if type(item) is list:
            events.append(DataAccess(item[1], item[2]))
        else:
            events.append(item)

    # targeted collection keeps only marker-windowed events
    if policy.targeted:
        kept = []
        inside = False
        for ev2 in events:
            if isinstance(ev2, Marker):
                inside = ev2.kind == "START"
                kept.append(ev2)
            elif inside:
                kept.append(ev2)
        events = kept

    # channel filtering, applied last so channels cannot interact
    chans = policy.channels
    filtered: list = []
    for ev2 in events:
        if isinstance(ev2, DataAccess):
            if "page" not in chans:
                continue
            filtered.append(ev2 if "cache" in chans else DataAccess(ev2.gpn, None))
        elif isinstance(ev2, CodeFetch):
            if "page" in chans:
                filtered.append(ev2)
        elif isinstance(ev2, CiphertextDiff):
            if "cipher" in chans:
                filtered.append(ev2)
        elif isinstance(ev2, CounterSnapshot):
            if "pmc" in chans:
                filtered.append(ev2)
        else:
            filtered.append(ev2)

    seed = policy.rng_seed if trace_seed is None else trace_seed
    return Trace(seed=seed, channels=chans, events=tuple(filtered))


def run_collect(machine: SimMachine, workload, policy: CollectorPolicy,
                trace_seed: int | None = None):
    """Run ``workload(machine)`` and collect its trace.

    Returns ``(trace, workload_output)``.
    """
    machine.reset_tap()
    output = workload(machine)
    trace = collect(machine, machine.tap, policy, trace_seed)
    return trace, output
