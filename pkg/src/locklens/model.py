"""Trace model: event records, JSONL parse/serialize, critical sections.

A trace is JSON-lines. The first line is a header ``{"v": 1}`` which may
additionally carry ``transform`` metadata (section table + ordering
constraints, written by the transformer) and a ``capabilities`` list (used by
external recorders that cannot observe memory). Every following line is one
event record.

Canonical serialization writes keys in a fixed order with compact separators
and always includes ``cost`` explicitly, so traces are byte-stable and can be
diffed / hashed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import (
    MalformedRecordError,
    MarkerNotFoundError,
    TraceInvariantError,
    UnbalancedSliceError,
)

__all__ = [
    "KINDS",
    "Site",
    "TraceEvent",
    "SectionMeta",
    "TransformMeta",
    "Trace",
    "CriticalSection",
    "parse_trace",
    "serialize_trace",
    "extract_critical_sections",
    "slice_trace",
    "AUX_PREFIX",
]

KINDS = (
    "THREAD_START",
    "THREAD_END",
    "LOCK_ACQ",
    "LOCK_REL",
    "READ",
    "WRITE",
    "COMPUTE",
    "MARKER",
)

# Locks whose name starts with this prefix are auxiliary locks introduced by
# the transformer; they never appear in recorded traces.
AUX_PREFIX = "@L"

# Default virtual-time cost per kind when a record omits "cost".
DEFAULT_COST = {"READ": 1, "WRITE": 1}

_FIELD_ORDER = ("tid", "seq", "kind", "lock", "acq_ord", "site", "addr", "reg", "valexpr", "cost")

_VALEXPR_OPS = ("copy", "add", "sub")


class Site(NamedTuple):
    """Static program location of a lock statement: id plus a [lo, hi] span."""

    id: int
    lo: int
    hi: int


@dataclass
class TraceEvent:
    tid: int
    seq: int
    kind: str
    lock: str | None = None
    acq_ord: int | None = None
    site: Site | None = None
    addr: str | None = None
    reg: str | None = None
    valexpr: tuple | None = None  # ("const", k) | (op, a, b); a/b reg name or int
    cost: int = 0

    def to_record(self) -> dict:
        rec: dict = {"tid": self.tid, "seq": self.seq, "kind": self.kind}
        if self.lock is not None:
            rec["lock"] = self.lock
        if self.acq_ord is not None:
            rec["acq_ord"] = self.acq_ord
        if self.site is not None:
            rec["site"] = {"id": self.site.id, "lo": self.site.lo, "hi": self.site.hi}
        if self.addr is not None:
            rec["addr"] = self.addr
        if self.reg is not None:
            rec["reg"] = self.reg
        if self.valexpr is not None:
            rec["valexpr"] = _valexpr_to_json(self.valexpr)
        rec["cost"] = self.cost
        return rec


def _valexpr_to_json(vx: tuple) -> dict:
    if vx[0] == "const":
        return {"const": vx[1]}
    op, a, b = vx
    out = {"op": op, "a": a}
    if op != "copy":
        out["b"] = b
    return out


def _valexpr_from_json(obj, where: str) -> tuple:
    if not isinstance(obj, dict):
        raise MalformedRecordError(f"{where}: valexpr must be an object")
    if set(obj) == {"const"}:
        k = obj["const"]
        if not isinstance(k, int) or isinstance(k, bool):
            raise MalformedRecordError(f"{where}: valexpr const must be an int")
        return ("const", k)
    if "op" not in obj:
        raise MalformedRecordError(f"{where}: valexpr needs 'const' or 'op'")
    op = obj["op"]
    if op not in _VALEXPR_OPS:
        raise MalformedRecordError(f"{where}: unknown valexpr op {op!r}")
    allowed = {"op", "a"} if op == "copy" else {"op", "a", "b"}
    if set(obj) != allowed:
        raise MalformedRecordError(f"{where}: valexpr fields must be {sorted(allowed)}")

    def operand(v):
        if isinstance(v, bool) or not isinstance(v, (int, str)):
            raise MalformedRecordError(f"{where}: valexpr operand must be reg name or int")
        return v

    a = operand(obj["a"])
    b = operand(obj["b"]) if op != "copy" else None
    return (op, a, b)


@dataclass
class SectionMeta:
    """One row of a transformed trace's section table.

    ``start``/``end`` index into the owning thread's event list, half-open,
    covering the section's emitted events (auxiliary acquire/release bundle
    plus the original interior). A removed section has an empty lockset and
    its span covers just the interior.
    """

    id: int
    tid: int
    lock: str
    site: Site
    acq_ord: int
    start: int
    end: int
    lockset: list[str] = field(default_factory=list)
    guards: dict[str, int] = field(default_factory=dict)  # aux lock -> source section id
    removed: bool = False

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "tid": self.tid,
            "lock": self.lock,
            "site": {"id": self.site.id, "lo": self.site.lo, "hi": self.site.hi},
            "acq_ord": self.acq_ord,
            "start": self.start,
            "end": self.end,
            "lockset": list(self.lockset),
            "guards": dict(self.guards),
            "removed": self.removed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SectionMeta":
        try:
            site = Site(obj["site"]["id"], obj["site"]["lo"], obj["site"]["hi"])
            return cls(
                id=obj["id"],
                tid=obj["tid"],
                lock=obj["lock"],
                site=site,
                acq_ord=obj["acq_ord"],
                start=obj["start"],
                end=obj["end"],
                lockset=list(obj["lockset"]),
                guards={str(k): int(v) for k, v in obj["guards"].items()},
                removed=bool(obj["removed"]),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedRecordError(f"header: bad section table entry: {exc}") from exc


@dataclass
class TransformMeta:
    sections: list[SectionMeta]
    # per original lock: section ids in the completion order they must realize
    constraints: dict[str, list[int]]

    def to_json(self) -> dict:
        return {
            "sections": [s.to_json() for s in self.sections],
            "constraints": {k: list(v) for k, v in self.constraints.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TransformMeta":
        if not isinstance(obj, dict) or set(obj) - {"sections", "constraints"}:
            raise MalformedRecordError("header: malformed transform metadata")
        sections = [SectionMeta.from_json(s) for s in obj.get("sections", [])]
        constraints = {
            str(k): [int(i) for i in v] for k, v in obj.get("constraints", {}).items()
        }
        return cls(sections=sections, constraints=constraints)


@dataclass
class Trace:
    threads: dict[int, list[TraceEvent]]
    version: int = 1
    transform: TransformMeta | None = None
    capabilities: list[str] = field(default_factory=list)
    # initial shared-memory image; replays must start from the recorded state
    initial_memory: dict[str, int] = field(default_factory=dict)

    @property
    def tids(self) -> list[int]:
        return sorted(self.threads)

    def events(self) -> Iterable[TraceEvent]:
        for tid in self.tids:
            yield from self.threads[tid]

    def locks(self) -> list[str]:
        return sorted({e.lock for e in self.events() if e.kind == "LOCK_ACQ"})

    def aux_locks(self) -> list[str]:
        return [l for l in self.locks() if l.startswith(AUX_PREFIX)]

    def lock_orders(self) -> dict[str, list[tuple[int, int]]]:
        """Per lock: (tid, seq) of each LOCK_ACQ, sorted by recorded acq_ord."""
        by_lock: dict[str, list[TraceEvent]] = {}
        for e in self.events():
            if e.kind == "LOCK_ACQ":
                by_lock.setdefault(e.lock, []).append(e)
        return {
            lock: [(e.tid, e.seq) for e in sorted(evs, key=lambda e: e.acq_ord)]
            for lock, evs in by_lock.items()
        }


def _require(cond: bool, msg: str):
    if not cond:
        raise MalformedRecordError(msg)


def _parse_record(obj: dict, where: str) -> TraceEvent:
    _require(isinstance(obj, dict), f"{where}: record must be a JSON object")
    unknown = set(obj) - set(_FIELD_ORDER)
    _require(not unknown, f"{where}: unknown fields {sorted(unknown)}")
    for f in ("tid", "seq", "kind"):
        _require(f in obj, f"{where}: missing required field '{f}'")

    def intf(name, required=False):
        if name not in obj:
            _require(not required, f"{where}: missing field '{name}'")
            return None
        v = obj[name]
        _require(isinstance(v, int) and not isinstance(v, bool), f"{where}: '{name}' must be an int")
        return v

    def strf(name, required=False):
        if name not in obj:
            _require(not required, f"{where}: missing field '{name}'")
            return None
        v = obj[name]
        _require(isinstance(v, str), f"{where}: '{name}' must be a string")
        return v

    tid = intf("tid", required=True)
    seq = intf("seq", required=True)
    kind = obj["kind"]
    _require(kind in KINDS, f"{where}: unknown kind {kind!r}")

    site = None
    if "site" in obj:
        s = obj["site"]
        _require(
            isinstance(s, dict) and set(s) == {"id", "lo", "hi"}
            and all(isinstance(s[k], int) and not isinstance(s[k], bool) for k in ("id", "lo", "hi")),
            f"{where}: 'site' must be an object with int id/lo/hi",
        )
        site = Site(s["id"], s["lo"], s["hi"])

    valexpr = _valexpr_from_json(obj["valexpr"], where) if "valexpr" in obj else None
    ev = TraceEvent(
        tid=tid,
        seq=seq,
        kind=kind,
        lock=strf("lock"),
        acq_ord=intf("acq_ord"),
        site=site,
        addr=strf("addr"),
        reg=strf("reg"),
        valexpr=valexpr,
        cost=obj.get("cost", DEFAULT_COST.get(kind, 0)),
    )
    _require(isinstance(ev.cost, int) and not isinstance(ev.cost, bool) and ev.cost >= 0,
             f"{where}: 'cost' must be a non-negative int")

    # per-kind field presence
    need: set[str]
    if kind in ("THREAD_START", "THREAD_END"):
        need = set()
    elif kind == "LOCK_ACQ":
        need = {"lock", "acq_ord", "site"}
    elif kind == "LOCK_REL":
        need = {"lock"}
    elif kind == "READ":
        need = {"addr", "reg"}
    elif kind == "WRITE":
        need = {"addr"}  # valexpr optional: external recorders may not capture it
    elif kind == "COMPUTE":
        need = set()
    else:  # MARKER — the marker's name rides in 'addr'
        need = {"addr"}
    present = {k for k in ("lock", "acq_ord", "site", "addr", "reg", "valexpr") if obj.get(k) is not None}
    _require(need <= present, f"{where}: kind {kind} requires fields {sorted(need)}")
    allowed = need | ({"valexpr"} if kind == "WRITE" else set())
    extra = present - allowed
    _require(not extra, f"{where}: kind {kind} does not take fields {sorted(extra)}")
    return ev


def validate_trace(trace: Trace) -> None:
    """Whole-trace structural invariants; raises TraceInvariantError."""
    acq_by_lock: dict[str, list[TraceEvent]] = {}
    for tid in trace.tids:
        evs = trace.threads[tid]
        if not evs:
            raise TraceInvariantError(f"thread {tid} has no events")
        for i, e in enumerate(evs):
            if e.tid != tid:
                raise TraceInvariantError(f"thread {tid}: event with tid {e.tid}")
            if e.seq != i:
                raise TraceInvariantError(
                    f"thread {tid}: seq not contiguous at position {i} (got {e.seq})")
        if evs[0].kind != "THREAD_START" or evs[-1].kind != "THREAD_END":
            raise TraceInvariantError(
                f"thread {tid} must start with THREAD_START and end with THREAD_END")
        for e in evs[1:-1]:
            if e.kind in ("THREAD_START", "THREAD_END"):
                raise TraceInvariantError(f"thread {tid}: stray {e.kind} at seq {e.seq}")
        stack: list[str] = []
        per_lock_last_ord: dict[str, int] = {}
        for e in evs:
            if e.kind == "LOCK_ACQ":
                stack.append(e.lock)
                acq_by_lock.setdefault(e.lock, []).append(e)
                last = per_lock_last_ord.get(e.lock)
                if last is not None and e.acq_ord <= last:
                    raise TraceInvariantError(
                        f"thread {tid}: acq_ord of lock {e.lock} not increasing in program order")
                per_lock_last_ord[e.lock] = e.acq_ord
            elif e.kind == "LOCK_REL":
                if not stack or stack[-1] != e.lock:
                    raise TraceInvariantError(
                        f"thread {tid}: LOCK_REL of {e.lock} at seq {e.seq} does not match "
                        f"innermost held lock {stack[-1] if stack else None}")
                stack.pop()
        if stack:
            raise TraceInvariantError(f"thread {tid} ends still holding {stack}")
    for lock, acqs in acq_by_lock.items():
        orders = sorted(e.acq_ord for e in acqs)
        if orders != list(range(len(acqs))):
            raise TraceInvariantError(
                f"lock {lock}: acq_ord values {orders} are not a permutation of 0..{len(acqs) - 1}")


def parse_trace(text: str) -> Trace:
    lines = text.splitlines()
    if not lines:
        raise MalformedRecordError("empty trace: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"line 1: header is not valid JSON: {exc}") from exc
    _require(isinstance(header, dict), "line 1: header must be a JSON object")
    _require(header.get("v") == 1, f"line 1: unsupported trace version {header.get('v')!r}")
    extra = set(header) - {"v", "transform", "capabilities", "source", "memory"}
    _require(not extra, f"line 1: unknown header fields {sorted(extra)}")
    transform = TransformMeta.from_json(header["transform"]) if "transform" in header else None
    capabilities = header.get("capabilities", [])
    _require(
        isinstance(capabilities, list) and all(isinstance(c, str) for c in capabilities),
        "line 1: 'capabilities' must be a list of strings")
    initial_memory = header.get("memory", {})
    _require(
        isinstance(initial_memory, dict)
        and all(isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
                for k, v in initial_memory.items()),
        "line 1: 'memory' must map cell names to ints")

    threads: dict[int, list[TraceEvent]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(f"{where}: invalid JSON: {exc}") from exc
        ev = _parse_record(obj, where)
        threads.setdefault(ev.tid, []).append(ev)

    # order-preserving per thread; cross-thread interleaving is not semantic
    for tid in threads:
        threads[tid].sort(key=lambda e: e.seq)
    trace = Trace(threads=threads, transform=transform, capabilities=list(capabilities),
                  initial_memory=dict(initial_memory))
    validate_trace(trace)
    return trace


def serialize_trace(trace: Trace) -> str:
    header: dict = {"v": trace.version}
    if trace.initial_memory:
        header["memory"] = {k: trace.initial_memory[k] for k in sorted(trace.initial_memory)}
    if trace.transform is not None:
        header["transform"] = trace.transform.to_json()
    if trace.capabilities:
        header["capabilities"] = list(trace.capabilities)
    out = [json.dumps(header, separators=(",", ":"))]
    for tid in trace.tids:
        for ev in trace.threads[tid]:
            out.append(json.dumps(ev.to_record(), separators=(",", ":")))
    return "\n".join(out) + "\n"


@dataclass
class CriticalSection:
    id: int
    tid: int
    lock: str
    acq_ord: int
    site: Site
    span: tuple[int, int]  # (seq of LOCK_ACQ, seq of LOCK_REL), inclusive
    s_rd: frozenset[str]
    s_wr: frozenset[str]

    @property
    def start_seq(self) -> int:
        return self.span[0]

    @property
    def end_seq(self) -> int:
        return self.span[1]


def extract_critical_sections(trace: Trace) -> list[CriticalSection]:
    """All lock-delimited sections, nested ones included.

    Access sets are raw: every address read/written anywhere inside the span
    (so an outer section shadows its inner sections' accesses). Sections are
    ordered by (tid, start_seq) and ids are their positions in that order.
    """
    found: list[tuple[int, str, int, Site, int, int]] = []
    for tid in trace.tids:
        evs = trace.threads[tid]
        stack: list[TraceEvent] = []
        for e in evs:
            if e.kind == "LOCK_ACQ":
                stack.append(e)
            elif e.kind == "LOCK_REL":
                acq = stack.pop()
                found.append((tid, acq.lock, acq.acq_ord, acq.site, acq.seq, e.seq))
    found.sort(key=lambda t: (t[0], t[4]))
    sections = []
    for sid, (tid, lock, acq_ord, site, lo, hi) in enumerate(found):
        rd, wr = set(), set()
        for e in trace.threads[tid][lo:hi + 1]:
            if e.kind == "READ":
                rd.add(e.addr)
            elif e.kind == "WRITE":
                wr.add(e.addr)
        sections.append(CriticalSection(
            id=sid, tid=tid, lock=lock, acq_ord=acq_ord, site=site,
            span=(lo, hi), s_rd=frozenset(rd), s_wr=frozenset(wr)))
    return sections


def slice_trace(trace: Trace, from_marker: str, to_marker: str) -> Trace:
    """New trace containing, per thread, the events strictly between the two
    named markers. Threads containing neither marker are dropped; a thread
    with only one of the two is an error. Critical sections must not straddle
    a slice boundary. seq and acq_ord are renumbered; relative orders kept.
    """
    kept: dict[int, list[TraceEvent]] = {}
    for tid in trace.tids:
        evs = trace.threads[tid]
        pos = {}
        for e in evs:
            if e.kind == "MARKER" and e.addr in (from_marker, to_marker):
                # first occurrence of each name wins
                pos.setdefault(e.addr, e.seq)
        if not pos:
            continue
        if from_marker not in pos or to_marker not in pos:
            missing = from_marker if from_marker not in pos else to_marker
            raise MarkerNotFoundError(
                f"thread {tid} has one slice marker but not {missing!r}")
        lo, hi = pos[from_marker], pos[to_marker]
        if lo >= hi:
            raise MarkerNotFoundError(
                f"thread {tid}: marker {from_marker!r} does not precede {to_marker!r}")
        held_at_lo = 0
        for e in evs[:lo]:
            held_at_lo += (e.kind == "LOCK_ACQ") - (e.kind == "LOCK_REL")
        if held_at_lo:
            raise UnbalancedSliceError(
                f"thread {tid}: slice start is inside a critical section")
        depth = 0
        body = []
        for e in evs[lo + 1:hi]:
            if e.kind == "LOCK_ACQ":
                depth += 1
            elif e.kind == "LOCK_REL":
                depth -= 1
                if depth < 0:
                    raise UnbalancedSliceError(
                        f"thread {tid}: slice releases a lock acquired before {from_marker!r}")
            body.append(e)
        if depth != 0:
            raise UnbalancedSliceError(
                f"thread {tid}: slice ends inside a critical section")
        kept[tid] = body
    if not kept:
        raise MarkerNotFoundError(
            f"no thread contains both markers {from_marker!r} and {to_marker!r}")

    # renumber acq_ord per lock, preserving recorded relative order
    acqs: dict[str, list[TraceEvent]] = {}
    for body in kept.values():
        for e in body:
            if e.kind == "LOCK_ACQ":
                acqs.setdefault(e.lock, []).append(e)
    new_ord: dict[tuple[int, int], int] = {}
    for lock, evs in acqs.items():
        for i, e in enumerate(sorted(evs, key=lambda e: e.acq_ord)):
            new_ord[(e.tid, e.seq)] = i

    threads: dict[int, list[TraceEvent]] = {}
    for tid, body in kept.items():
        out = [TraceEvent(tid=tid, seq=0, kind="THREAD_START")]
        for e in body:
            ne = TraceEvent(
                tid=tid, seq=len(out), kind=e.kind, lock=e.lock,
                acq_ord=new_ord.get((e.tid, e.seq)) if e.kind == "LOCK_ACQ" else None,
                site=e.site, addr=e.addr, reg=e.reg, valexpr=e.valexpr, cost=e.cost)
            out.append(ne)
        out.append(TraceEvent(tid=tid, seq=len(out), kind="THREAD_END"))
        threads[tid] = out
    sliced = Trace(threads=threads, capabilities=list(trace.capabilities),
                   initial_memory=dict(trace.initial_memory))
    validate_trace(sliced)
    return sliced
