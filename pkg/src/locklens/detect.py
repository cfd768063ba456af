"""Contention-pair detection.

Two critical sections guarded by the same lock whose exclusion never affects
the program's outcome form an unnecessary lock contention pair (ULCP). Pairs
are classified by comparing section access sets:

    NULL_LOCK       either section touches no shared state at all
    READ_READ       neither section writes
    DISJOINT_WRITE  reads and writes land on disjoint cells
    BENIGN          sets conflict, but re-executing the two sections in
                    either order from the recorded context produces the same
                    memory and the same read values
    TLCP            everything else: the exclusion is load-bearing

Reads of cells no write ever touches anywhere in the trace ("constant
reads") are ignored for classification: a section that only polls such a
flag idles under its lock. The benign re-execution check runs on the raw
events, so a conflict can never be masked by that filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NotReexecutableError
from .engine import capture_context, eval_valexpr
from .model import CriticalSection, Trace, extract_critical_sections

__all__ = [
    "ULCP_CATEGORIES",
    "UlcpPair",
    "DetectResult",
    "Classifier",
    "classify_pair",
    "benign_check",
    "detect_all",
]

ULCP_CATEGORIES = ("NULL_LOCK", "READ_READ", "DISJOINT_WRITE", "BENIGN")


def classify_pair(c1: CriticalSection, c2: CriticalSection) -> str:
    """Set-based classification; returns a category or "FALSE" when only the
    re-execution check can decide (caller resolves FALSE to BENIGN/TLCP)."""
    if (not c1.s_rd and not c1.s_wr) or (not c2.s_rd and not c2.s_wr):
        return "NULL_LOCK"
    if not c1.s_wr and not c2.s_wr:
        return "READ_READ"
    if (not (c1.s_rd & c2.s_wr) and not (c1.s_wr & c2.s_rd)
            and not (c1.s_wr & c2.s_wr)):
        return "DISJOINT_WRITE"
    return "FALSE"


def _run_section(trace: Trace, cs: CriticalSection, memory: dict, regs: dict) -> list[int]:
    """Interpret one section's events against the given memory/registers,
    returning the sequence of values its reads observe."""
    reads: list[int] = []
    lo, hi = cs.span
    for e in trace.threads[cs.tid][lo:hi + 1]:
        if e.kind == "READ":
            val = memory.get(e.addr, 0)
            regs[e.reg] = val
            reads.append(val)
        elif e.kind == "WRITE":
            if e.valexpr is None:
                raise NotReexecutableError(
                    f"section {cs.id}: write to {e.addr!r} at seq {e.seq} carries no "
                    "value expression; cannot re-execute in isolation")
            memory[e.addr] = eval_valexpr(e.valexpr, regs)
    return reads


def benign_check(trace: Trace, c1: CriticalSection, c2: CriticalSection,
                 snapshots: dict[int, tuple[dict, dict]]) -> bool:
    """Re-execute the two sections in recorded order and in reversed order,
    each time from the memory state at the earlier section's start and each
    section's own recorded register state. The pair is benign iff both orders
    produce identical memory and identical per-section read values. Other
    threads stay frozen, which is exactly the isolation the lock provided."""
    first, second = (c1, c2) if c1.acq_ord <= c2.acq_ord else (c2, c1)
    base_mem, _ = snapshots[first.id]
    regs1_snap = snapshots[c1.id][1]
    regs2_snap = snapshots[c2.id][1]

    mem_f = dict(base_mem)
    reads1_f = _run_section(trace, c1, mem_f, dict(regs1_snap))
    reads2_f = _run_section(trace, c2, mem_f, dict(regs2_snap))

    mem_r = dict(base_mem)
    reads2_r = _run_section(trace, c2, mem_r, dict(regs2_snap))
    reads1_r = _run_section(trace, c1, mem_r, dict(regs1_snap))

    return mem_f == mem_r and reads1_f == reads1_r and reads2_f == reads2_r


class Classifier:
    """Caches filtered access sets, the snapshot-producing replay, and pair
    verdicts so detection and topology construction share one context."""

    def __init__(self, trace: Trace, sections: list[CriticalSection] | None = None):
        self.trace = trace
        self.sections = sections if sections is not None else extract_critical_sections(trace)
        self.by_id = {cs.id: cs for cs in self.sections}
        written: set[str] = set()
        for tid in trace.tids:
            for e in trace.threads[tid]:
                if e.kind == "WRITE":
                    written.add(e.addr)
        self._filtered = {
            cs.id: CriticalSection(
                id=cs.id, tid=cs.tid, lock=cs.lock, acq_ord=cs.acq_ord,
                site=cs.site, span=cs.span,
                s_rd=cs.s_rd & written, s_wr=cs.s_wr)
            for cs in self.sections
        }
        self._snapshots: dict[int, tuple[dict, dict]] | None = None
        self._cache: dict[tuple[int, int], str] = {}
        self.warnings: list[str] = []

    def filtered(self, sid: int) -> CriticalSection:
        return self._filtered[sid]

    def _context(self) -> dict[int, tuple[dict, dict]]:
        if self._snapshots is None:
            self._snapshots = capture_context(self.trace).snapshots
        return self._snapshots

    def category(self, c1: CriticalSection, c2: CriticalSection) -> str:
        key = (min(c1.id, c2.id), max(c1.id, c2.id))
        if key in self._cache:
            return self._cache[key]
        cat = classify_pair(self.filtered(c1.id), self.filtered(c2.id))
        if cat == "FALSE":
            try:
                cat = "BENIGN" if benign_check(self.trace, c1, c2, self._context()) else "TLCP"
            except NotReexecutableError as exc:
                self.warnings.append(
                    f"sections ({c1.id},{c2.id}) kept as TLCP: {exc.message}")
                cat = "TLCP"
        self._cache[key] = cat
        return cat


@dataclass
class UlcpPair:
    lock: str
    c1: int  # section id, earlier acquisition
    c2: int
    category: str
    sites: tuple[int, int]
    tids: tuple[int, int]
    delta_t: int | None = None

    def to_json(self) -> dict:
        out = {
            "lock": self.lock, "c1": self.c1, "c2": self.c2,
            "category": self.category,
            "sites": list(self.sites), "tids": list(self.tids),
        }
        if self.delta_t is not None:
            out["delta_t"] = self.delta_t
        return out


@dataclass
class DetectResult:
    pairs: list[UlcpPair]
    sections: list[CriticalSection]
    warnings: list[str] = field(default_factory=list)

    @property
    def ulcps(self) -> list[UlcpPair]:
        return [p for p in self.pairs if p.category != "TLCP"]

    def category_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for p in self.pairs:
            counts[p.category] = counts.get(p.category, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "pairs": [p.to_json() for p in self.pairs],
            "ulcp_count": len(self.ulcps),
            "categories": self.category_counts(),
            "warnings": list(self.warnings),
        }


def detect_all(trace: Trace, classifier: Classifier | None = None) -> DetectResult:
    """Classify every adjacent cross-thread pair in each lock's acquisition
    order. Adjacent same-thread acquisitions cannot contend and are skipped.
    Traces recorded without memory visibility get category UNKNOWN."""
    cls = classifier if classifier is not None else Classifier(trace)
    no_memory = "no_memory_events" in trace.capabilities
    by_lock: dict[str, list[CriticalSection]] = {}
    for cs in cls.sections:
        by_lock.setdefault(cs.lock, []).append(cs)
    pairs: list[UlcpPair] = []
    for lock in sorted(by_lock):
        secs = sorted(by_lock[lock], key=lambda c: c.acq_ord)
        for a, b in zip(secs, secs[1:]):
            if a.tid == b.tid:
                continue
            cat = "UNKNOWN" if no_memory else cls.category(a, b)
            pairs.append(UlcpPair(
                lock=lock, c1=a.id, c2=b.id, category=cat,
                sites=(a.site.id, b.site.id), tids=(a.tid, b.tid)))
    return DetectResult(pairs=pairs, sections=cls.sections, warnings=list(cls.warnings))
