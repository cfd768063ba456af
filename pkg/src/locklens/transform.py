"""Trace transformation: replace each original lock with the smallest set of
auxiliary locks that still serializes the truly conflicting sections.

Steps:

1. Topology. Scanning each lock's sections in acquisition order, every
   section gets a directed edge to the *first* truly-contending section of
   each other thread further along the order (unnecessary pairs along the way
   are skipped, the scan keeps going). Sections with no incident edge are
   standalone.

2. Ordering. For each original lock, the sections that ended up on edges keep
   their recorded acquisition order as a completion-order constraint: a
   constrained section may finish only after its predecessor finished. Their
   starts may overlap; nothing else about the schedule is pinned.

3. Locksets. Every edge source gets a fresh auxiliary lock which it holds and
   every edge target inherits. A section's lockset is its own auxiliary lock
   (if it is a source) plus every inherited one. Standalone sections carry an
   empty lockset and drop their lock entirely. Two sections can still exclude
   each other exactly when their locksets intersect.

4. Dynamic pruning. Each inherited lock is guarded by its source section:
   once the source has completed, acquiring that lock proves nothing, so the
   replay engine drops it from the lockset at acquisition time (on by
   default; switchable off to measure the saved acquisitions).

The emitted trace embeds a section table (ids match the original trace's
section extraction) plus the completion constraints, so replays of original
and transformed traces line up section by section.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .detect import Classifier, DetectResult, detect_all
from .errors import CyclicConstraintError
from .engine import ReplayResult
from .model import (
    AUX_PREFIX,
    CriticalSection,
    SectionMeta,
    Trace,
    TraceEvent,
    TransformMeta,
    extract_critical_sections,
    validate_trace,
)

__all__ = [
    "Topology",
    "LocksetPlan",
    "build_topology",
    "pin_partial_order",
    "assign_locksets",
    "emit_ulcp_free_trace",
    "transform_trace",
    "RaceReport",
    "check_transform_races",
]


@dataclass
class Topology:
    nodes: list[int]  # all section ids
    edges: list[tuple[int, int]]  # (src sid, dst sid), src earlier in acq order
    standalone: set[int]
    partial_orders: dict[str, list[int]] = field(default_factory=dict)
    pair_categories: dict[tuple[int, int], str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in self.edges],
            "standalone": sorted(self.standalone),
            "partial_orders": {k: list(v) for k, v in self.partial_orders.items()},
        }


@dataclass
class LocksetPlan:
    out_lock: dict[int, str]  # edge-source sid -> fresh auxiliary lock
    locksets: dict[int, list[str]]  # sid -> locks to acquire, in acquisition order
    guards: dict[int, dict[str, int]]  # sid -> {inherited lock: source sid}

    def to_json(self) -> dict:
        return {
            "out_lock": {str(k): v for k, v in self.out_lock.items()},
            "locksets": {str(k): list(v) for k, v in self.locksets.items()},
            "guards": {str(k): dict(v) for k, v in self.guards.items()},
        }


def build_topology(trace: Trace, classifier: Classifier | None = None) -> Topology:
    cls = classifier if classifier is not None else Classifier(trace)
    by_lock: dict[str, list[CriticalSection]] = {}
    for cs in cls.sections:
        by_lock.setdefault(cs.lock, []).append(cs)
    edges: list[tuple[int, int]] = []
    categories: dict[tuple[int, int], str] = {}
    for lock in sorted(by_lock):
        secs = sorted(by_lock[lock], key=lambda c: c.acq_ord)
        for i, c in enumerate(secs):
            seen_tids: set[int] = set()
            for c2 in secs[i + 1:]:
                if c2.tid == c.tid or c2.tid in seen_tids:
                    continue
                cat = cls.category(c, c2)
                categories[(c.id, c2.id)] = cat
                if cat == "TLCP":
                    edges.append((c.id, c2.id))
                    seen_tids.add(c2.tid)
    touched = {s for e in edges for s in e}
    nodes = [cs.id for cs in cls.sections]
    topo = Topology(
        nodes=nodes,
        edges=edges,
        standalone={sid for sid in nodes if sid not in touched},
        pair_categories=categories,
    )
    topo.partial_orders = pin_partial_order(topo, cls)
    return topo


def pin_partial_order(topo: Topology, classifier: Classifier) -> dict[str, list[int]]:
    """Completion-order constraints: per original lock, the edge-touched
    sections in recorded acquisition order."""
    touched = {s for e in topo.edges for s in e}
    orders: dict[str, list[int]] = {}
    for sid in topo.nodes:
        cs = classifier.by_id[sid]
        if sid in touched:
            orders.setdefault(cs.lock, []).append(sid)
    for lock, ids in orders.items():
        ids.sort(key=lambda sid: classifier.by_id[sid].acq_ord)
        ords = [classifier.by_id[s].acq_ord for s in ids]
        if ords != sorted(set(ords)):
            raise CyclicConstraintError(
                f"lock {lock}: acquisition order is not a total order over {ids}")
    return orders


def _aux_name(sid: int) -> str:
    return f"{AUX_PREFIX}{sid}"


def _aux_sort_key(name: str) -> int:
    return int(name[len(AUX_PREFIX):])


def assign_locksets(topo: Topology) -> LocksetPlan:
    out_lock = {src: _aux_name(src) for src, _ in topo.edges}
    locksets: dict[int, list[str]] = {sid: [] for sid in topo.nodes}
    guards: dict[int, dict[str, int]] = {sid: {} for sid in topo.nodes}
    for src in out_lock:
        locksets[src].append(out_lock[src])
    for src, dst in topo.edges:
        lock = out_lock[src]
        if lock not in locksets[dst]:
            locksets[dst].append(lock)
            guards[dst][lock] = src
    for sid in locksets:
        # one global acquisition order prevents deadlock between bundles
        locksets[sid] = sorted(set(locksets[sid]), key=_aux_sort_key)
    return LocksetPlan(out_lock=out_lock, locksets=locksets, guards=guards)


def emit_ulcp_free_trace(trace: Trace, topo: Topology, plan: LocksetPlan,
                         classifier: Classifier | None = None) -> Trace:
    cls = classifier if classifier is not None else Classifier(trace)
    sections = cls.sections
    by_acq_pos = {(cs.tid, cs.span[0]): cs for cs in sections}

    # per auxiliary lock: acquirers ranked by their original acquisition order
    aux_rank: dict[str, dict[int, int]] = {}
    acquirers: dict[str, list[int]] = {}
    for sid, ls in plan.locksets.items():
        for lock in ls:
            acquirers.setdefault(lock, []).append(sid)
    for lock, sids in acquirers.items():
        sids.sort(key=lambda sid: cls.by_id[sid].acq_ord)
        aux_rank[lock] = {sid: i for i, sid in enumerate(sids)}

    threads: dict[int, list[TraceEvent]] = {}
    span_map: dict[int, tuple[int, int]] = {}  # sid -> new [start, end)
    for tid in trace.tids:
        out: list[TraceEvent] = []
        open_stack: list[tuple[CriticalSection, int]] = []
        for e in trace.threads[tid]:
            if e.kind == "LOCK_ACQ":
                cs = by_acq_pos[(tid, e.seq)]
                open_stack.append((cs, len(out)))
                for lock in plan.locksets[cs.id]:
                    out.append(TraceEvent(
                        tid=tid, seq=len(out), kind="LOCK_ACQ", lock=lock,
                        acq_ord=aux_rank[lock][cs.id], site=cs.site))
            elif e.kind == "LOCK_REL":
                cs, start = open_stack.pop()
                for lock in reversed(plan.locksets[cs.id]):
                    out.append(TraceEvent(
                        tid=tid, seq=len(out), kind="LOCK_REL", lock=lock))
                span_map[cs.id] = (start, len(out))
            else:
                out.append(TraceEvent(
                    tid=tid, seq=len(out), kind=e.kind, addr=e.addr, reg=e.reg,
                    valexpr=e.valexpr, cost=e.cost))
        threads[tid] = out

    meta_sections = []
    for cs in sections:
        start, end = span_map[cs.id]
        meta_sections.append(SectionMeta(
            id=cs.id, tid=cs.tid, lock=cs.lock, site=cs.site, acq_ord=cs.acq_ord,
            start=start, end=end,
            lockset=list(plan.locksets[cs.id]),
            guards=dict(plan.guards[cs.id]),
            removed=not plan.locksets[cs.id]))
    new = Trace(
        threads=threads,
        transform=TransformMeta(sections=meta_sections,
                                constraints=dict(topo.partial_orders)),
        capabilities=list(trace.capabilities),
        initial_memory=dict(trace.initial_memory),
    )
    validate_trace(new)
    return new


def transform_trace(trace: Trace, detection: DetectResult | None = None
                    ) -> tuple[Trace, Topology, LocksetPlan]:
    """One-call pipeline: detection context -> topology -> lockset plan ->
    transformed trace."""
    cls = Classifier(trace)
    if detection is None:
        detection = detect_all(trace, cls)
    topo = build_topology(trace, cls)
    plan = assign_locksets(topo)
    return emit_ulcp_free_trace(trace, topo, plan, cls), topo, plan


# --- post-transform race check -------------------------------------------------


@dataclass
class RaceReport:
    divergent: bool
    diffs: list[str]
    pairs: list[dict]

    def to_json(self) -> dict:
        return {"divergent": self.divergent, "diffs": list(self.diffs),
                "pairs": [dict(p) for p in self.pairs]}


def _regions(trace: Trace, result: ReplayResult, sections: list[CriticalSection]):
    """Per thread: alternating gap/section regions with time intervals and
    read/write sets. Uses outermost sections only; a nested section's effects
    belong to its outermost enclosing region."""
    regions = []
    for tid in trace.tids:
        evs = trace.threads[tid]
        outer: list[CriticalSection] = []
        for cs in sorted((c for c in sections if c.tid == tid), key=lambda c: c.span[0]):
            if not outer or cs.span[0] > outer[-1].span[1]:
                outer.append(cs)
        completion = result.per_thread[tid]["completion"]
        bounds = []  # (kind, sid|None, ev_lo, ev_hi, t_lo, t_hi)
        prev_ev = 0
        prev_t = 0
        for cs in outer:
            times = result.section_times[cs.id]
            bounds.append(("gap", None, prev_ev, cs.span[0], prev_t, times["start"]))
            bounds.append(("cs", cs.id, cs.span[0], cs.span[1] + 1, times["start"], times["end"]))
            prev_ev = cs.span[1] + 1
            prev_t = times["end"]
        bounds.append(("gap", None, prev_ev, len(evs), prev_t, completion))
        for kind, sid, lo, hi, t0, t1 in bounds:
            rd, wr = set(), set()
            for e in evs[lo:hi]:
                if e.kind == "READ":
                    rd.add(e.addr)
                elif e.kind == "WRITE":
                    wr.add(e.addr)
            if kind == "gap" and not rd and not wr:
                continue
            regions.append({"tid": tid, "kind": kind, "section": sid,
                            "events": (lo, hi), "t": (t0, t1), "rd": rd, "wr": wr})
    return regions


def check_transform_races(orig_trace: Trace, free_trace: Trace,
                          orig_result: ReplayResult, free_result: ReplayResult
                          ) -> RaceReport:
    """Compare final memories of the original and transformed replays. On
    divergence, report the region pairs that conflict on some cell and became
    concurrent only in the transformed schedule — the lock orderings the
    transformation wrongly discarded."""
    divergent_addrs = sorted(
        set(orig_result.final_memory) | set(free_result.final_memory))
    diffs = [a for a in divergent_addrs
             if orig_result.final_memory.get(a, 0) != free_result.final_memory.get(a, 0)]
    if not diffs:
        return RaceReport(divergent=False, diffs=[], pairs=[])

    sections = extract_critical_sections(orig_trace)
    r_orig = _regions(orig_trace, orig_result, sections)
    r_free = _regions(orig_trace, free_result, sections)
    key = lambda r: (r["tid"], r["events"])
    free_by_key = {key(r): r for r in r_free}

    def overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
        return max(a[0], b[0]) < min(a[1], b[1])

    pairs = []
    for i, ra in enumerate(r_orig):
        for rb in r_orig[i + 1:]:
            if ra["tid"] == rb["tid"]:
                continue
            conflicting = sorted(
                (ra["wr"] & (rb["rd"] | rb["wr"])) | (rb["wr"] & (ra["rd"] | ra["wr"])))
            if not conflicting:
                continue
            fa, fb = free_by_key[key(ra)], free_by_key[key(rb)]
            if overlap(fa["t"], fb["t"]) and not overlap(ra["t"], rb["t"]):
                pairs.append({
                    "addrs": conflicting,
                    "region1": {"tid": ra["tid"], "kind": ra["kind"],
                                "section": ra["section"], "events": list(ra["events"])},
                    "region2": {"tid": rb["tid"], "kind": rb["kind"],
                                "section": rb["section"], "events": list(rb["events"])},
                })
    return RaceReport(divergent=True, diffs=diffs, pairs=pairs)
