"""Classification oracles and detection behavior.

The truth-table oracle below restates the category rules from scratch so the
production classifier is checked against an independent formulation, not
against itself. Same idea for the benign check: a tiny brute-force
interpreter re-executes candidate regions both ways and the production
verdict must agree on every seeded sample.
"""

import random

import pytest

from locklens.detect import (Classifier, benign_check, classify_pair, detect_all)
from locklens.engine import capture_context, record
from locklens.errors import NotReexecutableError
from locklens.model import (CriticalSection, Site, Trace, TraceEvent,
                            extract_critical_sections, parse_trace,
                            serialize_trace)
from locklens.workload import parse_workload


def _cs(sid, rd, wr, tid=0, ord_=0):
    return CriticalSection(
        id=sid, tid=tid, lock="m", acq_ord=ord_, site=Site(1, 1, 1),
        span=(0, 0), s_rd=frozenset(rd), s_wr=frozenset(wr))


# --- independent truth-table oracle -------------------------------------------

def oracle_classify(rd1, wr1, rd2, wr2):
    """Category rules, restated independently: an empty section on either
    side idles under its lock; two pure readers never interfere; footprints
    that don't cross can be reordered freely; anything else needs the
    re-execution check."""
    side1_empty = len(rd1) == 0 and len(wr1) == 0
    side2_empty = len(rd2) == 0 and len(wr2) == 0
    if side1_empty or side2_empty:
        return "NULL_LOCK"
    if len(wr1) == 0 and len(wr2) == 0:
        return "READ_READ"
    crossings = (set(rd1) & set(wr2)) | (set(wr1) & set(rd2)) | (set(wr1) & set(wr2))
    if not crossings:
        return "DISJOINT_WRITE"
    return "FALSE"


# frozen spot values, worked by hand before the oracle loop existed
FROZEN = [
    ((), (), ("a",), ("b",), "NULL_LOCK"),
    (("a",), (), ("a",), (), "READ_READ"),
    (("a",), (), ("b",), ("b",), "DISJOINT_WRITE"),
    (("a",), (), ("a",), ("a",), "FALSE"),
    (("a",), ("a",), ("a",), ("a",), "FALSE"),
    (("a", "b"), (), ("c",), ("c",), "DISJOINT_WRITE"),
    ((), ("a",), (), ("a",), "FALSE"),
    ((), ("a",), (), ("b",), "DISJOINT_WRITE"),
]


@pytest.mark.parametrize("rd1,wr1,rd2,wr2,want", FROZEN)
def test_classify_frozen_values(rd1, wr1, rd2, wr2, want):
    assert classify_pair(_cs(0, rd1, wr1), _cs(1, rd2, wr2, tid=1, ord_=1)) == want


def test_classify_exhaustive_against_oracle():
    """Every combination of read/write sets over a 3-address universe."""
    universe = ("a", "b", "c")
    subsets = []
    for mask in range(8):
        subsets.append(tuple(universe[i] for i in range(3) if mask >> i & 1))
    checked = 0
    for rd1 in subsets:
        for wr1 in subsets:
            for rd2 in subsets:
                for wr2 in subsets:
                    got = classify_pair(_cs(0, rd1, wr1), _cs(1, rd2, wr2, tid=1, ord_=1))
                    assert got == oracle_classify(rd1, wr1, rd2, wr2), (
                        rd1, wr1, rd2, wr2)
                    checked += 1
    assert checked == 8 ** 4


# --- brute-force benign oracle -------------------------------------------------

OPS_ADDRS = ("x", "y", "z")


def _random_section_ops(rng):
    ops = []
    for _ in range(rng.randint(1, 3)):
        addr = rng.choice(OPS_ADDRS)
        if rng.random() < 0.5:
            ops.append(("read", addr))
        else:
            kind = rng.random()
            if kind < 0.5:
                ops.append(("write_const", addr, rng.randint(0, 3)))
            else:
                ops.append(("write_add", addr, rng.randint(1, 2)))
    return ops


def _build_two_section_trace(ops1, ops2, init):
    """Hand-assemble a two-thread trace where each thread runs one section."""
    threads = {}
    for tid, ops in ((0, ops1), (1, ops2)):
        evs = [TraceEvent(tid=tid, seq=0, kind="THREAD_START"),
               TraceEvent(tid=tid, seq=1, kind="LOCK_ACQ", lock="m",
                          acq_ord=tid, site=Site(tid + 1, tid + 1, tid + 1))]
        seq = 2
        reg_known = False
        for op in ops:
            if op[0] == "read":
                evs.append(TraceEvent(tid=tid, seq=seq, kind="READ",
                                      addr=op[1], reg="r1", cost=1))
                reg_known = True
            elif op[0] == "write_const":
                evs.append(TraceEvent(tid=tid, seq=seq, kind="WRITE", addr=op[1],
                                      valexpr=("const", op[2]), cost=1))
            else:
                vx = ("add", "r1", op[2]) if reg_known else ("const", op[2])
                evs.append(TraceEvent(tid=tid, seq=seq, kind="WRITE", addr=op[1],
                                      valexpr=vx, cost=1))
            seq += 1
        evs.append(TraceEvent(tid=tid, seq=seq, kind="LOCK_REL", lock="m"))
        evs.append(TraceEvent(tid=tid, seq=seq + 1, kind="THREAD_END"))
        threads[tid] = evs
    return Trace(threads=threads, initial_memory=dict(init))


def _interp(ops, mem, reg):
    reads = []
    for op in ops:
        if op[0] == "read":
            reg = mem.get(op[1], 0)
            reads.append(reg)
        elif op[0] == "write_const":
            mem[op[1]] = op[2]
        else:
            mem[op[1]] = (reg if reg is not None else 0) + op[2]
    return reads, reg


def oracle_benign(ops1, ops2, init, regs1, regs2):
    m1 = dict(init)
    ra1, _ = _interp(ops1, m1, regs1)
    rb1, _ = _interp(ops2, m1, regs2)
    m2 = dict(init)
    rb2, _ = _interp(ops2, m2, regs2)
    ra2, _ = _interp(ops1, m2, regs1)
    return m1 == m2 and ra1 == ra2 and rb1 == rb2


def test_benign_check_against_brute_force():
    rng = random.Random(20260813)
    agree = 0
    for case in range(1000):
        ops1 = _random_section_ops(rng)
        ops2 = _random_section_ops(rng)
        init = {a: rng.randint(0, 3) for a in OPS_ADDRS}
        trace = _build_two_section_trace(ops1, ops2, init)
        secs = extract_critical_sections(trace)
        snapshots = capture_context(trace).snapshots
        got = benign_check(trace, secs[0], secs[1], snapshots)
        r1 = snapshots[secs[0].id][1].get("r1")
        r2 = snapshots[secs[1].id][1].get("r1")
        want = oracle_benign(ops1, ops2, snapshots[secs[0].id][0], r1, r2)
        assert got == want, (case, ops1, ops2, init)
        agree += 1
    assert agree == 1000


# --- behavior on real workloads -------------------------------------------------

POLL_ONLY = """
memory flag = 0;
threads 2 {
  compute ${1 + I};
  lock m @1;
  read flag -> r1;
  compute 1;
  unlock m;
}
"""


def test_constant_reads_classify_as_null_lock():
    trace, _ = record(parse_workload(POLL_ONLY), seed=0)
    det = detect_all(trace)
    assert [p.category for p in det.pairs] == ["NULL_LOCK"]


def test_written_flag_upgrades_to_read_read():
    src = POLL_ONLY + "\nthread {\n  compute 9;\n  write flag = 1;\n}\n"
    trace, _ = record(parse_workload(src), seed=0)
    det = detect_all(trace)
    cats = {(p.c1, p.c2): p.category for p in det.pairs}
    assert cats[(0, 1)] == "READ_READ"


def test_benign_uses_raw_events_not_filtered_sets():
    # the writer below rewrites the flag with its current value: classification
    # must go through re-execution (sets do conflict) and come back benign
    src = """
memory flag = 0;
thread {
  compute 1;
  lock m @1;
  read flag -> r1;
  unlock m;
}
thread {
  compute 3;
  lock m @2;
  write flag = 0;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    det = detect_all(trace)
    assert [p.category for p in det.pairs] == ["BENIGN"]


def test_value_conflict_is_kept_as_tlcp():
    src = """
memory flag = 0;
thread {
  compute 1;
  lock m @1;
  read flag -> r1;
  unlock m;
}
thread {
  compute 3;
  lock m @2;
  write flag = 7;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    det = detect_all(trace)
    assert [p.category for p in det.pairs] == ["TLCP"]
    assert det.ulcps == []


def test_unvalued_write_degrades_to_tlcp_with_warning():
    src = """
memory flag = 0;
thread {
  compute 1;
  lock m @1;
  read flag -> r1;
  unlock m;
}
thread {
  compute 3;
  lock m @2;
  write flag = 0;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    # strip the value expression as a capability-poor recorder would
    for evs in trace.threads.values():
        for i, e in enumerate(evs):
            if e.kind == "WRITE":
                evs[i] = TraceEvent(tid=e.tid, seq=e.seq, kind="WRITE",
                                    addr=e.addr, valexpr=None, cost=e.cost)
    det = detect_all(trace)
    assert [p.category for p in det.pairs] == ["TLCP"]
    assert any("re-execute" in w for w in det.warnings)


def test_no_memory_capability_reports_unknown():
    src = """
memory flag = 0;
threads 2 {
  compute ${1 + I};
  lock m @1;
  read flag -> r1;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    stripped = Trace(threads={
        tid: [e for e in evs if e.kind not in ("READ", "WRITE")]
        for tid, evs in trace.threads.items()
    }, capabilities=["no_memory_events"])
    # renumber seqs after the strip
    for evs in stripped.threads.values():
        for i, e in enumerate(evs):
            evs[i] = TraceEvent(tid=e.tid, seq=i, kind=e.kind, lock=e.lock,
                                acq_ord=e.acq_ord, site=e.site, addr=e.addr,
                                reg=e.reg, valexpr=e.valexpr, cost=e.cost)
    rt = parse_trace(serialize_trace(stripped))
    det = detect_all(rt)
    assert [p.category for p in det.pairs] == ["UNKNOWN"]


def test_detect_skips_same_thread_adjacency():
    src = """
memory v = 0;
thread {
  compute 1;
  lock m @1;
  read v -> r1;
  unlock m;
  lock m @2;
  read v -> r1;
  unlock m;
}
thread {
  compute 9;
  lock m @3;
  read v -> r1;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    det = detect_all(trace)
    # adjacent (sec0, sec1) share a thread: only (sec1, sec2) is a pair
    assert [(p.c1, p.c2) for p in det.pairs] == [(1, 2)]


def test_classifier_caches_pair_verdicts():
    trace, _ = record(parse_workload(POLL_ONLY), seed=0)
    cls = Classifier(trace)
    a, b = cls.sections
    assert cls.category(a, b) == "NULL_LOCK"
    assert cls.category(b, a) == "NULL_LOCK"
    assert len(cls._cache) == 1
