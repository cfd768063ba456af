"""Contention-graph construction, fine-grained lock assignment, rewriting."""

import pytest

from locklens.corpus import load_corpus
from locklens.detect import Classifier, detect_all
from locklens.engine import record, replay
from locklens.model import parse_trace, serialize_trace, validate_trace
from locklens.transform import (assign_locksets, build_topology,
                                check_transform_races, emit_ulcp_free_trace,
                                transform_trace)
from locklens.workload import parse_workload

from _workgen import conflict_free, with_injected_conflict


def _record_corpus(name):
    source, meta = load_corpus(name)
    prog = parse_workload(source, overrides=meta.get("params"))
    return record(prog, seed=meta.get("seed", 0))


@pytest.fixture(scope="module")
def chain():
    trace, rec = _record_corpus("figure9_chain")
    return trace, rec


def test_scan_stops_at_first_blocking_pair():
    # one ULCP between t0/t1 is passed over; the later conflicting pair
    # becomes the edge and the scan for that thread ends there.
    src = """
memory a = 0;
memory b = 0;
thread {
  lock m @1;
  read a -> r1;
  write b = 9;
  unlock m;
}
thread {
  compute 1;
  lock m @2;
  read a -> r1;
  unlock m;
  lock m @3;
  read b -> r1;
  write b = 9;
  unlock m;
  lock m @4;
  read a -> r1;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    cls = Classifier(trace)
    topo = build_topology(trace, cls)
    by_ord = {c.acq_ord: c.id for c in cls.sections if c.lock == "m"}
    writer, rr1, blocker, rr2 = by_ord[0], by_ord[1], by_ord[2], by_ord[3]
    assert (writer, blocker) in topo.edges
    assert (writer, rr1) not in topo.edges  # ULCP skipped, not linked
    assert (writer, rr2) not in topo.edges  # scan stopped at the edge
    assert rr1 in topo.nodes and rr2 in topo.nodes


def test_edge_nodes_keep_original_order_constraint(chain):
    trace, _ = chain
    topo = build_topology(trace)
    for lock, ordered in topo.partial_orders.items():
        ranks = {c.id: c.acq_ord
                 for c in Classifier(trace).sections if c.lock == lock}
        assert ordered == sorted(ordered, key=lambda s: ranks[s])


def test_every_node_gets_a_fresh_out_lock_per_outgoing_edge(chain):
    trace, _ = chain
    topo = build_topology(trace)
    plan = assign_locksets(topo)
    sources = {src for src, _ in topo.edges}
    for sid in topo.nodes:
        own = plan.out_lock.get(sid)
        if sid in sources:
            assert own == f"@L{sid}"
            assert own in plan.locksets[sid]
        else:
            assert own is None
    for src, dst in topo.edges:
        assert plan.out_lock[src] in plan.locksets[dst]
        assert plan.guards[dst][plan.out_lock[src]] == src


def test_mutual_exclusion_iff_locksets_intersect(chain):
    trace, _ = chain
    topo = build_topology(trace)
    plan = assign_locksets(topo)
    for src, dst in topo.edges:
        common = set(plan.locksets[src]) & set(plan.locksets[dst])
        assert common, (src, dst)
    for sid in topo.standalone:
        assert plan.locksets[sid] == []


def test_emitted_trace_is_valid_and_replayable(chain):
    trace, rec = chain
    free, topo, plan = transform_trace(trace)
    validate_trace(free)
    reparsed = parse_trace(serialize_trace(free))
    assert serialize_trace(reparsed) == serialize_trace(free)
    assert all(a.startswith("@L") for a in free.aux_locks())
    # original contended locks are gone from transformed threads
    assert "g" not in set(free.locks()) - set(free.aux_locks())
    res = replay(free, "elsc")
    assert res.final_memory == rec.final_memory


def test_transform_metadata_reflects_plan(chain):
    trace, _ = chain
    free, topo, plan = transform_trace(trace)
    assert free.transform is not None
    metas = {m.id: m for m in free.transform.sections}
    for sid in set(topo.nodes) | set(topo.standalone):
        assert metas[sid].lockset == plan.locksets[sid]
        assert metas[sid].removed == (not plan.locksets[sid])
    assert free.transform.constraints == topo.partial_orders


def test_aux_acquisition_order_matches_original_ranks(chain):
    trace, _ = chain
    free, topo, plan = transform_trace(trace)
    ranks = {}
    for evs in free.threads.values():
        for e in evs:
            if e.kind == "LOCK_ACQ":
                ranks.setdefault(e.lock, []).append(e.acq_ord)
    for lock, got in ranks.items():
        assert sorted(got) == list(range(len(got))), lock


def test_conflict_free_rewrites_preserve_memory():
    for seed in (11, 12, 13):
        src = conflict_free(seed)
        trace, rec = record(parse_workload(src), seed=0)
        free, _, _ = transform_trace(trace)
        orig_res = replay(trace, "elsc")
        free_res = replay(free, "elsc")
        report = check_transform_races(trace, free, orig_res, free_res)
        assert not report.divergent
        assert report.diffs == []


def test_injected_conflict_is_reported_with_its_address():
    hits = 0
    for seed in (1, 2, 3):
        src, addr = with_injected_conflict(seed)
        trace, rec = record(parse_workload(src), seed=0)
        free, _, _ = transform_trace(trace)
        orig_res = replay(trace, "elsc")
        free_res = replay(free, "elsc")
        report = check_transform_races(trace, free, orig_res, free_res)
        assert report.divergent
        assert addr in report.diffs
        hits += 1
    assert hits == 3


def test_benign_pairs_lose_their_locks_entirely():
    # two idempotent writers: pair is BENIGN -> no edge -> both standalone
    src = """
memory flag = 0;
thread {
  lock m @1;
  write flag = 0;
  unlock m;
}
thread {
  compute 1;
  lock m @2;
  write flag = 0;
  unlock m;
}
"""
    trace, _ = record(parse_workload(src), seed=0)
    topo = build_topology(trace)
    assert topo.edges == []
    free, _, plan = transform_trace(trace)
    assert all(not ls for ls in plan.locksets.values())
    assert free.locks() == []
