"""Timing attribution, site fusion, ranking."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locklens.detect import UlcpPair
from locklens.engine import ReplayResult
from locklens.errors import MissingLabelError
from locklens.model import Site
from locklens.perf import (SiteSpan, UlcpGroup, aggregate_metrics, delta_t,
                           fuse, rank)


def stub_result(timestamps, makespan=0, n_threads=2):
    return ReplayResult(
        policy="elsc", seed=0, makespan=makespan,
        per_thread={t: {"completion": makespan, "busy": makespan, "wait": 0}
                    for t in range(n_threads)},
        final_memory={}, final_registers={}, lock_order={},
        completion_order={}, section_times={}, timestamps=timestamps)


def mkpair(c1, c2, category="READ_READ", dt=None, lock="m"):
    return UlcpPair(lock=lock, c1=c1, c2=c2, category=category,
                    sites=(c1, c2), tids=(0, 1), delta_t=dt)


class TestSiteSpan:
    def test_overlap_requires_same_site_id(self):
        assert not SiteSpan(1, 0, 10).overlaps(SiteSpan(2, 0, 10))

    def test_overlap_is_interval_intersection(self):
        a = SiteSpan(1, 5, 9)
        assert a.overlaps(SiteSpan(1, 9, 12))
        assert a.overlaps(SiteSpan(1, 0, 5))
        assert not a.overlaps(SiteSpan(1, 10, 12))

    def test_hull_spans_both(self):
        assert SiteSpan(1, 5, 9).hull(SiteSpan(1, 2, 7)) == SiteSpan(1, 2, 9)

    def test_of_copies_site(self):
        assert SiteSpan.of(Site(3, 14, 18)) == SiteSpan(3, 14, 18)


class TestDeltaT:
    def test_frozen_value(self):
        orig = stub_result({"c0.time1": 0, "c0.time2": 10, "c1.time2": 14})
        opt = stub_result({"c0.time1": 0, "c0.time2": 10, "c1.time2": 9})
        assert delta_t(mkpair(0, 1), orig, opt) == 4

    def test_upstream_drift_is_subtracted(self):
        # both neighborhoods shift by 3 -> the pair itself cost nothing
        orig = stub_result({"c0.time1": 7, "c0.time2": 13, "c1.time2": 13})
        opt = stub_result({"c0.time1": 4, "c0.time2": 10, "c1.time2": 10})
        assert delta_t(mkpair(0, 1), orig, opt) == 0

    def test_can_be_negative(self):
        orig = stub_result({"c0.time1": 0, "c0.time2": 6, "c1.time2": 6})
        opt = stub_result({"c0.time1": 0, "c0.time2": 9, "c1.time2": 4})
        assert delta_t(mkpair(0, 1), orig, opt) == -3

    def test_missing_label_raises(self):
        orig = stub_result({"c0.time1": 0, "c0.time2": 10})
        opt = stub_result({"c0.time1": 0, "c0.time2": 10, "c1.time2": 9})
        with pytest.raises(MissingLabelError):
            delta_t(mkpair(0, 1), orig, opt)


class TestFusion:
    SITES = {
        0: Site(10, 100, 104),
        1: Site(20, 200, 204),
        2: Site(10, 103, 108),
        3: Site(20, 202, 206),
        4: Site(30, 300, 304),
        5: Site(40, 400, 404),
    }

    def test_straight_merge(self):
        pairs = [mkpair(0, 1), mkpair(2, 3)]
        groups = fuse(pairs, self.SITES)
        assert len(groups) == 1
        g = groups[0]
        assert g.cr1 == SiteSpan(10, 100, 108)
        assert g.cr2 == SiteSpan(20, 200, 206)
        assert len(g.members) == 2

    def test_crossed_merge(self):
        pairs = [mkpair(0, 1), mkpair(3, 2)]  # second pair swaps the roles
        groups = fuse(pairs, self.SITES)
        assert len(groups) == 1
        assert len(groups[0].members) == 2

    def test_disjoint_pairs_stay_apart(self):
        pairs = [mkpair(0, 1), mkpair(4, 5)]
        groups = fuse(pairs, self.SITES)
        assert len(groups) == 2

    def test_same_site_disjoint_lines_stay_apart(self):
        sites = {0: Site(10, 100, 101), 1: Site(20, 200, 201),
                 2: Site(10, 150, 151), 3: Site(20, 200, 201)}
        groups = fuse([mkpair(0, 1), mkpair(2, 3)], sites)
        assert len(groups) == 2  # same site id, non-overlapping intervals

    def test_transitive_fixpoint(self):
        # 0-1 and 2-3 only overlap via the widened hull of a middle pair
        sites = {0: Site(1, 0, 2), 1: Site(2, 0, 2),
                 2: Site(1, 2, 5), 3: Site(2, 2, 5),
                 4: Site(1, 5, 8), 5: Site(2, 5, 8)}
        pairs = [mkpair(0, 1), mkpair(4, 5), mkpair(2, 3)]
        groups = fuse(pairs, sites)
        assert len(groups) == 1
        assert len(groups[0].members) == 3

    @settings(max_examples=60, deadline=None)
    @given(st.permutations(list(range(6))))
    def test_order_independent(self, order):
        base = [mkpair(0, 1, dt=3), mkpair(2, 3, dt=1),
                mkpair(4, 5, dt=2), mkpair(0, 3, dt=0),
                mkpair(2, 1, dt=5), mkpair(4, 5, dt=1)]
        ref = fuse(base, self.SITES)
        shuffled = fuse([base[i] for i in order], self.SITES)
        key = lambda g: (g.cr1.id, g.cr1.lo, g.cr2.id, g.cr2.lo)
        assert sorted(g.to_json()["delta_t"] for g in ref) == \
               sorted(g.to_json()["delta_t"] for g in shuffled)
        assert sorted(key(g) for g in ref) == sorted(key(g) for g in shuffled)

    def test_dominant_category_majority_then_alpha(self):
        g = UlcpGroup(SiteSpan(1, 0, 1), SiteSpan(2, 0, 1), members=[
            mkpair(0, 1, "READ_READ"), mkpair(0, 1, "READ_READ"),
            mkpair(0, 1, "NULL_LOCK")])
        assert g.dominant_category() == "READ_READ"
        tie = UlcpGroup(SiteSpan(1, 0, 1), SiteSpan(2, 0, 1), members=[
            mkpair(0, 1, "READ_READ"), mkpair(0, 1, "NULL_LOCK")])
        assert tie.dominant_category() == "NULL_LOCK"  # alphabetical tiebreak


class TestRanking:
    def _group(self, dt, n=1, sid=1):
        return UlcpGroup(SiteSpan(sid, 0, 1), SiteSpan(sid + 100, 0, 1),
                         members=[mkpair(0, 1, dt=dt) for _ in range(n)])

    def test_frozen_shares(self):
        rows, all_zero = rank([self._group(3, sid=1), self._group(6, sid=2),
                               self._group(1, sid=3)])
        assert not all_zero
        assert [r["p"] for r in rows] == [0.6, 0.3, 0.1]
        assert [r["rank"] for r in rows] == [1, 2, 3]
        assert rows[0]["delta_t"] == 6

    def test_shares_sum_to_one(self):
        rows, all_zero = rank([self._group(k, sid=k) for k in (2, 5, 7, 11)])
        assert abs(sum(r["p"] for r in rows) - 1.0) < 1e-9

    def test_all_zero_falls_back_to_member_count(self):
        rows, all_zero = rank([self._group(0, n=1, sid=1),
                               self._group(0, n=3, sid=2)])
        assert all_zero
        assert [r["p"] for r in rows] == [None, None]
        assert rows[0]["size"] == 3

    def test_negative_members_keep_total_share_one(self):
        rows, _ = rank([self._group(8, sid=1), self._group(-3, sid=2)])
        assert rows[0]["p"] == 1.6 and rows[1]["p"] == -0.6
        assert abs(sum(r["p"] for r in rows) - 1.0) < 1e-9


class TestAggregate:
    @settings(max_examples=80, deadline=None)
    @given(st.integers(5, 60), st.integers(2, 59),
           st.lists(st.integers(-4, 9), min_size=0, max_size=6))
    def test_identity_holds_exactly(self, t_real, t_free, dts):
        orig = stub_result({}, makespan=t_real)
        opt = stub_result({}, makespan=min(t_free, t_real))
        pairs = [mkpair(i, i + 1, dt=d) for i, d in enumerate(dts)]
        m = aggregate_metrics(orig, opt, pairs)
        assert m["t_pd"] + m["t_rw"] == m["sum_delta_t"]
        assert m["sum_delta_t"] == sum(dts)
        assert m["t_pd"] == orig.makespan - opt.makespan

    def test_normalizations(self):
        orig = stub_result({}, makespan=20, n_threads=4)
        opt = stub_result({}, makespan=15, n_threads=4)
        m = aggregate_metrics(orig, opt, [mkpair(0, 1, dt=9)])
        assert m["t_pd"] == 5 and m["t_rw"] == 4
        assert m["t_pd_norm"] == 0.25
        assert m["t_rw_per_thread"] == 1.0
        assert m["n_threads"] == 4
