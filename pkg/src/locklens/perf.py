"""Timing attribution: how much wall time each unnecessary contention pair
cost, fused across repeated occurrences and ranked.

For a pair (A, B) — A the earlier acquisition — three labels are read off a
replay: Time1, the end of the critical section preceding A in A's thread (0
if none); Time2, the start of the section following A in A's thread (thread
completion if none); Time3, the same for B's thread. The pair's cost is how
much later the two threads leave the neighborhood of the pair in the original
schedule than in the de-contended one, net of drift inherited from upstream:

    delta_t = (max(Time2, Time3)_orig - max(Time2, Time3)_opt)
            - (Time1_orig - Time1_opt)

Pairs repeating the same static lock sites fuse into groups: two pairs merge
when both their first sites overlap and both their second sites overlap, or
crosswise (first against second both ways), growing the group's site hulls
each merge until a fixpoint. A group's share is its summed delta_t divided by
the total; when every group sums to zero the ranking falls back to member
count and exposes an all_zero flag instead of fabricating shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .detect import UlcpPair
from .engine import ReplayResult
from .model import Site

__all__ = [
    "SiteSpan",
    "delta_t",
    "UlcpGroup",
    "fuse",
    "rank",
    "aggregate_metrics",
]


@dataclass(frozen=True)
class SiteSpan:
    """A static lock site with its source interval; fusion's unit of overlap."""

    id: int
    lo: int
    hi: int

    @classmethod
    def of(cls, site: Site) -> "SiteSpan":
        return cls(site.id, site.lo, site.hi)

    def overlaps(self, other: "SiteSpan") -> bool:
        return self.id == other.id and self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: "SiteSpan") -> "SiteSpan":
        assert self.id == other.id
        return SiteSpan(self.id, min(self.lo, other.lo), max(self.hi, other.hi))

    def to_json(self) -> dict:
        return {"site": self.id, "lo": self.lo, "hi": self.hi}


def delta_t(pair: UlcpPair, orig: ReplayResult, opt: ReplayResult) -> int:
    t1_o = orig.label(f"c{pair.c1}.time1")
    t2_o = orig.label(f"c{pair.c1}.time2")
    t3_o = orig.label(f"c{pair.c2}.time2")
    t1_p = opt.label(f"c{pair.c1}.time1")
    t2_p = opt.label(f"c{pair.c1}.time2")
    t3_p = opt.label(f"c{pair.c2}.time2")
    return (max(t2_o, t3_o) - max(t2_p, t3_p)) - (t1_o - t1_p)


@dataclass
class UlcpGroup:
    cr1: SiteSpan
    cr2: SiteSpan
    members: list[UlcpPair] = field(default_factory=list)

    @property
    def total_delta_t(self) -> int:
        return sum(p.delta_t or 0 for p in self.members)

    def dominant_category(self) -> str:
        counts: dict[str, int] = {}
        for p in self.members:
            counts[p.category] = counts.get(p.category, 0) + 1
        return max(sorted(counts), key=lambda c: counts[c])

    def to_json(self) -> dict:
        return {
            "cr1": self.cr1.to_json(),
            "cr2": self.cr2.to_json(),
            "delta_t": self.total_delta_t,
            "size": len(self.members),
            "dominant_category": self.dominant_category(),
            "members": [p.to_json() for p in self.members],
        }


def _try_merge(a: UlcpGroup, b: UlcpGroup) -> UlcpGroup | None:
    if a.cr1.overlaps(b.cr1) and a.cr2.overlaps(b.cr2):
        return UlcpGroup(cr1=a.cr1.hull(b.cr1), cr2=a.cr2.hull(b.cr2),
                         members=a.members + b.members)
    if a.cr1.overlaps(b.cr2) and a.cr2.overlaps(b.cr1):
        return UlcpGroup(cr1=a.cr1.hull(b.cr2), cr2=a.cr2.hull(b.cr1),
                         members=a.members + b.members)
    return None


def fuse(pairs: list[UlcpPair], sites: dict[int, Site]) -> list[UlcpGroup]:
    """Group pairs by overlapping static sites, iterating merges to a
    fixpoint. ``sites`` maps section id -> lock site. The result does not
    depend on input order: groups are renormalized and sorted each pass."""
    groups = [
        UlcpGroup(cr1=SiteSpan.of(sites[p.c1]), cr2=SiteSpan.of(sites[p.c2]), members=[p])
        for p in pairs
    ]
    changed = True
    while changed:
        changed = False
        groups.sort(key=lambda g: (g.cr1.id, g.cr1.lo, g.cr1.hi, g.cr2.id, g.cr2.lo, g.cr2.hi))
        out: list[UlcpGroup] = []
        for g in groups:
            merged = False
            for i, h in enumerate(out):
                m = _try_merge(h, g)
                if m is not None:
                    out[i] = m
                    merged = True
                    changed = True
                    break
            if not merged:
                out.append(g)
        groups = out
    for g in groups:
        g.members.sort(key=lambda p: (p.c1, p.c2))
    return groups


def rank(groups: list[UlcpGroup]) -> tuple[list[dict], bool]:
    """Order groups by share of the total cost. Returns (rows, all_zero).
    Shares are delta_t / sum(delta_t); if the total is zero there is nothing
    to apportion, so rows carry p = None and sort by member count."""
    total = sum(g.total_delta_t for g in groups)
    all_zero = total == 0
    if all_zero:
        ordered = sorted(groups, key=lambda g: (-len(g.members),
                                                g.cr1.id, g.cr1.lo, g.cr2.id, g.cr2.lo))
    else:
        ordered = sorted(groups, key=lambda g: (-g.total_delta_t / total,
                                                g.cr1.lo, g.cr2.lo, g.cr1.id, g.cr2.id))
    rows = []
    for i, g in enumerate(ordered, start=1):
        row = g.to_json()
        row["rank"] = i
        row["p"] = None if all_zero else g.total_delta_t / total
        rows.append(row)
    return rows, all_zero


def aggregate_metrics(orig: ReplayResult, opt: ReplayResult,
                      pairs: list[UlcpPair]) -> dict:
    """Split the total attributed cost into the part visible in the critical
    path (t_pd: makespan delta) and the part absorbed by overlapped waiting
    (t_rw: the remainder); t_pd + t_rw equals the summed delta_t exactly."""
    sum_dt = sum(p.delta_t or 0 for p in pairs)
    t_pd = orig.makespan - opt.makespan
    t_rw = sum_dt - t_pd
    n_threads = len(orig.per_thread)
    t_real = orig.makespan
    return {
        "t_real": t_real,
        "t_free": opt.makespan,
        "sum_delta_t": sum_dt,
        "t_pd": t_pd,
        "t_rw": t_rw,
        "t_pd_norm": (t_pd / t_real) if t_real else 0.0,
        "t_rw_per_thread": t_rw / n_threads if n_threads else 0.0,
        "n_threads": n_threads,
    }
