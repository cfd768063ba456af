"""End-to-end analysis pipeline and report assembly.

One call takes a workload (or an already-recorded trace) through record ->
detect -> transform -> replay original and de-contended schedules -> per-pair
timing -> fusion -> ranking -> aggregate metrics -> post-transform race
check, and returns a JSON-friendly report. The sweep driver repeats the
pipeline across a parameter (thread count or input size) and emits the CSV
behind scaling plots: param, ulcp_count, t_pd_over_t_real, t_rw_per_thread.
"""

from __future__ import annotations

import io

from .detect import Classifier, detect_all
from .engine import record, replay
from .errors import MissingLabelError
from .model import Trace, parse_trace, serialize_trace
from .perf import aggregate_metrics, delta_t, fuse, rank
from .transform import build_topology, assign_locksets, emit_ulcp_free_trace, check_transform_races
from .workload import parse_workload

__all__ = ["build_report", "report_from_workload", "sweep_report", "render_text"]

# well-known sweepable parameter names: T scales threads, N scales input size
THREADS_PARAM = "T"
SIZE_PARAM = "N"


def build_report(trace: Trace, *, seed: int = 0, policy: str = "elsc",
                 dynamic: bool = True, workload: str | None = None) -> dict:
    cls = Classifier(trace)
    detection = detect_all(trace, cls)
    topo = build_topology(trace, cls)
    plan = assign_locksets(topo)
    free = emit_ulcp_free_trace(trace, topo, plan, cls)

    orig_r = replay(trace, policy, seed=seed)
    free_r = replay(free, policy, seed=seed, dynamic=dynamic)
    free_r_off = replay(free, policy, seed=seed, dynamic=False)

    ulcps = detection.ulcps
    warnings = list(detection.warnings)
    for p in ulcps:
        try:
            p.delta_t = delta_t(p, orig_r, free_r)
        except MissingLabelError as exc:
            p.delta_t = 0
            warnings.append(f"pair ({p.c1},{p.c2}): {exc.message}")

    sites = {cs.id: cs.site for cs in cls.sections}
    groups = fuse(ulcps, sites)
    rows, all_zero = rank(groups)
    metrics = aggregate_metrics(orig_r, free_r, ulcps)
    races = check_transform_races(trace, free, orig_r, free_r)

    return {
        "workload": workload,
        "seed": seed,
        "policy": policy,
        "dynamic": dynamic,
        "n_threads": len(trace.tids),
        "makespan": {"original": orig_r.makespan, "ulcp_free": free_r.makespan},
        "pair_count": len(detection.pairs),
        "ulcp_count": len(ulcps),
        "categories": detection.category_counts(),
        "pairs": [p.to_json() for p in detection.pairs],
        "groups": rows,
        "all_zero": all_zero,
        "metrics": metrics,
        "aux_acquisitions": {"dynamic_on": free_r.aux_acquisitions,
                             "dynamic_off": free_r_off.aux_acquisitions},
        "race_report": races.to_json(),
        "warnings": warnings,
        "transformed_trace": serialize_trace(free),
    }


def report_from_workload(source: str, *, seed: int = 0, params: dict[str, int] | None = None,
                         policy: str = "elsc", dynamic: bool = True,
                         workload: str | None = None) -> dict:
    prog = parse_workload(source, overrides=params)
    trace, _ = record(prog, seed=seed)
    return build_report(trace, seed=seed, policy=policy, dynamic=dynamic, workload=workload)


def sweep_report(source: str, *, param: str, values: list[int], seed: int = 0,
                 policy: str = "elsc", workload: str | None = None) -> dict:
    rows = []
    for v in values:
        rep = report_from_workload(source, seed=seed, params={param: v},
                                   policy=policy, workload=workload)
        m = rep["metrics"]
        rows.append({
            "param": param,
            "value": v,
            "n_threads": rep["n_threads"],
            "ulcp_count": rep["ulcp_count"],
            "t_pd": m["t_pd"],
            "t_rw": m["t_rw"],
            "sum_delta_t": m["sum_delta_t"],
            "makespan_original": rep["makespan"]["original"],
            "makespan_ulcp_free": rep["makespan"]["ulcp_free"],
            "t_pd_over_t_real": m["t_pd_norm"],
            "t_rw_per_thread": m["t_rw_per_thread"],
        })
    buf = io.StringIO()
    buf.write(f"{param},ulcp_count,t_pd_over_t_real,t_rw_per_thread\n")
    for r in rows:
        buf.write(f"{r['value']},{r['ulcp_count']},{r['t_pd_over_t_real']:.6f},"
                  f"{r['t_rw_per_thread']:.6f}\n")
    return {"workload": workload, "param": param, "values": list(values),
            "seed": seed, "rows": rows, "csv": buf.getvalue()}


def report_for_trace_text(text: str, **kw) -> dict:
    return build_report(parse_trace(text), **kw)


def render_text(report: dict) -> str:
    out = []
    name = report.get("workload") or "<trace>"
    out.append(f"{name}  seed={report['seed']}  policy={report['policy']}  "
               f"threads={report['n_threads']}")
    mk = report["makespan"]
    saved = mk["original"] - mk["ulcp_free"]
    out.append(f"makespan: original={mk['original']}  ulcp-free={mk['ulcp_free']}  "
               f"(saved {saved})")
    cats = ", ".join(f"{k}={v}" for k, v in sorted(report["categories"].items()))
    out.append(f"pairs: {report['pair_count']} total, {report['ulcp_count']} unnecessary"
               + (f"  [{cats}]" if cats else ""))
    if report["groups"]:
        out.append("groups:")
        for g in report["groups"]:
            share = "p=n/a " if g["p"] is None else f"p={g['p']:.3f}"
            cr1, cr2 = g["cr1"], g["cr2"]
            out.append(
                f"  #{g['rank']}  {share}  dT={g['delta_t']}  {g['dominant_category']}"
                f"  x{g['size']}  site {cr1['site']}[{cr1['lo']},{cr1['hi']}]"
                f" ~ site {cr2['site']}[{cr2['lo']},{cr2['hi']}]")
        if report["all_zero"]:
            out.append("  (no measurable cost; groups ordered by occurrence count)")
    m = report["metrics"]
    out.append(f"metrics: sum_dT={m['sum_delta_t']}  T_pd={m['t_pd']}  T_rw={m['t_rw']}  "
               f"T_pd/T_real={m['t_pd_norm']:.4f}  T_rw/thread={m['t_rw_per_thread']:.3f}")
    aux = report["aux_acquisitions"]
    out.append(f"aux acquisitions: {aux['dynamic_on']} with pruning, "
               f"{aux['dynamic_off']} without")
    rr = report["race_report"]
    if rr["divergent"]:
        out.append(f"RACES: transformed schedule diverges on {rr['diffs']} "
                   f"({len(rr['pairs'])} region pair(s))")
    else:
        out.append("races: none (transformed replay preserves final memory)")
    for w in report["warnings"]:
        out.append(f"warning: {w}")
    return "\n".join(out) + "\n"
