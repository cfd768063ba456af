"""Bundled benchmark workloads with expected-outcome metadata.

Each entry is a pair of files shipped as package data: ``<name>.wl`` (the
workload) and ``<name>.json`` (recording seed, default parameters, and the
expected analysis outcome). ``run_corpus`` records the workload, builds the
full report, and evaluates the expectations, returning both.
"""

from __future__ import annotations

import json
from importlib import resources

from ..report import report_from_workload

__all__ = ["corpus_names", "load_corpus", "run_corpus"]


def _root():
    return resources.files(__package__)


def corpus_names() -> list[str]:
    names = []
    for entry in _root().iterdir():
        if entry.name.endswith(".wl"):
            names.append(entry.name[:-3])
    return sorted(names)


def load_corpus(name: str) -> tuple[str, dict]:
    root = _root()
    wl = root / f"{name}.wl"
    meta = root / f"{name}.json"
    if not wl.is_file():
        raise KeyError(f"no bundled workload named {name!r}")
    source = wl.read_text(encoding="utf-8")
    info = json.loads(meta.read_text(encoding="utf-8")) if meta.is_file() else {}
    return source, info


def run_corpus(name: str, seed: int | None = None,
               params: dict[str, int] | None = None) -> dict:
    source, info = load_corpus(name)
    use_seed = info.get("seed", 0) if seed is None else seed
    use_params = dict(info.get("params", {}))
    if params:
        use_params.update(params)
    report = report_from_workload(source, seed=use_seed, params=use_params or None,
                                  workload=name)
    checks = _evaluate(info.get("expect", {}), report)
    report["expect"] = {
        "checks": checks,
        "ok": all(c["ok"] for c in checks),
    }
    return report


def _evaluate(expect: dict, report: dict) -> list[dict]:
    checks = []

    def add(name: str, ok: bool, got):
        checks.append({"check": name, "ok": bool(ok), "got": got})

    if "dominant_category" in expect:
        want = expect["dominant_category"]
        counts = report["categories"]
        ulcp_counts = {k: v for k, v in counts.items()
                       if k not in ("TLCP", "UNKNOWN")}
        got = None
        if ulcp_counts:
            got = max(sorted(ulcp_counts), key=lambda k: ulcp_counts[k])
        add("dominant_category", got == want, got)
    if "min_ulcps" in expect:
        add("min_ulcps", report["ulcp_count"] >= expect["min_ulcps"],
            report["ulcp_count"])
    if "all_zero" in expect:
        add("all_zero", report["all_zero"] == expect["all_zero"],
            report["all_zero"])
    if "race_free" in expect:
        divergent = report["race_report"]["divergent"]
        add("race_free", (not divergent) == expect["race_free"], not divergent)
    if "makespan" in expect:
        add("makespan", report["makespan"]["original"] == expect["makespan"],
            report["makespan"]["original"])
    return checks
