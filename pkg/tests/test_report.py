"""End-to-end report assembly and the parameter sweep."""

import pytest

from locklens.corpus import load_corpus
from locklens.model import parse_trace
from locklens.report import (build_report, render_text, report_from_workload,
                             sweep_report)
from locklens.workload import parse_workload
from locklens.engine import record


REPORT_KEYS = {
    "workload", "seed", "policy", "dynamic", "n_threads", "makespan",
    "pair_count", "ulcp_count", "categories", "pairs", "groups", "all_zero",
    "metrics", "aux_acquisitions", "race_report", "warnings",
    "transformed_trace",
}


@pytest.fixture(scope="module")
def chain_report():
    source, meta = load_corpus("figure9_chain")
    return report_from_workload(source, seed=meta.get("seed", 0),
                                params=meta.get("params"),
                                workload="figure9_chain")


def test_report_shape(chain_report):
    r = chain_report
    assert set(r) == REPORT_KEYS
    assert r["workload"] == "figure9_chain"
    assert r["makespan"]["original"] >= r["makespan"]["ulcp_free"]
    assert r["ulcp_count"] == len([p for p in r["pairs"]
                                   if p["category"] != "TLCP"])
    assert set(r["aux_acquisitions"]) == {"dynamic_on", "dynamic_off"}
    assert r["aux_acquisitions"]["dynamic_on"] <= r["aux_acquisitions"]["dynamic_off"]
    assert r["race_report"]["divergent"] is False


def test_metrics_identity(chain_report):
    m = chain_report["metrics"]
    assert m["t_pd"] + m["t_rw"] == m["sum_delta_t"]
    assert m["t_real"] == chain_report["makespan"]["original"]
    assert m["t_free"] == chain_report["makespan"]["ulcp_free"]


def test_group_shares(chain_report):
    r = chain_report
    if not r["all_zero"] and r["groups"]:
        assert abs(sum(g["p"] for g in r["groups"]) - 1.0) < 1e-9
        assert [g["rank"] for g in r["groups"]] == \
               list(range(1, len(r["groups"]) + 1))


def test_transformed_trace_round_trips(chain_report):
    free = parse_trace(chain_report["transformed_trace"])
    assert free.transform is not None
    assert any(l.startswith("@L") for l in free.locks()) or \
        all(m.removed for m in free.transform.sections)


def test_render_text_mentions_the_essentials(chain_report):
    text = render_text(chain_report)
    assert "makespan" in text
    assert "aux acquisitions" in text
    assert "races: none" in text
    assert "figure9_chain" in text


def test_per_pair_costs_recorded(chain_report):
    for p in chain_report["pairs"]:
        if p["category"] != "TLCP":
            assert "delta_t" in p


def test_sweep_rows_and_csv():
    source, meta = load_corpus("figure3")
    sw = sweep_report(source, param="T", values=[2, 4], seed=0)
    assert [row["value"] for row in sw["rows"]] == [2, 4]
    for row in sw["rows"]:
        assert row["param"] == "T"
        assert {"ulcp_count", "t_pd_over_t_real", "t_rw_per_thread"} <= set(row)
    lines = sw["csv"].strip().splitlines()
    assert lines[0] == "T,ulcp_count,t_pd_over_t_real,t_rw_per_thread"
    assert len(lines) == 3


def test_report_accepts_raw_trace_text():
    from locklens.report import report_for_trace_text
    from locklens.model import serialize_trace

    source, meta = load_corpus("figure12")
    trace, _ = record(parse_workload(source), seed=meta.get("seed", 0))
    r = report_for_trace_text(serialize_trace(trace))
    assert r["n_threads"] == 2
    assert r["ulcp_count"] >= 1
