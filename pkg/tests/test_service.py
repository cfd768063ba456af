"""HTTP API surface: request/response contracts and error mapping."""

import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # starlette deprecation is a UserWarning
    from fastapi.testclient import TestClient

from locklens.corpus import load_corpus
from locklens.service import create_app

WORKLOAD = """
memory x = 0;
thread {
  lock m @1;
  read x -> r1;
  unlock m;
}
thread {
  compute 1;
  lock m @2;
  read x -> r1;
  unlock m;
}
"""


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app(), raise_server_exceptions=False) as c:
        yield c


def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    body = r.json()
    assert body["ok"] is True and body["version"]


def test_simulate_detect_transform_replay_chain(client):
    r = client.post("/simulate", json={"workload": WORKLOAD, "seed": 0})
    assert r.status_code == 200
    sim = r.json()
    assert sim["threads"] == 2 and sim["locks"] == ["m"]
    assert sim["trace"].startswith('{"v":1')

    r = client.post("/detect", json={"trace": sim["trace"]})
    assert r.status_code == 200
    det = r.json()
    assert det["ulcp_count"] == 1
    assert det["categories"].get("NULL_LOCK") == 1

    r = client.post("/transform", json={"trace": sim["trace"]})
    assert r.status_code == 200
    tra = r.json()
    assert "topology" in tra and "locksets" in tra

    r = client.post("/replay", json={"trace": tra["trace"], "policy": "elsc",
                                     "runs": 3})
    assert r.status_code == 200
    rep = r.json()
    assert rep["identical"] is True
    assert len(rep["results"]) == 3
    assert len(set(rep["makespans"])) == 1


def test_replay_rejects_unknown_policy(client):
    r = client.post("/replay", json={"trace": '{"v": 1}', "policy": "wild"})
    assert r.status_code == 400


def test_replay_rejects_bad_runs(client):
    r = client.post("/replay", json={"trace": '{"v": 1}', "policy": "orig",
                                     "runs": 0})
    assert r.status_code == 400


def test_malformed_trace_maps_to_422_with_code(client):
    r = client.post("/detect", json={"trace": '{"v": 1}\n{"nope": true}'})
    assert r.status_code == 422
    err = r.json()["error"]
    assert err["code"] == "MALFORMED_RECORD"


def test_workload_syntax_error_maps_to_422_with_line(client):
    r = client.post("/simulate", json={"workload": "thread {\n  frobnicate;\n}"})
    assert r.status_code == 422
    err = r.json()["error"]
    assert err["code"] == "SYNTAX_ERROR"
    assert err["details"]["line"] == 2


def test_report_requires_exactly_one_input(client):
    r = client.post("/report", json={})
    assert r.status_code == 400
    r = client.post("/report", json={"workload": WORKLOAD,
                                     "trace": '{"v": 1}'})
    assert r.status_code == 400


def test_report_from_workload(client):
    r = client.post("/report", json={"workload": WORKLOAD, "name": "demo"})
    assert r.status_code == 200
    body = r.json()
    assert body["report"]["workload"] == "demo"
    assert "makespan" in body["text"]


def test_sweep_endpoint(client):
    source, _ = load_corpus("figure3")
    r = client.post("/sweep", json={"workload": source, "param": "T",
                                    "values": [2, 4]})
    assert r.status_code == 200
    body = r.json()
    assert len(body["rows"]) == 2
    assert body["csv"].startswith("T,")
    r = client.post("/sweep", json={"workload": source, "param": "T",
                                    "values": []})
    assert r.status_code == 400


def test_corpus_list_and_run(client):
    r = client.get("/corpus")
    assert r.status_code == 200
    entries = r.json()["workloads"]
    names = [e["name"] for e in entries]
    assert "figure7" in names and "case01" in names
    assert len(names) == 18

    r = client.post("/corpus/figure7/run", json={})
    assert r.status_code == 200
    body = r.json()
    assert body["report"]["expect"]["ok"] is True

    r = client.post("/corpus/no_such_entry/run", json={})
    assert r.status_code == 404
