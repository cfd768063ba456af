"""FastAPI service exposing the record/detect/transform/replay pipeline.

Domain errors surface as HTTP 422 with the structured payload from
``LockLensError.to_dict`` so clients can map stable codes instead of
scraping messages.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..corpus import corpus_names, load_corpus, run_corpus
from ..detect import detect_all
from ..engine import POLICIES, record, replay
from ..errors import LockLensError
from ..model import parse_trace, serialize_trace
from ..report import build_report, render_text, report_from_workload, sweep_report
from ..transform import transform_trace
from ..workload import parse_workload
from . import models


def create_app() -> FastAPI:
    app = FastAPI(title="locklens", version=__version__)

    @app.exception_handler(LockLensError)
    async def _domain_error(request: Request, exc: LockLensError):
        return JSONResponse(status_code=422, content={"error": exc.to_dict()})

    @app.get("/healthz", response_model=models.HealthResponse)
    def healthz():
        return models.HealthResponse(ok=True, version=__version__)

    @app.post("/simulate", response_model=models.SimulateResponse)
    def simulate(req: models.SimulateRequest):
        prog = parse_workload(req.workload, overrides=req.params or None)
        trace, res = record(prog, seed=req.seed)
        return models.SimulateResponse(
            trace=serialize_trace(trace),
            makespan=res.makespan,
            threads=len(trace.tids),
            events=sum(len(evs) for evs in trace.threads.values()),
            locks=trace.locks(),
            final_memory=dict(sorted(res.final_memory.items())),
        )

    @app.post("/detect", response_model=models.DetectResponse)
    def detect(req: models.DetectRequest):
        trace = parse_trace(req.trace)
        det = detect_all(trace)
        out = det.to_json()
        return models.DetectResponse(
            ulcp_count=out["ulcp_count"],
            categories=out["categories"],
            pairs=out["pairs"],
            warnings=out["warnings"],
        )

    @app.post("/transform", response_model=models.TransformResponse)
    def transform(req: models.TransformRequest):
        trace = parse_trace(req.trace)
        free, topo, plan = transform_trace(trace)
        removed = sorted(sid for sid, ls in plan.locksets.items() if not ls)
        return models.TransformResponse(
            trace=serialize_trace(free),
            topology=topo.to_json(),
            locksets=plan.to_json(),
            removed=removed,
        )

    @app.post("/replay", response_model=models.ReplayResponse)
    def do_replay(req: models.ReplayRequest):
        if not req.policy_ok():
            raise HTTPException(
                status_code=400,
                detail=f"unknown policy {req.policy!r}; choose from {sorted(POLICIES)}")
        if not 1 <= req.runs <= 1000:
            raise HTTPException(status_code=400, detail="runs must be in 1..1000")
        trace = parse_trace(req.trace)
        results = [replay(trace, req.policy, seed=req.seed + i, dynamic=req.dynamic)
                   for i in range(req.runs)]
        payloads = [r.to_json() for r in results]
        # compare outcomes only; the seed is run metadata, not a result
        outcomes = [{k: v for k, v in p.items() if k != "seed"} for p in payloads]
        return models.ReplayResponse(
            results=payloads,
            makespans=[r.makespan for r in results],
            identical=all(o == outcomes[0] for o in outcomes[1:]),
        )

    @app.post("/report", response_model=models.ReportResponse)
    def report(req: models.ReportRequest):
        if (req.workload is None) == (req.trace is None):
            raise HTTPException(
                status_code=400, detail="provide exactly one of workload or trace")
        if req.policy not in POLICIES:
            raise HTTPException(status_code=400, detail=f"unknown policy {req.policy!r}")
        if req.workload is not None:
            rep = report_from_workload(
                req.workload, seed=req.seed, params=req.params or None,
                policy=req.policy, dynamic=req.dynamic, workload=req.name)
        else:
            rep = build_report(parse_trace(req.trace), seed=req.seed,
                               policy=req.policy, dynamic=req.dynamic,
                               workload=req.name)
        return models.ReportResponse(report=rep, text=render_text(rep))

    @app.post("/sweep", response_model=models.SweepResponse)
    def sweep(req: models.SweepRequest):
        if not req.values:
            raise HTTPException(status_code=400, detail="values must be non-empty")
        out = sweep_report(req.workload, param=req.param, values=req.values,
                           seed=req.seed, workload=req.name)
        return models.SweepResponse(rows=out["rows"], csv=out["csv"])

    @app.get("/corpus", response_model=models.CorpusListResponse)
    def corpus_list():
        entries = []
        for name in corpus_names():
            _, info = load_corpus(name)
            entries.append(models.CorpusEntry(
                name=name, seed=info.get("seed", 0),
                params=info.get("params", {}), notes=info.get("notes", "")))
        return models.CorpusListResponse(workloads=entries)

    @app.post("/corpus/{name}/run", response_model=models.ReportResponse)
    def corpus_run(name: str, req: models.CorpusRunRequest):
        try:
            rep = run_corpus(name, seed=req.seed, params=req.params or None)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no corpus workload {name!r}")
        return models.ReportResponse(report=rep, text=render_text(rep))

    return app


app = create_app()
