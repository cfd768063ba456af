"""Command-line client for the analysis service.

Every subcommand builds an HTTP request and sends it to the service; by
default the service runs in-process (no sockets), while ``--server`` points
the same client at a remote instance. Exit codes: 0 success, 1 usage error,
2 invalid input (trace/workload rejected), 3 analysis error (replay or
transform could not complete).
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx

# error codes that mean the *input* was bad vs. the *analysis* failed
INPUT_CODES = {
    "MALFORMED_RECORD", "INVARIANT_VIOLATION", "SYNTAX_ERROR", "UNBALANCED_LOCK",
    "UNBOUND_REGISTER", "MARKER_NOT_FOUND", "UNBALANCED_SLICE",
}
ANALYSIS_CODES = {
    "DEADLOCK", "ORDER_UNSATISFIABLE", "NOT_REEXECUTABLE", "CYCLIC_CONSTRAINT",
    "MISSING_LABEL",
}

ENV_SEED = "LOCKLENS_SEED"


class ServiceError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


class Client:
    """Thin wrapper: in-process ASGI by default, remote with --server."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=300.0)
        else:
            # sync-over-ASGI bridge; runs the service in-process, no sockets
            import warnings

            with warnings.catch_warnings():
                # starlette's deprecation notice subclasses UserWarning
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app, raise_server_exceptions=False)

    def call(self, method: str, path: str, payload: dict | None = None) -> dict:
        try:
            resp = self._client.request(method, path, json=payload)
        except httpx.HTTPError as exc:
            raise ServiceError(3, f"cannot reach service: {exc}") from exc
        if resp.status_code == 422 and "error" in _safe_json(resp):
            err = resp.json()["error"]
            code = err.get("code", "ERROR")
            exit_code = 2 if code in INPUT_CODES else 3 if code in ANALYSIS_CODES else 3
            raise ServiceError(exit_code, f"{code}: {err.get('message', '')}")
        if resp.status_code == 404:
            raise ServiceError(2, _detail(resp))
        if resp.status_code >= 400:
            # 400s are request-shape problems: bad flags or flag combinations
            raise ServiceError(1, _detail(resp))
        return resp.json()

    def close(self):
        self._client.close()


def _safe_json(resp: httpx.Response) -> dict:
    try:
        out = resp.json()
        return out if isinstance(out, dict) else {}
    except ValueError:
        return {}


def _detail(resp: httpx.Response) -> str:
    body = _safe_json(resp)
    if "detail" in body:
        return str(body["detail"])
    return f"service returned HTTP {resp.status_code}"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config {path} must hold a JSON object")
    return cfg


def _resolve_seed(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise click.UsageError(f"{ENV_SEED} must be an integer, got {env!r}")
    return int(cfg.get("seed", 0))


def _parse_sets(pairs: tuple[str, ...]) -> dict[str, int]:
    params = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise click.UsageError(f"--set expects NAME=INT, got {item!r}")
        try:
            params[key] = int(value)
        except ValueError:
            raise click.UsageError(f"--set {key} needs an integer, got {value!r}")
    return params


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise click.UsageError(f"cannot read {path}: {exc}")


def _write_out(path: str | None, text: str):
    if path is None or path == "-":
        click.echo(text, nl=not text.endswith("\n"))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _emit(obj, as_json: bool, text: str | None = None):
    if as_json:
        click.echo(json.dumps(obj, indent=2, sort_keys=True))
    elif text is not None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        click.echo(json.dumps(obj, indent=2, sort_keys=True))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Use a running service instead of in-process execution.")
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="JSON file with defaults (seed, server); flags win.")
@click.pass_context
def cli(ctx, server, config_path):
    """Record, analyze, transform, and replay lock-contention traces."""
    cfg = _load_config(config_path)
    ctx.obj = {
        "cfg": cfg,
        "client": Client(server or cfg.get("server")),
    }
    ctx.call_on_close(ctx.obj["client"].close)


@cli.command()
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", default=None, metavar="FILE",
              help="Write the recorded trace here (default: stdout).")
@click.option("--seed", type=int, default=None, help="Recording seed.")
@click.option("--set", "set_", multiple=True, metavar="NAME=INT",
              help="Override a workload parameter (repeatable).")
@click.option("--json", "as_json", is_flag=True, help="Print stats as JSON.")
@click.pass_obj
def simulate(obj, workload, output, seed, set_, as_json):
    """Record a workload into a deterministic trace."""
    payload = {
        "workload": _read(workload),
        "seed": _resolve_seed(seed, obj["cfg"]),
        "params": _parse_sets(set_),
    }
    out = obj["client"].call("POST", "/simulate", payload)
    _write_out(output, out["trace"])
    stats = {k: out[k] for k in ("makespan", "threads", "events", "locks")}
    if output is not None:
        _emit(stats, as_json,
              f"recorded {out['events']} events / {out['threads']} threads, "
              f"makespan {out['makespan']} -> {output}")


@cli.command()
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the full pair list.")
@click.pass_obj
def detect(obj, trace, as_json):
    """Classify lock contention pairs in a recorded trace."""
    out = obj["client"].call("POST", "/detect", {"trace": _read(trace)})
    cats = ", ".join(f"{k}={v}" for k, v in sorted(out["categories"].items()))
    text = (f"{out['ulcp_count']} unnecessary pair(s) of {len(out['pairs'])}"
            + (f"  [{cats}]" if cats else ""))
    for w in out["warnings"]:
        text += f"\nwarning: {w}"
    _emit(out, as_json, text)


@cli.command()
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", default=None, metavar="FILE",
              help="Write the transformed trace here (default: stdout).")
@click.option("--topology", "topology_path", default=None, metavar="FILE",
              help="Also write the conflict topology as JSON.")
@click.option("--json", "as_json", is_flag=True, help="Print the plan as JSON.")
@click.pass_obj
def transform(obj, trace, output, topology_path, as_json):
    """Rewrite a trace with per-conflict locks; unnecessary ones are dropped."""
    out = obj["client"].call("POST", "/transform", {"trace": _read(trace)})
    _write_out(output, out["trace"])
    if topology_path:
        with open(topology_path, "w", encoding="utf-8") as fh:
            json.dump(out["topology"], fh, indent=2, sort_keys=True)
    if output is not None:
        plan = {"topology": out["topology"], "locksets": out["locksets"],
                "removed": out["removed"]}
        _emit(plan, as_json,
              f"{len(out['topology']['edges'])} conflict edge(s), "
              f"{len(out['removed'])} section(s) lock-free -> {output}")


@cli.command()
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", default="elsc", show_default=True,
              type=click.Choice(["orig", "elsc", "sync", "mem"]),
              help="Grant-order policy.")
@click.option("--seed", type=int, default=None, help="Base seed for tie-breaks.")
@click.option("--runs", type=int, default=1, show_default=True,
              help="Replay count (seeds increment from the base).")
@click.option("--dynamic/--no-dynamic", default=True, show_default=True,
              help="Prune inherited locks whose guard already completed.")
@click.option("--json", "as_json", is_flag=True, help="Print full results as JSON.")
@click.pass_obj
def replay(obj, trace, policy, seed, runs, dynamic, as_json):
    """Re-execute a trace under a scheduling policy."""
    payload = {
        "trace": _read(trace),
        "policy": policy,
        "seed": _resolve_seed(seed, obj["cfg"]),
        "runs": runs,
        "dynamic": dynamic,
    }
    out = obj["client"].call("POST", "/replay", payload)
    first = out["results"][0]
    text = (f"{policy}: makespan(s) {out['makespans']}"
            + ("  [bit-identical]" if out["identical"] and runs > 1 else "")
            + f"\nfinal memory: {first['final_memory']}")
    _emit(out, as_json, text)


@cli.command()
@click.argument("workload", required=False,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_path", default=None, metavar="FILE",
              type=click.Path(exists=True, dir_okay=False),
              help="Analyze an existing trace instead of recording.")
@click.option("--seed", type=int, default=None, help="Recording/replay seed.")
@click.option("--policy", default="elsc", show_default=True,
              type=click.Choice(["orig", "elsc", "sync", "mem"]))
@click.option("--set", "set_", multiple=True, metavar="NAME=INT",
              help="Override a workload parameter (repeatable).")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
@click.pass_obj
def report(obj, workload, trace_path, seed, policy, set_, as_json):
    """Full pipeline: detect, transform, replay, attribute cost, rank."""
    if (workload is None) == (trace_path is None):
        raise click.UsageError("provide exactly one of WORKLOAD or --trace")
    payload = {
        "seed": _resolve_seed(seed, obj["cfg"]),
        "policy": policy,
        "params": _parse_sets(set_),
        "name": workload or trace_path,
    }
    if workload:
        payload["workload"] = _read(workload)
    else:
        payload["trace"] = _read(trace_path)
    out = obj["client"].call("POST", "/report", payload)
    _emit(out["report"], as_json, out["text"])


@cli.command()
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--threads", default=None, metavar="CSV",
              help="Sweep the thread-count parameter T over these values.")
@click.option("--sizes", default=None, metavar="CSV",
              help="Sweep the input-size parameter N over these values.")
@click.option("--seed", type=int, default=None, help="Recording seed.")
@click.option("--csv", "csv_path", default=None, metavar="FILE",
              help="Write the CSV here (default: stdout).")
@click.option("--json", "as_json", is_flag=True, help="Print rows as JSON.")
@click.pass_obj
def sweep(obj, workload, threads, sizes, seed, csv_path, as_json):
    """Scale one parameter and chart how contention grows."""
    if (threads is None) == (sizes is None):
        raise click.UsageError("provide exactly one of --threads or --sizes")
    param, raw = ("T", threads) if threads is not None else ("N", sizes)
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"--{'threads' if threads else 'sizes'} expects "
                               f"comma-separated integers, got {raw!r}")
    if not values:
        raise click.UsageError("no sweep values given")
    payload = {
        "workload": _read(workload),
        "param": param,
        "values": values,
        "seed": _resolve_seed(seed, obj["cfg"]),
        "name": workload,
    }
    out = obj["client"].call("POST", "/sweep", payload)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(out["csv"])
        click.echo(f"wrote {len(out['rows'])} rows -> {csv_path}")
    else:
        _emit(out["rows"], as_json, out["csv"])


@cli.group()
def corpus():
    """Bundled benchmark workloads."""


@corpus.command("list")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def corpus_list(obj, as_json):
    """List bundled workloads."""
    out = obj["client"].call("GET", "/corpus")
    lines = []
    for w in out["workloads"]:
        params = " ".join(f"{k}={v}" for k, v in sorted(w["params"].items()))
        lines.append(f"{w['name']:16s} seed={w['seed']}"
                     + (f" {params}" if params else ""))
    _emit(out, as_json, "\n".join(lines))


@corpus.command("run")
@click.argument("name")
@click.option("--seed", type=int, default=None,
              help="Override the bundled recording seed.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def corpus_run(obj, name, seed, as_json):
    """Record + analyze a bundled workload and check its expectations."""
    payload = {"seed": seed}
    out = obj["client"].call("POST", f"/corpus/{name}/run", payload)
    rep = out["report"]
    text = out["text"]
    for c in rep.get("expect", {}).get("checks", []):
        mark = "ok" if c["ok"] else "FAIL"
        text += f"\nexpect {c['check']}: {mark} (got {c['got']})"
    _emit(out, as_json, text)
    if not rep.get("expect", {}).get("ok", True):
        raise ServiceError(3, f"corpus expectations failed for {name}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8787, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except ServiceError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
