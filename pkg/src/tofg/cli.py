"""Command-line front end.

Every subcommand is a thin client of the HTTP service: by default the
app runs in-process, with --server the same calls go over the network.
Artifacts (scenario files, graph JSON, checkpoints, loss curves, plan
reports, attention CSVs) are written canonically and atomically, and
each command drops a manifest next to its outputs recording the
command, config, seed, input hashes, and timing. Primary outputs are
byte-identical across reruns with equal inputs and seeds; manifests may
differ in the timing field only.

Exit codes: 0 success, 2 usage, 3 validation, 4 IO, 5 numeric.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import httpx

from . import __version__
from .fileio import read_json, sha256_file, write_csv, write_json
from .scene import SCENARIO_KINDS
from .simulator import PLANNER_NAMES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_NUMERIC = 5

CONFIG_SECTIONS = ("graph", "model", "train", "sim")


class ClientError(RuntimeError):
    """Service-reported failure with a mapped exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class ServiceClient:
    """Talks to the service in-process, or over HTTP when server is set."""

    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                # the in-process client is an implementation detail; keep
                # its deprecation chatter out of every CLI invocation
                warnings.filterwarnings(
                    "ignore", message="Using `httpx` with `starlette.testclient`"
                )
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def call(self, method: str, path: str, body: dict | None = None) -> dict:
        try:
            resp = self._client.request(method, path, json=body)
        except (httpx.HTTPError, OSError) as exc:
            raise ClientError(EXIT_IO, f"service unreachable: {exc}") from exc
        if resp.status_code == 200:
            return resp.json()
        try:
            detail = resp.json().get("detail")
        except json.JSONDecodeError:
            detail = resp.text
        if isinstance(detail, dict):
            kind = detail.get("kind", "")
            message = detail.get("message", str(detail))
        else:
            kind = ""
            message = str(detail)
        if kind == "numeric":
            code = EXIT_NUMERIC
        elif resp.status_code == 422:
            code = EXIT_VALIDATION
        else:
            code = 1
        raise ClientError(code, f"service error ({resp.status_code}): {message}")


def parse_frames(spec: str) -> list[int]:
    """Frame selections: a single frame '7' or a half-open range '3:8'."""
    try:
        if ":" in spec:
            lo_s, hi_s = spec.split(":", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi <= lo:
                raise ValueError
            return list(range(lo, hi))
        return [int(spec)]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad frame spec {spec!r}; expected 'K' or 'LO:HI'"
        ) from None


def load_config_doc(path: str | None) -> dict:
    if path is None:
        return {}
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ValueError(
            f"config file {path} has unknown sections {sorted(unknown)}; "
            f"expected {list(CONFIG_SECTIONS)}"
        )
    return {k: dict(v) for k, v in doc.items()}


def _apply_seed(config: dict, seed: int | None) -> dict:
    """One --seed flag drives both parameter init and data shuffling."""
    if seed is None:
        return config
    config.setdefault("model", {})["seed"] = seed
    config.setdefault("train", {})["seed"] = seed
    return config


def _manifest_path(out: Path, is_dir: bool) -> Path:
    return out / "manifest.json" if is_dir else out.with_name(out.name + ".manifest.json")


def write_manifest(
    out: Path,
    is_dir: bool,
    command: str,
    args_doc: dict,
    config: dict,
    inputs: list[Path],
    outputs: list[Path],
    t_start: float,
    extra: dict | None = None,
) -> Path:
    doc = {
        "command": command,
        "args": args_doc,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "timings": {"wall_s": time.time() - t_start},
    }
    if extra:
        doc["extra"] = extra
    path = _manifest_path(out, is_dir)
    write_json(path, doc)
    return path


def _scenario_paths(raw: list[str]) -> list[Path]:
    """Expand directories to their sorted scenario files."""
    paths: list[Path] = []
    for r in raw:
        p = Path(r)
        if p.is_dir():
            found = sorted(q for q in p.glob("*.json") if not q.name.endswith("manifest.json"))
            if not found:
                raise FileNotFoundError(f"no scenario files in directory {p}")
            paths.extend(found)
        else:
            paths.append(p)
    return paths


def cmd_gen_scenarios(args, client: ServiceClient) -> int:
    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resp = client.call(
        "POST",
        "/scenarios/generate",
        {"kind": args.kind, "count": args.count, "seed": args.seed},
    )
    written: list[Path] = []
    for doc in resp["scenarios"]:
        p = out / f"{doc['id']}.json"
        write_json(p, doc)
        written.append(p)
    write_manifest(
        out,
        True,
        "gen-scenarios",
        {"kind": args.kind, "count": args.count, "seed": args.seed},
        {},
        [],
        written,
        t0,
    )
    print(f"wrote {len(written)} scenario files to {out}")
    return EXIT_OK


def cmd_build_graph(args, client: ServiceClient) -> int:
    t0 = time.time()
    config = load_config_doc(args.config)
    scenario_doc = read_json(args.scenario)
    body = {"scenario": scenario_doc, "graph": config.get("graph", {})}
    if args.frames is not None:
        body["frames"] = args.frames
    resp = client.call("POST", "/graph/build", body)
    out = Path(args.out)
    write_json(out, resp["graph"])
    write_manifest(
        out,
        False,
        "build-graph",
        {"scenario": str(args.scenario), "frames": args.frames},
        config,
        [Path(args.scenario)],
        [out],
        t0,
        extra={"counts": resp["counts"]},
    )
    c = resp["counts"]
    print(
        f"wrote graph to {out}: {c['nodes_per_frame']} nodes/frame x {c['frames']} frames, "
        f"{c['multiscale_edges']} multiscale, {c['interaction_edges']} interaction, "
        f"{c['temporal_edges']} temporal edges"
    )
    return EXIT_OK


def cmd_train(args, client: ServiceClient) -> int:
    t0 = time.time()
    config = _apply_seed(load_config_doc(args.config), args.seed)
    paths = _scenario_paths(args.corpus)
    scenarios = [read_json(p) for p in paths]
    body = {
        "scenarios": scenarios,
        "graph": config.get("graph", {}),
        "model": config.get("model", {}),
        "train": config.get("train", {}),
    }
    resp = client.call("POST", "/model/train", body)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    loss_path = out / "loss.csv"
    write_json(ckpt_path, resp["checkpoint"])
    write_csv(
        loss_path,
        ["epoch", "loss"],
        [[i, float(v)] for i, v in enumerate(resp["history"])],
    )
    write_manifest(
        out,
        True,
        "train",
        {"corpus": [str(p) for p in paths], "seed": args.seed},
        config,
        paths,
        [ckpt_path, loss_path],
        t0,
        extra={"n_samples": resp["n_samples"], "epochs": len(resp["history"])},
    )
    hist = resp["history"]
    print(
        f"trained on {resp['n_samples']} samples for {len(hist)} epochs: "
        f"loss {hist[0]:.6g} -> {hist[-1]:.6g}; checkpoint at {ckpt_path}"
    )
    return EXIT_OK


def _forward_body(args, config: dict) -> tuple[dict, list[Path]]:
    scenario_doc = read_json(args.scenario)
    inputs = [Path(args.scenario)]
    body = {
        "scenario": scenario_doc,
        "graph": config.get("graph", {}),
        "model": config.get("model", {}),
    }
    if args.checkpoint is not None:
        body["checkpoint"] = read_json(args.checkpoint)
        inputs.append(Path(args.checkpoint))
    if args.frames is not None:
        body["frames"] = args.frames
    return body, inputs


def cmd_predict(args, client: ServiceClient) -> int:
    t0 = time.time()
    config = _apply_seed(load_config_doc(args.config), args.seed)
    body, inputs = _forward_body(args, config)
    resp = client.call("POST", "/model/predict", body)
    out = Path(args.out)
    write_json(
        out,
        {
            "scenario_id": resp["scenario_id"],
            "frames": resp["frames"],
            "horizon": len(resp["waypoints"]),
            "waypoints": resp["waypoints"],
            "waypoints_ego": resp["waypoints_ego"],
        },
    )
    write_manifest(
        out,
        False,
        "predict",
        {"scenario": str(args.scenario), "checkpoint": args.checkpoint, "seed": args.seed},
        config,
        inputs,
        [out],
        t0,
    )
    print(f"wrote {len(resp['waypoints'])} waypoints to {out}")
    return EXIT_OK


def cmd_export_attention(args, client: ServiceClient) -> int:
    t0 = time.time()
    config = _apply_seed(load_config_doc(args.config), args.seed)
    body, inputs = _forward_body(args, config)
    resp = client.call("POST", "/model/predict", body)
    att = resp["attention"]
    out = Path(args.out)
    write_csv(out, att["header"], att["rows"])
    write_manifest(
        out,
        False,
        "export-attention",
        {"scenario": str(args.scenario), "checkpoint": args.checkpoint, "seed": args.seed},
        config,
        inputs,
        [out],
        t0,
        extra={"n_rows": len(att["rows"]), "n_heads": len(att["header"]) - 5},
    )
    print(f"wrote attention map ({len(att['rows'])} nodes) to {out}")
    return EXIT_OK


def _report_table(rows: list[dict], mean: dict) -> tuple[list[str], list[list]]:
    keys = list(mean.keys()) if mean else (list(rows[0]["report"].keys()) if rows else [])
    header = ["scenario_id", *keys]
    table = [[r["scenario_id"], *[float(r["report"][k]) for k in keys]] for r in rows]
    if mean:
        table.append(["mean", *[float(mean[k]) for k in keys]])
    return header, table


def cmd_simulate(args, client: ServiceClient) -> int:
    t0 = time.time()
    config = _apply_seed(load_config_doc(args.config), args.seed)
    paths = _scenario_paths(args.scenarios)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = list(paths)
    if args.checkpoint is not None:
        inputs.append(Path(args.checkpoint))
    checkpoint = read_json(args.checkpoint) if args.checkpoint is not None else None
    common = {
        "planner": args.planner,
        "graph": config.get("graph", {}),
        "model": config.get("model", {}),
        "sim": config.get("sim", {}),
    }
    if checkpoint is not None:
        common["checkpoint"] = checkpoint
    outputs: list[Path] = []
    extra: dict = {"planner": args.planner}
    if len(paths) == 1:
        resp = client.call(
            "POST", "/simulate", {"scenario": read_json(paths[0]), **common}
        )
        trace = resp["trace"]
        trace_path = out / f"trace_{trace['scenario_id']}.json"
        write_json(trace_path, trace)
        outputs.append(trace_path)
        rows = [{"scenario_id": trace["scenario_id"], "report": resp["report"]}]
        mean = dict(resp["report"])
        failures: list[dict] = []
        extra["events"] = trace["events"]
    else:
        resp = client.call(
            "POST",
            "/simulate/batch",
            {"scenarios": [read_json(p) for p in paths], "jobs": args.jobs, **common},
        )
        rows, mean, failures = resp["rows"], resp["mean"], resp["failures"]
    header, table = _report_table(rows, mean)
    report_path = out / "report.csv"
    write_csv(report_path, header, table)
    outputs.append(report_path)
    if failures:
        extra["failures"] = failures
        for f in failures:
            print(f"scenario {f['scenario_id']} failed: {f['error']}", file=sys.stderr)
    write_manifest(
        out,
        True,
        "simulate",
        {
            "scenarios": [str(p) for p in paths],
            "planner": args.planner,
            "checkpoint": args.checkpoint,
            "jobs": args.jobs,
            "seed": args.seed,
        },
        config,
        inputs,
        outputs,
        t0,
        extra=extra,
    )
    print(f"simulated {len(rows)} scenario(s); report at {report_path}")
    if rows:
        return EXIT_OK
    return EXIT_VALIDATION


def cmd_serve(args, client: ServiceClient | None = None) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tofg",
        description="Temporal occupancy flow graphs: build, train, predict, simulate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--config", default=None, help="JSON config file (sections graph/model/train/sim)")
        p.add_argument("--seed", type=int, default=seed_default, help="master seed for all randomness")
        p.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")

    p = sub.add_parser("gen-scenarios", help="generate synthetic scenario files")
    p.add_argument("--kind", required=True, choices=SCENARIO_KINDS)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    common(p, seed_default=0)
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("build-graph", help="build a graph from a scenario and export JSON")
    p.add_argument("scenario", help="scenario JSON path")
    p.add_argument("--frames", type=parse_frames, default=None, help="'K' or 'LO:HI' (default: all)")
    p.add_argument("--out", required=True, help="output graph JSON path")
    common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the predictor on scenario files")
    p.add_argument("corpus", nargs="+", help="scenario files or directories")
    p.add_argument("--out", required=True, help="output directory (checkpoint.json, loss.csv)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict future ego waypoints for one scenario")
    p.add_argument("scenario", help="scenario JSON path")
    p.add_argument("--checkpoint", default=None, help="checkpoint JSON (default: fresh random)")
    p.add_argument("--frames", type=parse_frames, default=None, help="history window (default: centered)")
    p.add_argument("--out", required=True, help="output prediction JSON path")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="closed-loop evaluation over one or more scenarios")
    p.add_argument("scenarios", nargs="+", help="scenario files or directories")
    p.add_argument("--planner", default="model", choices=PLANNER_NAMES)
    p.add_argument("--checkpoint", default=None, help="checkpoint JSON for the model planner")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for batches")
    p.add_argument("--out", required=True, help="output directory (report.csv, traces)")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-attention", help="export the last-frame attention map as CSV")
    p.add_argument("scenario", help="scenario JSON path")
    p.add_argument("--checkpoint", default=None, help="checkpoint JSON (default: fresh random)")
    p.add_argument("--frames", type=parse_frames, default=None, help="history window (default: centered)")
    p.add_argument("--out", required=True, help="output CSV path")
    common(p)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve, server=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.func is cmd_serve:
            return cmd_serve(args)
        client = ServiceClient(args.server)
        return args.func(args, client)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IsADirectoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
