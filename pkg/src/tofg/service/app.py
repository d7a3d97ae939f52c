"""FastAPI app exposing the pipeline as stateless endpoints.

Core ValueErrors surface as 422 validation responses; numeric failures
(NaN or infinity in a computation) surface as 500 with a numeric kind
marker so clients can map them to a distinct exit code.
"""

from __future__ import annotations

from dataclasses import asdict

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import GraphConfig, ModelConfig, SimConfig, TrainConfig, merge_config
from ..fileio import to_plain
from ..graph import build_tofg, tofg_to_dict
from ..model import (
    attention_csv_rows,
    default_sample_frame,
    extract_sample,
    predict,
    train,
)
from ..nn import NumericError, ParamStore
from ..scene import SCENARIO_KINDS, gen_synthetic, scenario_from_dict, scenario_to_dict
from ..simulator import (
    PLANNER_NAMES,
    make_planner,
    report_for_trace,
    run,
    batch_eval,
    trace_to_dict,
)
from . import schemas


def _default_config_doc() -> dict:
    return {
        "graph": asdict(GraphConfig()),
        "model": asdict(ModelConfig()),
        "train": asdict(TrainConfig()),
        "sim": asdict(SimConfig()),
    }


def _params_from(checkpoint: dict | None, model_cfg: ModelConfig) -> ParamStore:
    if checkpoint is not None:
        return ParamStore.from_dict(checkpoint)
    return ParamStore(seed=model_cfg.seed)


def create_app() -> FastAPI:
    app = FastAPI(title="tofg service", version=__version__)

    @app.exception_handler(NumericError)
    async def _numeric_error(request, exc: NumericError):
        return JSONResponse(
            status_code=500,
            content={"detail": {"kind": "numeric", "message": str(exc)}},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request, exc: ValueError):
        return JSONResponse(
            status_code=422,
            content={"detail": {"kind": "validation", "message": str(exc)}},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/config/defaults")
    def config_defaults() -> dict:
        return _default_config_doc()

    @app.post("/scenarios/generate", response_model=schemas.GenerateResponse)
    def scenarios_generate(req: schemas.GenerateRequest):
        if req.kind not in SCENARIO_KINDS:
            raise ValueError(
                f"unknown scenario kind {req.kind!r}; expected one of {sorted(SCENARIO_KINDS)}"
            )
        docs = [
            to_plain(scenario_to_dict(gen_synthetic(req.kind, req.seed + i)))
            for i in range(req.count)
        ]
        return {"scenarios": docs}

    @app.post("/graph/build", response_model=schemas.BuildGraphResponse)
    def graph_build(req: schemas.BuildGraphRequest):
        scenario = scenario_from_dict(req.scenario)
        gcfg = merge_config(GraphConfig, req.graph)
        ego = scenario.ego
        frames = req.frames if req.frames is not None else list(
            range(ego.first_frame, ego.last_frame + 1)
        )
        tofg = build_tofg(scenario, frames, gcfg)
        counts = {
            "nodes_per_frame": tofg.lane_graph.n_nodes,
            "frames": len(tofg.frames),
            "geometric_edges": len(tofg.lane_graph.geometric_edges()),
            "multiscale_edges": len(tofg.lane_graph.multiscale_edges(gcfg.n_scale)),
            "interaction_edges": sum(len(o.edges["interaction"]) for o in tofg.frames),
            "temporal_edges": len(tofg.temporal_edges),
        }
        return {"graph": to_plain(tofg_to_dict(tofg)), "counts": counts}

    @app.post("/model/train", response_model=schemas.TrainResponse)
    def model_train(req: schemas.TrainRequest):
        if not req.scenarios:
            raise ValueError("train needs at least one scenario")
        gcfg = merge_config(GraphConfig, req.graph)
        mcfg = merge_config(ModelConfig, req.model)
        tcfg = merge_config(TrainConfig, req.train)
        corpus = [
            extract_sample(scenario_from_dict(doc), gcfg, mcfg) for doc in req.scenarios
        ]
        params, history = train(corpus, mcfg, tcfg)
        return {
            "checkpoint": to_plain(params.to_dict()),
            "history": history,
            "n_samples": len(corpus),
        }

    def _forward_request(req: schemas.PredictRequest):
        scenario = scenario_from_dict(req.scenario)
        gcfg = merge_config(GraphConfig, req.graph)
        mcfg = merge_config(ModelConfig, req.model)
        if req.frames is not None:
            frames = list(req.frames)
        else:
            ego = scenario.ego
            span = ego.last_frame - ego.first_frame + 1
            if span >= mcfg.history + mcfg.horizon:
                t0 = default_sample_frame(scenario, mcfg)
            else:
                t0 = ego.last_frame
            frames = list(range(t0 - mcfg.history + 1, t0 + 1))
        tofg = build_tofg(scenario, frames, gcfg)
        params = _params_from(req.checkpoint, mcfg)
        waypoints, att = predict(tofg, mcfg, params)
        ego_state = scenario.ego.state_at(frames[-1])
        header, rows = attention_csv_rows(att)
        return {
            "scenario_id": scenario.id,
            "frames": frames,
            "waypoints": to_plain(waypoints),
            "waypoints_ego": to_plain(waypoints - ego_state.xy),
            "attention": {"header": header, "rows": to_plain(rows)},
        }

    @app.post("/model/predict", response_model=schemas.PredictResponse)
    def model_predict(req: schemas.PredictRequest):
        return _forward_request(req)

    def _build_planner(name, scenario, checkpoint, mcfg, gcfg):
        if name not in PLANNER_NAMES:
            raise ValueError(f"unknown planner {name!r}; expected one of {PLANNER_NAMES}")
        params = _params_from(checkpoint, mcfg) if name == "model" else None
        return make_planner(
            name,
            scenario,
            params=params,
            model_config=mcfg,
            graph_config=gcfg,
            horizon=mcfg.horizon,
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        scenario = scenario_from_dict(req.scenario)
        gcfg = merge_config(GraphConfig, req.graph)
        mcfg = merge_config(ModelConfig, req.model)
        scfg = merge_config(SimConfig, req.sim)
        planner = _build_planner(req.planner, scenario, req.checkpoint, mcfg, gcfg)
        trace = run(scenario, planner, scfg, gcfg)
        report = report_for_trace(trace, scenario, w_theta=scfg.w_theta)
        return {"trace": to_plain(trace_to_dict(trace)), "report": report.to_dict()}

    @app.post("/simulate/batch", response_model=schemas.BatchSimulateResponse)
    def simulate_batch(req: schemas.BatchSimulateRequest):
        scenarios = [scenario_from_dict(doc) for doc in req.scenarios]
        gcfg = merge_config(GraphConfig, req.graph)
        mcfg = merge_config(ModelConfig, req.model)
        scfg = merge_config(SimConfig, req.sim)

        def factory(scenario):
            return _build_planner(req.planner, scenario, req.checkpoint, mcfg, gcfg)

        result = batch_eval(scenarios, factory, scfg, gcfg, jobs=req.jobs)
        return {
            "rows": [
                {"scenario_id": sid, "report": rep.to_dict()} for sid, rep in result.rows
            ],
            "mean": result.mean,
            "failures": [
                {"scenario_id": sid, "error": err} for sid, err in result.failures
            ],
        }

    return app
