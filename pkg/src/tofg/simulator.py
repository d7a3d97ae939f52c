"""Closed-loop replay evaluation.

The ego replans at a fixed interval and follows its plan perfectly,
landing exactly on the planned waypoints (waypoints are spaced one
frame apart, so linear interpolation between them is evaluated at the
knots). All other agents replay their logged states verbatim. Before
every placement the next pose is checked against replayed vehicle boxes
and against the lane map; on a predicted collision or an off-road
excursion beyond half a lane width the auto-correction latches and the
ego decelerates along its current heading to a stop for the rest of the
simulation, logging a single event.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import GraphConfig, ModelConfig, SimConfig
from .geometry import OrientedRect, rects_intersect, wrap_angle
from .graph import LaneGraph, build_lane_graph, build_tofg
from .metrics import PlanReport, plan_metrics
from .model import predict
from .nn import ParamStore
from .scene import AgentState, AgentTrack, Scenario

__all__ = [
    "SimConfig",
    "SimTrace",
    "OraclePlanner",
    "StationaryPlanner",
    "ConstantVelocityPlanner",
    "ModelPlanner",
    "PLANNER_NAMES",
    "make_planner",
    "run",
    "batch_eval",
    "BatchResult",
    "expert_states",
    "report_for_trace",
    "trace_to_dict",
]

PLANNER_NAMES = ("oracle", "stationary", "constant_velocity", "model")


class OraclePlanner:
    """Emits the logged ego future; the ideal planner for calibration."""

    def __init__(self, scenario: Scenario, horizon: int = 12):
        self._ego = scenario.ego
        self.horizon = horizon

    def plan(self, view: Scenario, frame: int, lane_graph: LaneGraph | None = None) -> np.ndarray:
        rows = []
        last = self._ego.states[-1]
        for j in range(1, self.horizon + 1):
            st = self._ego.state_at(frame + j) or last
            rows.append([st.x, st.y, st.theta])
        return np.array(rows)


class StationaryPlanner:
    """Never moves; a lower-bound stub."""

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def plan(self, view: Scenario, frame: int, lane_graph: LaneGraph | None = None) -> np.ndarray:
        st = view.ego.state_at(frame)
        return np.tile([st.x, st.y, st.theta], (self.horizon, 1))


class ConstantVelocityPlanner:
    """Holds the current velocity; drives straight at the current speed."""

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def plan(self, view: Scenario, frame: int, lane_graph: LaneGraph | None = None) -> np.ndarray:
        st = view.ego.state_at(frame)
        steps = np.arange(1, self.horizon + 1)[:, None] * view.frame_interval
        xy = np.array([st.x, st.y]) + steps * np.array([st.vx, st.vy])
        theta = math.atan2(st.vy, st.vx) if st.speed > 1e-9 else st.theta
        return np.column_stack([xy, np.full(self.horizon, theta)])


class ModelPlanner:
    """Builds a TOFG over the driven history and predicts with the model."""

    def __init__(self, params: ParamStore, model_config: ModelConfig, graph_config: GraphConfig):
        self.params = params
        self.model_config = model_config
        self.graph_config = graph_config
        self.horizon = model_config.horizon

    def plan(self, view: Scenario, frame: int, lane_graph: LaneGraph | None = None) -> np.ndarray:
        frames = range(frame - self.model_config.history + 1, frame + 1)
        tofg = build_tofg(view, frames, self.graph_config, lane_graph=lane_graph)
        waypoints, _ = predict(tofg, self.model_config, self.params)
        return waypoints


def make_planner(
    name: str,
    scenario: Scenario,
    params: ParamStore | None = None,
    model_config: ModelConfig | None = None,
    graph_config: GraphConfig | None = None,
    horizon: int = 12,
):
    """Planner factory by name: oracle, stationary, constant_velocity,
    or model (which needs params)."""
    if name == "oracle":
        return OraclePlanner(scenario, horizon=horizon)
    if name == "stationary":
        return StationaryPlanner(horizon=horizon)
    if name == "constant_velocity":
        return ConstantVelocityPlanner(horizon=horizon)
    if name == "model":
        if params is None:
            raise ValueError("model planner needs trained parameters")
        return ModelPlanner(
            params, model_config or ModelConfig(), graph_config or GraphConfig()
        )
    raise ValueError(f"unknown planner {name!r}; expected one of {PLANNER_NAMES}")


@dataclass(eq=False)
class SimTrace:
    """Everything one simulation produced.

    states rows are (frame, x, y, theta, vx, vy, yaw_rate) on the
    scenario frame clock, one per frame from warmup end to the horizon;
    velocities follow the forward convention of the scenario log.
    """

    scenario_id: str
    frames: list[int]
    states: np.ndarray
    plans: list[tuple[int, np.ndarray]]
    events: list[dict]

    @property
    def driven(self) -> np.ndarray:
        """Driven trajectory as (n, 3) rows of x, y, theta."""
        return self.states[:, 1:4]

    @property
    def n_corrections(self) -> int:
        return len(self.events)


def expert_states(scenario: Scenario, frames) -> np.ndarray:
    """Logged ego (x, y, theta) rows over the given frames."""
    ego = scenario.ego
    rows = []
    for f in frames:
        st = ego.state_at(f)
        if st is None:
            raise ValueError(f"scenario {scenario.id!r}: ego missing at frame {f}")
        rows.append([st.x, st.y, st.theta])
    return np.array(rows)


def _ego_view(scenario: Scenario, driven: np.ndarray) -> Scenario:
    """Scenario with the ego's log replaced by the driven states so far.

    Driven velocities are backward differences of the driven positions;
    warmup frames before the simulation keep their logged states.
    """
    ego = scenario.ego
    s0 = int(driven[0, 0])
    dt = scenario.frame_interval
    states: list[AgentState] = [s for s in ego.states if s.frame < s0]
    prev = None
    for i, row in enumerate(driven):
        frame, x, y, theta = int(row[0]), row[1], row[2], row[3]
        if i == 0:
            logged = ego.state_at(s0)
            vx, vy, yaw_rate = logged.vx, logged.vy, logged.yaw_rate
        else:
            vx = (x - prev[0]) / dt
            vy = (y - prev[1]) / dt
            yaw_rate = wrap_angle(theta - prev[2]) / dt
        states.append(AgentState(frame, x, y, theta, vx, vy, yaw_rate))
        prev = (x, y, theta)
    agents = [
        a
        if a.id != scenario.ego_id
        else AgentTrack(id=a.id, length=a.length, width=a.width, states=states)
        for a in scenario.agents
    ]
    return Scenario(
        id=scenario.id,
        lanes=scenario.lanes,
        agents=agents,
        ego_id=scenario.ego_id,
        route_lane_ids=scenario.route_lane_ids,
        goal=scenario.goal,
        traffic_lights=scenario.traffic_lights,
        frame_interval=scenario.frame_interval,
    )


def _collides(scenario: Scenario, xy, theta: float, frame: int, ego: AgentTrack) -> bool:
    ego_rect = OrientedRect(xy, theta, 0.5 * ego.length, 0.5 * ego.width)
    for agent in scenario.agents:
        if agent.id == ego.id:
            continue
        st = agent.state_at(frame)
        if st is None:
            continue
        other = OrientedRect((st.x, st.y), st.theta, 0.5 * agent.length, 0.5 * agent.width)
        if rects_intersect(ego_rect, other):
            return True
    return False


def _offroad(lane_graph: LaneGraph, xy, factor: float) -> bool:
    """True when the nearest lane rectangle is farther than factor times
    that lane's width (half a lane width by default)."""
    d = np.asarray(xy, dtype=float) - lane_graph.midpoints
    lon = np.abs((d * lane_graph.axes_long).sum(axis=1)) - 0.5 * lane_graph.lengths
    lat = np.abs((d * lane_graph.axes_lat).sum(axis=1)) - 0.5 * lane_graph.widths
    dist = np.hypot(np.maximum(lon, 0.0), np.maximum(lat, 0.0))
    i = int(dist.argmin())
    return dist[i] > factor * lane_graph.widths[i]


def _exact_multiple(a: float, b: float) -> int | None:
    """a / b as an integer when a is a near-exact multiple of b."""
    q = a / b
    r = round(q)
    if r < 1 or abs(q - r) > 1e-9:
        return None
    return int(r)


def run(
    scenario: Scenario,
    planner,
    config: SimConfig | None = None,
    graph_config: GraphConfig | None = None,
    lane_graph: LaneGraph | None = None,
) -> SimTrace:
    """Drive one scenario closed-loop with the given planner."""
    cfg = config or SimConfig()
    cfg.validate()
    gcfg = graph_config or GraphConfig()
    dt = scenario.frame_interval
    steps_per_replan = _exact_multiple(cfg.replan_interval, dt)
    if steps_per_replan is None:
        raise ValueError("replan_interval must be a positive multiple of frame_interval")
    n_steps = _exact_multiple(cfg.duration, dt)
    if n_steps is None:
        raise ValueError("duration must be a positive multiple of frame_interval")

    ego = scenario.ego
    s0 = ego.first_frame + cfg.history - 1
    end_frame = s0 + n_steps
    if ego.last_frame < end_frame:
        raise ValueError(
            f"scenario {scenario.id!r} too short: ego log ends at frame {ego.last_frame}, "
            f"simulation needs frame {end_frame}"
        )
    for f in range(ego.first_frame, s0 + 1):
        if ego.state_at(f) is None:
            raise ValueError(f"scenario {scenario.id!r}: ego missing at warmup frame {f}")

    lg = lane_graph if lane_graph is not None else build_lane_graph(scenario, gcfg.target_segment_len)
    st0 = ego.state_at(s0)
    states = np.zeros((n_steps + 1, 7))
    states[0] = [s0, st0.x, st0.y, st0.theta, st0.vx, st0.vy, st0.yaw_rate]
    plans: list[tuple[int, np.ndarray]] = []
    events: list[dict] = []
    corrected = False
    corr_heading = 0.0
    corr_speed = 0.0
    current_plan: np.ndarray | None = None
    plan_frame = 0

    for k in range(n_steps):
        f = s0 + k
        cur = states[k]
        if not corrected and k % steps_per_replan == 0:
            view = _ego_view(scenario, states[: k + 1])
            plan = np.asarray(planner.plan(view, f, lg), dtype=float)
            if plan.ndim != 2 or plan.shape[1] not in (2, 3) or plan.shape[0] < 1:
                raise ValueError(f"planner returned shape {plan.shape}, expected (H, 2) or (H, 3)")
            if plan.shape[0] < steps_per_replan:
                raise ValueError(
                    f"plan horizon {plan.shape[0]} shorter than replan interval "
                    f"({steps_per_replan} frames)"
                )
            plans.append((f, plan))
            current_plan, plan_frame = plan, f

        if not corrected:
            q = f + 1 - plan_frame
            wp = current_plan[q - 1]
            nxt_xy = wp[:2]
            if current_plan.shape[1] == 3:
                nxt_theta = wrap_angle(wp[2])
            else:
                step_vec = nxt_xy - cur[1:3]
                nxt_theta = (
                    math.atan2(step_vec[1], step_vec[0])
                    if np.hypot(*step_vec) > 1e-12
                    else cur[3]
                )
            cause = None
            if cfg.collision_check and _collides(scenario, nxt_xy, nxt_theta, f + 1, ego):
                cause = "collision"
            elif _offroad(lg, nxt_xy, cfg.offroad_tolerance_factor):
                cause = "off_road"
            if cause is not None:
                events.append({"frame": f + 1, "cause": cause})
                corrected = True
                corr_heading = float(cur[3])
                corr_speed = float(np.hypot(cur[4], cur[5]))

        if corrected:
            corr_speed = max(0.0, corr_speed - cfg.correction_decel * dt)
            direction = np.array([math.cos(corr_heading), math.sin(corr_heading)])
            nxt_xy = cur[1:3] + corr_speed * dt * direction
            nxt_theta = corr_heading

        states[k + 1, 0] = f + 1
        states[k + 1, 1:3] = nxt_xy
        states[k + 1, 3] = nxt_theta
        # Forward-convention velocity of the step just taken, stored at k.
        states[k, 4:6] = (nxt_xy - cur[1:3]) / dt
        states[k, 6] = wrap_angle(nxt_theta - cur[3]) / dt
    states[n_steps, 4:7] = states[n_steps - 1, 4:7]

    return SimTrace(
        scenario_id=scenario.id,
        frames=list(range(s0, end_frame + 1)),
        states=states,
        plans=plans,
        events=events,
    )


def report_for_trace(trace: SimTrace, scenario: Scenario, w_theta: float = 2.5) -> PlanReport:
    expert = expert_states(scenario, trace.frames)
    return plan_metrics(trace.driven, expert, scenario.goal, scenario, w_theta=w_theta)


@dataclass(eq=False)
class BatchResult:
    """Per-scenario reports plus field-wise means over the successes."""

    rows: list[tuple[str, PlanReport]]
    mean: dict[str, float]
    traces: list[SimTrace] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)


def batch_eval(
    scenarios: list[Scenario],
    planner_factory,
    config: SimConfig | None = None,
    graph_config: GraphConfig | None = None,
    jobs: int = 1,
) -> BatchResult:
    """Simulate every scenario and aggregate plan metrics.

    planner_factory maps a scenario to its planner. Failures are
    recorded with the scenario id and do not stop the batch; rows keep
    the input order.
    """
    if not scenarios:
        raise ValueError("batch_eval needs at least one scenario")
    cfg = config or SimConfig()

    def one(scenario: Scenario):
        planner = planner_factory(scenario)
        trace = run(scenario, planner, cfg, graph_config)
        return trace, report_for_trace(trace, scenario, w_theta=cfg.w_theta)

    results: list = [None] * len(scenarios)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(one, s) for s in scenarios]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    results[i] = exc
    else:
        for i, s in enumerate(scenarios):
            try:
                results[i] = one(s)
            except Exception as exc:
                results[i] = exc

    rows: list[tuple[str, PlanReport]] = []
    traces: list[SimTrace] = []
    failures: list[tuple[str, str]] = []
    for scenario, res in zip(scenarios, results):
        if isinstance(res, Exception):
            failures.append((scenario.id, str(res)))
            continue
        trace, report = res
        rows.append((scenario.id, report))
        traces.append(trace)

    mean: dict[str, float] = {}
    if rows:
        keys = rows[0][1].to_dict().keys()
        for key in keys:
            mean[key] = float(np.mean([r.to_dict()[key] for _, r in rows]))
    return BatchResult(rows=rows, mean=mean, traces=traces, failures=failures)


def trace_to_dict(trace: SimTrace) -> dict:
    return {
        "scenario_id": trace.scenario_id,
        "frames": trace.frames,
        "states": trace.states,
        "plans": [{"frame": f, "waypoints": wp} for f, wp in trace.plans],
        "events": trace.events,
    }
