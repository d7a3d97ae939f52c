"""Scenario domain model, file format, and synthetic scenario generators.

A scenario bundles the lane map, all agent tracks on a shared frame
clock, the ego route, a goal pose, and per-lane traffic light states.
Values are treated as immutable after construction and are safe to share
across threads read-only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .fileio import write_json
from .geometry import wrap_angle

__all__ = [
    "TrafficLightState",
    "Pose2D",
    "AgentState",
    "AgentTrack",
    "LaneSpec",
    "Scenario",
    "SCENARIO_KINDS",
    "load_scenario",
    "save_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
    "gen_synthetic",
    "state_at",
]

# Shared generator parameters, meters / seconds.
FRAME_INTERVAL = 0.5
N_FRAMES = 48
LANE_WIDTH = 3.5
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0

SCENARIO_KINDS = ("straight", "curve", "lane_change", "overtake")


class TrafficLightState(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"
    NONE = "none"


@dataclass(eq=False)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        self.x = float(self.x)
        self.y = float(self.y)
        self.theta = wrap_angle(self.theta)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(eq=False)
class AgentState:
    """One observed vehicle state on the shared frame clock."""

    frame: int
    x: float
    y: float
    theta: float
    vx: float
    vy: float
    yaw_rate: float

    def __post_init__(self):
        self.frame = int(self.frame)
        self.theta = wrap_angle(self.theta)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(eq=False)
class AgentTrack:
    """One vehicle: bounding box plus its per-frame state log."""

    id: str
    length: float
    width: float
    states: list[AgentState]

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"agent {self.id!r}: length and width must be positive")
        if not self.states:
            raise ValueError(f"agent {self.id!r}: states must be non-empty")
        frames = [s.frame for s in self.states]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"agent {self.id!r}: state frames must be strictly increasing")
        self._by_frame = {s.frame: s for s in self.states}

    @property
    def first_frame(self) -> int:
        return self.states[0].frame

    @property
    def last_frame(self) -> int:
        return self.states[-1].frame

    def state_at(self, frame: int) -> AgentState | None:
        return self._by_frame.get(frame)


def state_at(track: AgentTrack, frame: int) -> AgentState | None:
    """Exact state lookup; None when the agent is not observed at that frame.

    Never extrapolates.
    """
    return track.state_at(frame)


@dataclass(eq=False)
class LaneSpec:
    """One mapped lane: centerline polyline, width, and connectivity."""

    id: str
    centerline: np.ndarray
    width: float
    successor_ids: list[str] = field(default_factory=list)
    predecessor_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        if self.centerline.ndim != 2 or self.centerline.shape[0] < 2 or self.centerline.shape[1] != 2:
            raise ValueError(f"lane {self.id!r}: centerline must have >= 2 2D points")
        if (np.diff(self.centerline, axis=0) == 0).all(axis=1).any():
            raise ValueError(f"lane {self.id!r}: consecutive centerline points must be distinct")
        if self.width <= 0:
            raise ValueError(f"lane {self.id!r}: width must be positive")


@dataclass(eq=False)
class Scenario:
    """Map, agents, route, goal, and lights for one driving episode."""

    id: str
    lanes: list[LaneSpec]
    agents: list[AgentTrack]
    ego_id: str
    route_lane_ids: list[str]
    goal: Pose2D
    traffic_lights: dict[str, dict[int, TrafficLightState]] = field(default_factory=dict)
    frame_interval: float = FRAME_INTERVAL

    def __post_init__(self):
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")
        lane_ids = [l.id for l in self.lanes]
        if len(set(lane_ids)) != len(lane_ids):
            raise ValueError("lanes: duplicate lane id")
        agent_ids = [a.id for a in self.agents]
        if len(set(agent_ids)) != len(agent_ids):
            raise ValueError("agents: duplicate agent id")
        if self.ego_id not in agent_ids:
            raise ValueError(f"ego_id {self.ego_id!r} not present in agents")
        known = set(lane_ids)
        for lid in self.route_lane_ids:
            if lid not in known:
                raise ValueError(f"route_lane_ids: lane {lid!r} not present in lanes")
        for lid in self.traffic_lights:
            if lid not in known:
                raise ValueError(f"traffic_lights: lane {lid!r} not present in lanes")
        for lane in self.lanes:
            for ref in (*lane.successor_ids, *lane.predecessor_ids):
                if ref not in known:
                    raise ValueError(f"lane {lane.id!r}: connected lane {ref!r} not present in lanes")
        self._lane_by_id = {l.id: l for l in self.lanes}
        self._agent_by_id = {a.id: a for a in self.agents}

    def lane(self, lane_id: str) -> LaneSpec:
        return self._lane_by_id[lane_id]

    def agent(self, agent_id: str) -> AgentTrack:
        return self._agent_by_id[agent_id]

    @property
    def ego(self) -> AgentTrack:
        return self._agent_by_id[self.ego_id]

    def light_at(self, lane_id: str, frame: int) -> TrafficLightState:
        """Light state for a lane at an exact frame, defaulting to none."""
        return self.traffic_lights.get(lane_id, {}).get(frame, TrafficLightState.NONE)

    def translated(self, offset) -> Scenario:
        """Rigidly translate the whole scenario by a 2D offset."""
        dx, dy = float(offset[0]), float(offset[1])
        lanes = [
            LaneSpec(
                id=l.id,
                centerline=l.centerline + np.array([dx, dy]),
                width=l.width,
                successor_ids=list(l.successor_ids),
                predecessor_ids=list(l.predecessor_ids),
            )
            for l in self.lanes
        ]
        agents = [
            AgentTrack(
                id=a.id,
                length=a.length,
                width=a.width,
                states=[
                    AgentState(s.frame, s.x + dx, s.y + dy, s.theta, s.vx, s.vy, s.yaw_rate)
                    for s in a.states
                ],
            )
            for a in self.agents
        ]
        return Scenario(
            id=self.id,
            lanes=lanes,
            agents=agents,
            ego_id=self.ego_id,
            route_lane_ids=list(self.route_lane_ids),
            goal=Pose2D(self.goal.x + dx, self.goal.y + dy, self.goal.theta),
            traffic_lights={k: dict(v) for k, v in self.traffic_lights.items()},
            frame_interval=self.frame_interval,
        )


def scenario_to_dict(s: Scenario) -> dict:
    """Plain-document form of a scenario (the on-disk schema)."""
    return {
        "id": s.id,
        "frame_interval": s.frame_interval,
        "ego_id": s.ego_id,
        "route_lane_ids": sorted(s.route_lane_ids),
        "goal": {"x": s.goal.x, "y": s.goal.y, "theta": s.goal.theta},
        "lanes": [
            {
                "id": l.id,
                "centerline": l.centerline,
                "width": l.width,
                "successors": list(l.successor_ids),
                "predecessors": list(l.predecessor_ids),
            }
            for l in s.lanes
        ],
        "agents": [
            {
                "id": a.id,
                "length": a.length,
                "width": a.width,
                "states": [
                    [st.frame, st.x, st.y, st.theta, st.vx, st.vy, st.yaw_rate]
                    for st in a.states
                ],
            }
            for a in s.agents
        ],
        "traffic_lights": {
            lane_id: [[frame, state.value] for frame, state in sorted(frames.items())]
            for lane_id, frames in s.traffic_lights.items()
        },
    }


def scenario_from_dict(doc: dict) -> Scenario:
    """Inverse of :func:`scenario_to_dict`, with full validation."""
    try:
        lanes = [
            LaneSpec(
                id=str(l["id"]),
                centerline=l["centerline"],
                width=float(l["width"]),
                successor_ids=[str(x) for x in l.get("successors", [])],
                predecessor_ids=[str(x) for x in l.get("predecessors", [])],
            )
            for l in doc["lanes"]
        ]
        agents = [
            AgentTrack(
                id=str(a["id"]),
                length=float(a["length"]),
                width=float(a["width"]),
                states=[AgentState(*row) for row in a["states"]],
            )
            for a in doc["agents"]
        ]
        lights = {
            str(lane_id): {int(frame): TrafficLightState(state) for frame, state in rows}
            for lane_id, rows in doc.get("traffic_lights", {}).items()
        }
        goal = doc["goal"]
        return Scenario(
            id=str(doc["id"]),
            lanes=lanes,
            agents=agents,
            ego_id=str(doc["ego_id"]),
            route_lane_ids=[str(x) for x in doc["route_lane_ids"]],
            goal=Pose2D(goal["x"], goal["y"], goal.get("theta", 0.0)),
            traffic_lights=lights,
            frame_interval=float(doc["frame_interval"]),
        )
    except KeyError as exc:
        raise ValueError(f"scenario document missing field: {exc.args[0]!r}") from exc


def save_scenario(s: Scenario, path) -> None:
    write_json(path, scenario_to_dict(s))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed scenario file {path.name}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"malformed scenario file {path.name}: top level must be an object")
    return scenario_from_dict(doc)


def _track_from_motion(agent_id, length, width, pos0, velocities, thetas, yaw_rates) -> AgentTrack:
    """Integrate per-frame velocities into a track.

    Positions satisfy p[k+1] = p[k] + v[k] * dt exactly, which is the
    kinematic-consistency contract the tests check.
    """
    velocities = np.asarray(velocities, dtype=float)
    n = velocities.shape[0]
    positions = np.empty((n, 2))
    positions[0] = pos0
    positions[1:] = pos0 + np.cumsum(velocities[:-1] * FRAME_INTERVAL, axis=0)
    states = [
        AgentState(
            frame=k,
            x=positions[k, 0],
            y=positions[k, 1],
            theta=thetas[k],
            vx=velocities[k, 0],
            vy=velocities[k, 1],
            yaw_rate=yaw_rates[k],
        )
        for k in range(n)
    ]
    return AgentTrack(id=agent_id, length=length, width=width, states=states)


def _straight_lane(lane_id, y, x_lo, x_hi, successors=(), predecessors=()) -> LaneSpec:
    return LaneSpec(
        id=lane_id,
        centerline=np.array([[x_lo, y], [x_hi, y]]),
        width=LANE_WIDTH,
        successor_ids=list(successors),
        predecessor_ids=list(predecessors),
    )


def _lane_change_velocities(v, window_start, window_len):
    """Forward speed v with a smooth one-lane-width lateral excursion.

    The lateral rate follows sin^2 over the window, whose Riemann sum is
    exactly half the window, so the integrated offset lands on LANE_WIDTH.
    """
    vel = np.zeros((N_FRAMES, 2))
    vel[:, 0] = v
    k = np.arange(window_len)
    vel[window_start : window_start + window_len, 1] = (
        2.0 * LANE_WIDTH / (window_len * FRAME_INTERVAL)
    ) * np.sin(math.pi * k / window_len) ** 2
    return vel


def _attitude_from_velocities(vel):
    """Headings from velocity direction; yaw rate by forward difference."""
    thetas = wrap_angle(np.arctan2(vel[:, 1], vel[:, 0]))
    yaw_rates = np.zeros(len(thetas))
    dtheta = wrap_angle(np.diff(thetas))
    yaw_rates[:-1] = dtheta / FRAME_INTERVAL
    return thetas, yaw_rates


def _goal_from_track(track: AgentTrack) -> Pose2D:
    last = track.states[-1]
    return Pose2D(last.x, last.y, last.theta)


def gen_synthetic(kind: str, seed: int) -> Scenario:
    """Generate a deterministic synthetic scenario of the given kind.

    Kinds: straight (one lane, constant speed), curve (constant-rate
    arc), lane_change (two parallel lanes, smooth lateral move), and
    overtake (stopped lead vehicle, ego passes via the adjacent lane).
    """
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(SCENARIO_KINDS.index(kind),))
    )
    v = float(rng.uniform(2.5, 3.5))
    x0 = float(rng.uniform(-2.0, 2.0))
    sid = f"{kind}-{seed}"
    travel = v * FRAME_INTERVAL * (N_FRAMES - 1)

    if kind == "straight":
        vel = np.zeros((N_FRAMES, 2))
        vel[:, 0] = v
        ego = _track_from_motion(
            "ego", VEHICLE_LENGTH, VEHICLE_WIDTH, (x0, 0.0), vel,
            np.zeros(N_FRAMES), np.zeros(N_FRAMES),
        )
        lane = _straight_lane("lane_a", 0.0, x0 - 10.0, x0 + travel + 10.0)
        return Scenario(
            id=sid, lanes=[lane], agents=[ego], ego_id="ego",
            route_lane_ids=["lane_a"], goal=_goal_from_track(ego),
        )

    if kind == "curve":
        radius = 60.0
        turn = 1.0 if rng.uniform() < 0.5 else -1.0
        omega = turn * v / radius
        thetas = wrap_angle(omega * FRAME_INTERVAL * np.arange(N_FRAMES))
        vel = v * np.column_stack([np.cos(thetas), np.sin(thetas)])
        ego = _track_from_motion(
            "ego", VEHICLE_LENGTH, VEHICLE_WIDTH, (x0, 0.0), vel,
            thetas, np.full(N_FRAMES, omega),
        )
        path = np.array([[s.x, s.y] for s in ego.states])
        head = path[0] - 10.0 * np.array([math.cos(thetas[0]), math.sin(thetas[0])])
        tail = path[-1] + 10.0 * np.array([math.cos(thetas[-1]), math.sin(thetas[-1])])
        lane = LaneSpec(
            id="lane_a",
            centerline=np.vstack([head, path, tail]),
            width=LANE_WIDTH,
        )
        return Scenario(
            id=sid, lanes=[lane], agents=[ego], ego_id="ego",
            route_lane_ids=["lane_a"], goal=_goal_from_track(ego),
        )

    # Two parallel lanes; ego starts on lane_a and moves to lane_b.
    side = float(rng.choice([-1.0, 1.0])) if kind == "lane_change" else 1.0
    window_start, window_len = (12, 16) if kind == "lane_change" else (8, 12)
    vel = _lane_change_velocities(v, window_start, window_len)
    vel[:, 1] *= side
    thetas, yaw_rates = _attitude_from_velocities(vel)
    ego = _track_from_motion("ego", VEHICLE_LENGTH, VEHICLE_WIDTH, (x0, 0.0), vel, thetas, yaw_rates)
    x_lo, x_hi = x0 - 10.0, x0 + travel + 10.0
    lanes = [
        _straight_lane("lane_a", 0.0, x_lo, x_hi),
        _straight_lane("lane_b", side * LANE_WIDTH, x_lo, x_hi),
    ]
    agents = [ego]
    if kind == "overtake":
        gap = float(rng.uniform(35.0, 45.0))
        lead = _track_from_motion(
            "lead", VEHICLE_LENGTH, VEHICLE_WIDTH, (x0 + gap, 0.0),
            np.zeros((N_FRAMES, 2)), np.zeros(N_FRAMES), np.zeros(N_FRAMES),
        )
        agents.append(lead)
    return Scenario(
        id=sid, lanes=lanes, agents=agents, ego_id="ego",
        route_lane_ids=["lane_a", "lane_b"], goal=_goal_from_track(ego),
    )
