"""Occupancy flow graphs over a resampled lane graph.

A lane graph cuts every lane centerline into short directed segments and
wires them along lane geometry and lane connectivity. A per-frame
occupancy flow graph (OFG) marks which segments vehicles occupy, stores
the occupant's backward flow, and adds multi-scale and vehicle
interaction edges. Stacking consecutive frames and stitching per-vehicle
temporal edges yields the temporal occupancy flow graph (TOFG).

Node data is stored as flat numpy arrays for speed; ``node(i)`` builds a
per-node view object when object access is clearer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import GraphConfig
from .geometry import (
    Frame2D,
    OrientedRect,
    Segment,
    rect_contains_point,
    resample_polyline,
    to_frame,
)
from .scene import Scenario, TrafficLightState

__all__ = [
    "LaneNode",
    "LaneGraph",
    "OccupancyMap",
    "OfgNode",
    "Ofg",
    "Tofg",
    "LIGHT_ORDER",
    "build_lane_graph",
    "assign_occupancy",
    "build_multiscale_edges",
    "build_interaction_edges",
    "build_tofg",
    "tofg_to_dict",
]

log = logging.getLogger(__name__)

# Fixed coding for light states in node arrays and one-hot features.
LIGHT_ORDER = (
    TrafficLightState.NONE,
    TrafficLightState.RED,
    TrafficLightState.YELLOW,
    TrafficLightState.GREEN,
)
_LIGHT_CODE = {s: i for i, s in enumerate(LIGHT_ORDER)}


@dataclass(eq=False)
class LaneNode:
    """View of one lane-graph node."""

    segment: Segment
    lane_id: str
    index_in_lane: int


@dataclass(eq=False)
class LaneGraph:
    """Fine-grained lane segments plus directed successor adjacency."""

    lane_order: list[str]
    lane_index: np.ndarray
    index_in_lane: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    widths: np.ndarray
    succ: list[list[int]]
    pred: list[list[int]]

    def __post_init__(self):
        self.midpoints = 0.5 * (self.p1 + self.p2)
        self.vectors = self.p2 - self.p1
        self.lengths = np.hypot(*self.vectors.T)
        self.headings = np.arctan2(self.vectors[:, 1], self.vectors[:, 0])
        cos, sin = np.cos(self.headings), np.sin(self.headings)
        self.axes_long = np.column_stack([cos, sin])
        self.axes_lat = np.column_stack([-sin, cos])
        du = self.axes_long * (0.5 * self.lengths)[:, None]
        dv = self.axes_lat * (0.5 * self.widths)[:, None]
        self.corners = np.stack(
            [
                self.midpoints + du + dv,
                self.midpoints - du + dv,
                self.midpoints - du - dv,
                self.midpoints + du - dv,
            ],
            axis=1,
        )
        self.circumradius = np.hypot(0.5 * self.lengths, 0.5 * self.widths)
        self._multiscale_cache: dict[int, list[tuple[int, int]]] = {}
        self._geometric_cache: list[tuple[int, int]] | None = None

    @property
    def n_nodes(self) -> int:
        return self.p1.shape[0]

    def node(self, i: int) -> LaneNode:
        return LaneNode(
            segment=Segment(self.p1[i].copy(), self.p2[i].copy()),
            lane_id=self.lane_order[self.lane_index[i]],
            index_in_lane=int(self.index_in_lane[i]),
        )

    @property
    def nodes(self) -> list[LaneNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    def rect(self, i: int) -> OrientedRect:
        """Occupancy rectangle of node i (segment expanded to lane width)."""
        return OrientedRect(
            center=self.midpoints[i].copy(),
            heading=float(self.headings[i]),
            half_length=0.5 * float(self.lengths[i]),
            half_width=0.5 * float(self.widths[i]),
        )

    def geometric_edges(self) -> list[tuple[int, int]]:
        """Directed scale-1 adjacency pairs (u, v) with v a successor of u."""
        if self._geometric_cache is None:
            self._geometric_cache = [
                (u, v) for u in range(self.n_nodes) for v in self.succ[u]
            ]
        return self._geometric_cache

    def multiscale_edges(self, n_scale: int) -> list[tuple[int, int]]:
        if n_scale not in self._multiscale_cache:
            self._multiscale_cache[n_scale] = build_multiscale_edges(self, n_scale)
        return self._multiscale_cache[n_scale]


def build_lane_graph(scenario: Scenario, target_len: float = 0.3) -> LaneGraph:
    """Cut every lane centerline into segments near target_len and wire them.

    Within a lane, node i connects to node i+1; across lanes the last
    node of a lane connects to the first node of each successor (the
    union of successor and predecessor declarations).
    """
    p1s, p2s, widths, lane_idx, idx_in_lane = [], [], [], [], []
    first_node: dict[str, int] = {}
    last_node: dict[str, int] = {}
    lane_order = [l.id for l in scenario.lanes]
    for li, lane in enumerate(scenario.lanes):
        try:
            segs = resample_polyline(lane.centerline, target_len)
        except ValueError as exc:
            raise ValueError(f"lane {lane.id!r}: {exc}") from exc
        first_node[lane.id] = len(p1s)
        for k, seg in enumerate(segs):
            p1s.append(seg.p1)
            p2s.append(seg.p2)
            widths.append(lane.width)
            lane_idx.append(li)
            idx_in_lane.append(k)
        last_node[lane.id] = len(p1s) - 1

    n = len(p1s)
    links: set[tuple[int, int]] = set()
    for lane in scenario.lanes:
        a, b = first_node[lane.id], last_node[lane.id]
        links.update((u, u + 1) for u in range(a, b))
        for succ_id in lane.successor_ids:
            links.add((b, first_node[succ_id]))
        for pred_id in lane.predecessor_ids:
            links.add((last_node[pred_id], a))
    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    for u, v in sorted(links):
        succ[u].append(v)
        pred[v].append(u)
    return LaneGraph(
        lane_order=lane_order,
        lane_index=np.array(lane_idx, dtype=np.int32),
        index_in_lane=np.array(idx_in_lane, dtype=np.int32),
        p1=np.array(p1s),
        p2=np.array(p2s),
        widths=np.array(widths),
        succ=succ,
        pred=pred,
    )


def _nodes_hit(lg: LaneGraph, rect: OrientedRect) -> np.ndarray:
    """Indices of nodes whose rectangles intersect rect (closed test).

    Vectorized separating-axis test over a circumradius prefilter.
    """
    gap = np.hypot(*(lg.midpoints - rect.center).T)
    cand = np.flatnonzero(gap <= lg.circumradius + math.hypot(rect.half_length, rect.half_width) + 1e-9)
    if cand.size == 0:
        return cand
    nc = lg.corners[cand]
    vc = rect.corners()
    va = rect.axes()

    # Node corners projected on the two vehicle axes.
    p = nc @ va.T
    n_lo, n_hi = p.min(axis=1), p.max(axis=1)
    q = vc @ va.T
    v_lo, v_hi = q.min(axis=0), q.max(axis=0)
    sep = (n_hi < v_lo) | (v_hi < n_lo)
    separated = sep.any(axis=1)

    # Vehicle corners projected on each node's own axes.
    na = np.stack([lg.axes_long[cand], lg.axes_lat[cand]], axis=1)
    pv = np.einsum("cj,kaj->kca", vc, na)
    v2_lo, v2_hi = pv.min(axis=1), pv.max(axis=1)
    pn = np.einsum("kcj,kaj->kca", nc, na)
    n2_lo, n2_hi = pn.min(axis=1), pn.max(axis=1)
    sep2 = (n2_hi < v2_lo) | (v2_hi < n2_lo)
    separated |= sep2.any(axis=1)
    return cand[~separated]


@dataclass(eq=False)
class OccupancyMap:
    """Per-node occupancy for one frame, as flat arrays.

    occupant holds the index into agent_ids (the scenario agent order),
    -1 for unoccupied. flow rows are (-vx, -vy, theta, yaw_rate).
    """

    occupancy: np.ndarray
    occupant: np.ndarray
    flow: np.ndarray
    agent_ids: list[str]

    def occupant_id(self, i: int) -> str | None:
        ai = int(self.occupant[i])
        return self.agent_ids[ai] if ai >= 0 else None


def assign_occupancy(lane_graph: LaneGraph, scenario: Scenario, frame: int) -> OccupancyMap:
    """Mark nodes occupied by vehicles present at a frame.

    A node is occupied iff its rectangle intersects at least one vehicle
    box. With several intersecting vehicles the occupant is the one
    whose box contains the node midpoint (closest box center among
    those), otherwise the one with the closest box center; remaining
    ties go to the earliest agent in scenario order.
    """
    n = lane_graph.n_nodes
    occupancy = np.zeros(n, dtype=np.int8)
    occupant = np.full(n, -1, dtype=np.int32)
    flow = np.zeros((n, 4))
    hits: list[tuple[int, OrientedRect, np.ndarray, np.ndarray]] = []
    for ai, agent in enumerate(scenario.agents):
        st = agent.state_at(frame)
        if st is None:
            continue
        rect = OrientedRect(
            center=(st.x, st.y),
            heading=st.theta,
            half_length=0.5 * agent.length,
            half_width=0.5 * agent.width,
        )
        idx = _nodes_hit(lane_graph, rect)
        if idx.size == 0:
            log.warning("agent %r overlaps no lane at frame %d (off-road)", agent.id, frame)
            continue
        hits.append((ai, rect, idx, np.array([-st.vx, -st.vy, st.theta, st.yaw_rate])))

    counts = np.zeros(n, dtype=np.int32)
    for _, _, idx, _ in hits:
        counts[idx] += 1
    for ai, rect, idx, fl in hits:
        solo = idx[counts[idx] == 1]
        occupancy[solo] = 1
        occupant[solo] = ai
        flow[solo] = fl

    if (counts >= 2).any():
        claims: dict[int, list[tuple[int, OrientedRect, np.ndarray]]] = {}
        for ai, rect, idx, fl in hits:
            for nd in idx[counts[idx] >= 2]:
                claims.setdefault(int(nd), []).append((ai, rect, fl))
        for nd, cands in claims.items():
            mid = lane_graph.midpoints[nd]
            containing = [c for c in cands if rect_contains_point(c[1], mid)]
            pool = containing if containing else cands
            ai, rect, fl = min(
                pool, key=lambda c: (float(np.hypot(*(mid - c[1].center))), c[0])
            )
            occupancy[nd] = 1
            occupant[nd] = ai
            flow[nd] = fl
    return OccupancyMap(
        occupancy=occupancy,
        occupant=occupant,
        flow=flow,
        agent_ids=[a.id for a in scenario.agents],
    )


def build_multiscale_edges(lane_graph: LaneGraph, n_scale: int) -> list[tuple[int, int]]:
    """Undirected pairs of nodes 1..n_scale hops apart along lane direction.

    Breadth-first from each node along successor adjacency; a pair is
    recorded at its shortest hop count, which reproduces the union of
    the exact-s-hop sets for s = 1..n_scale.
    """
    if n_scale < 1:
        raise ValueError("n_scale must be at least 1")
    pairs: set[tuple[int, int]] = set()
    succ = lane_graph.succ
    for i in range(lane_graph.n_nodes):
        seen = {i}
        frontier = [i]
        for _ in range(n_scale):
            nxt = []
            for u in frontier:
                for w in succ[u]:
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
                        pairs.add((i, w) if i < w else (w, i))
            frontier = nxt
    return sorted(pairs)


def _longitudinal_order(idx: np.ndarray, mids: np.ndarray, heading: float) -> np.ndarray:
    """Sort node indices by projection along a heading, ties by index."""
    u = np.array([math.cos(heading), math.sin(heading)])
    return idx[np.lexsort((idx, mids[idx] @ u))]


def build_interaction_edges(ofg: Ofg, scenario: Scenario, threshold: float) -> list[tuple[int, int]]:
    """Edges between the occupied node sets of nearby vehicle pairs.

    For each unordered pair closer than threshold (center to center,
    strict) with both vehicles occupying nodes, the smaller occupied set
    injects into the larger one: both sets are ordered front to back
    along their own vehicle heading and matched index to index, giving
    min(m, n) edges with distinct endpoints.
    """
    mids = ofg.lane_graph.midpoints
    occupied: dict[int, np.ndarray] = {}
    for ai in np.unique(ofg.occupant[ofg.occupant >= 0]):
        occupied[int(ai)] = np.flatnonzero(ofg.occupant == ai)
    present = sorted(occupied)
    edges: list[tuple[int, int]] = []
    for pos, ai in enumerate(present):
        st_a = scenario.agents[ai].state_at(ofg.frame)
        for bi in present[pos + 1 :]:
            st_b = scenario.agents[bi].state_at(ofg.frame)
            if math.hypot(st_a.x - st_b.x, st_a.y - st_b.y) >= threshold:
                continue
            na = _longitudinal_order(occupied[ai], mids, st_a.theta)
            nb = _longitudinal_order(occupied[bi], mids, st_b.theta)
            small, large = (na, nb) if len(na) <= len(nb) else (nb, na)
            edges.extend((int(small[k]), int(large[k])) for k in range(len(small)))
    return edges


@dataclass(eq=False)
class OfgNode:
    """View of one occupancy-flow-graph node."""

    lane_node_ref: LaneNode
    midpoint: np.ndarray
    seg_vector: np.ndarray
    occupancy: int
    flow: np.ndarray
    occupant_id: str | None
    light: TrafficLightState
    on_route: bool


@dataclass(eq=False)
class Ofg:
    """One frame's occupancy flow graph over a shared lane graph.

    edges holds node-index pairs per family: "geometric" is directed
    scale-1 adjacency, "multiscale" the undirected 1..n_scale hop pairs
    (a superset of the geometric pairs), "interaction" the vehicle
    injection pairs.
    """

    frame: int
    lane_graph: LaneGraph
    occupancy: np.ndarray
    occupant: np.ndarray
    flow: np.ndarray
    light: np.ndarray
    on_route: np.ndarray
    agent_ids: list[str]
    edges: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.lane_graph.n_nodes

    def node(self, i: int) -> OfgNode:
        ai = int(self.occupant[i])
        return OfgNode(
            lane_node_ref=self.lane_graph.node(i),
            midpoint=self.lane_graph.midpoints[i].copy(),
            seg_vector=self.lane_graph.vectors[i].copy(),
            occupancy=int(self.occupancy[i]),
            flow=self.flow[i].copy(),
            occupant_id=self.agent_ids[ai] if ai >= 0 else None,
            light=LIGHT_ORDER[int(self.light[i])],
            on_route=bool(self.on_route[i]),
        )

    @property
    def nodes(self) -> list[OfgNode]:
        return [self.node(i) for i in range(self.n_nodes)]


@dataclass(eq=False)
class Tofg:
    """Stack of consecutive per-frame graphs plus temporal stitching.

    temporal_edges rows are (frame position t, node at t, node at t-1)
    with t indexing into frames; both nodes are occupied by the same
    vehicle, the t-1 node being the nearest one in the vehicle's own
    frame at each time.
    """

    frames: list[Ofg]
    temporal_edges: list[tuple[int, int, int]]
    lane_graph: LaneGraph
    frame_ids: list[int]
    scenario: Scenario | None = None

    @property
    def n_nodes_per_frame(self) -> int:
        return self.lane_graph.n_nodes


def _light_codes(scenario: Scenario, lane_graph: LaneGraph, frame: int) -> np.ndarray:
    if not scenario.traffic_lights:
        return np.zeros(lane_graph.n_nodes, dtype=np.int8)
    per_lane = np.array(
        [_LIGHT_CODE[scenario.light_at(lid, frame)] for lid in lane_graph.lane_order],
        dtype=np.int8,
    )
    return per_lane[lane_graph.lane_index]


def _temporal_edges_for_pair(
    scenario: Scenario, cur: Ofg, prev: Ofg, t_pos: int
) -> list[tuple[int, int, int]]:
    mids = cur.lane_graph.midpoints
    edges: list[tuple[int, int, int]] = []
    cur_agents = set(np.unique(cur.occupant[cur.occupant >= 0]).tolist())
    prev_agents = set(np.unique(prev.occupant[prev.occupant >= 0]).tolist())
    for ai in sorted(cur_agents & prev_agents):
        st_t = scenario.agents[ai].state_at(cur.frame)
        st_p = scenario.agents[ai].state_at(prev.frame)
        n_t = np.flatnonzero(cur.occupant == ai)
        n_p = np.flatnonzero(prev.occupant == ai)
        rel_t = to_frame(mids[n_t], Frame2D(np.array([st_t.x, st_t.y]), st_t.theta))
        rel_p = to_frame(mids[n_p], Frame2D(np.array([st_p.x, st_p.y]), st_p.theta))
        d2 = ((rel_t[:, None, :] - rel_p[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        edges.extend(
            (t_pos, int(u), int(n_p[j])) for u, j in zip(n_t, nearest)
        )
    return edges


def build_tofg(
    scenario: Scenario,
    frames,
    config: GraphConfig | None = None,
    lane_graph: LaneGraph | None = None,
) -> Tofg:
    """Build the temporal occupancy flow graph over consecutive frames.

    Passing a prebuilt lane_graph (from build_lane_graph with the same
    target length) reuses its cached multiscale edges across calls.
    """
    cfg = config or GraphConfig()
    cfg.validate()
    frame_ids = [int(f) for f in frames]
    if not frame_ids:
        raise ValueError("frame range must be non-empty")
    if any(b != a + 1 for a, b in zip(frame_ids, frame_ids[1:])):
        raise ValueError("frames must be consecutive")
    lg = lane_graph if lane_graph is not None else build_lane_graph(scenario, cfg.target_segment_len)

    geometric = lg.geometric_edges()
    multiscale = lg.multiscale_edges(cfg.n_scale)
    route = set(scenario.route_lane_ids)
    on_route_per_lane = np.array([lid in route for lid in lg.lane_order])
    on_route = on_route_per_lane[lg.lane_index]

    ofgs: list[Ofg] = []
    for f in frame_ids:
        occ = assign_occupancy(lg, scenario, f)
        ofg = Ofg(
            frame=f,
            lane_graph=lg,
            occupancy=occ.occupancy,
            occupant=occ.occupant,
            flow=occ.flow,
            light=_light_codes(scenario, lg, f),
            on_route=on_route,
            agent_ids=occ.agent_ids,
            edges={"geometric": geometric, "multiscale": multiscale},
        )
        ofg.edges["interaction"] = build_interaction_edges(
            ofg, scenario, cfg.interaction_threshold
        )
        ofgs.append(ofg)

    temporal: list[tuple[int, int, int]] = []
    for t in range(1, len(ofgs)):
        temporal.extend(_temporal_edges_for_pair(scenario, ofgs[t], ofgs[t - 1], t))
    return Tofg(
        frames=ofgs,
        temporal_edges=temporal,
        lane_graph=lg,
        frame_ids=frame_ids,
        scenario=scenario,
    )


def tofg_to_dict(tofg: Tofg) -> dict:
    """Plain-document form of a TOFG (the graph export schema)."""
    frames = []
    lg = tofg.lane_graph
    for ofg in tofg.frames:
        nodes = []
        for i in range(ofg.n_nodes):
            ai = int(ofg.occupant[i])
            nodes.append(
                {
                    "index": i,
                    "lane_id": lg.lane_order[lg.lane_index[i]],
                    "index_in_lane": int(lg.index_in_lane[i]),
                    "midpoint": lg.midpoints[i],
                    "vector": lg.vectors[i],
                    "occupancy": int(ofg.occupancy[i]),
                    "occupant_id": ofg.agent_ids[ai] if ai >= 0 else None,
                    "flow": ofg.flow[i],
                    "light": LIGHT_ORDER[int(ofg.light[i])].value,
                    "on_route": bool(ofg.on_route[i]),
                }
            )
        frames.append(
            {
                "frame": ofg.frame,
                "nodes": nodes,
                "edges": {
                    "geometric": [list(e) for e in ofg.edges["geometric"]],
                    "multiscale": [list(e) for e in ofg.edges["multiscale"]],
                    "interaction": [list(e) for e in ofg.edges["interaction"]],
                },
            }
        )
    return {
        "frames": frames,
        "temporal_edges": [list(e) for e in tofg.temporal_edges],
    }
