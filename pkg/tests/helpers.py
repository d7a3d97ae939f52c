"""Shared builders and independent geometry used by the test oracles.

Everything here is written from first principles on purpose: the SAT,
point-in-rect, and frame transforms below must not share code with the
package so they can catch convention bugs in it.
"""

from __future__ import annotations

import math

import numpy as np

from tofg.scene import (
    AgentState,
    AgentTrack,
    LaneSpec,
    Pose2D,
    Scenario,
)


def rect_corners(cx, cy, heading, half_len, half_wid) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    out = []
    for dx, dy in (
        (half_len, half_wid),
        (-half_len, half_wid),
        (-half_len, -half_wid),
        (half_len, -half_wid),
    ):
        out.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return np.array(out)


def sat_margin(ca: np.ndarray, cb: np.ndarray) -> float:
    """Smallest overlap across all edge normals of both rectangles.

    >= 0 means the closed rectangles intersect; < 0 they are separated.
    """
    best = math.inf
    for corners in (ca, cb):
        for k in range(4):
            ex, ey = corners[(k + 1) % 4] - corners[k]
            norm = math.hypot(ex, ey)
            axis = np.array([-ey / norm, ex / norm])
            pa, pb = ca @ axis, cb @ axis
            overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
            best = min(best, overlap)
    return best


def point_rect_margin(px, py, cx, cy, heading, half_len, half_wid) -> float:
    """Positive inside the rectangle, negative outside (inf-norm style)."""
    c, s = math.cos(heading), math.sin(heading)
    dx, dy = px - cx, py - cy
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    return min(half_len - abs(lon), half_wid - abs(lat))


def rel_coords(px, py, ox, oy, heading):
    """Coordinates of (px, py) in the frame at (ox, oy) with heading."""
    c, s = math.cos(heading), math.sin(heading)
    dx, dy = px - ox, py - oy
    return c * dx + s * dy, -s * dx + c * dy


def fd_gradients(build, params, h=1e-5):
    """Central-difference gradients of a scalar loss for every parameter.

    build() must rerun the forward pass and return a 1x1 Matrix; the
    parameter data arrays are perturbed in place one entry at a time.
    """
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        for idx in np.ndindex(*p.data.shape):
            keep = p.data[idx]
            p.data[idx] = keep + h
            lp = build().item()
            p.data[idx] = keep - h
            lm = build().item()
            p.data[idx] = keep
            g[idx] = (lp - lm) / (2.0 * h)
        out[name] = g
    return out


def occupancy_oracle(scenario, lane_graph, frame, margin_tol=1e-3):
    """Brute-force per-node occupancy with ambiguity exclusions.

    Independently recomputes, for every node, which vehicle boxes
    intersect it and who wins a contested node (containing the midpoint
    first, then nearest box center, then lowest agent index). Returns
    (occupancy, occupant, excluded); excluded marks nodes whose outcome
    sits within margin_tol of a decision boundary (rectangle contact,
    midpoint containment, or a distance tie) and must not be compared.
    """
    n = lane_graph.p1.shape[0]
    mids = 0.5 * (lane_graph.p1 + lane_graph.p2)
    vecs = lane_graph.p2 - lane_graph.p1
    node_corners = []
    for i in range(n):
        hl = 0.5 * math.hypot(vecs[i][0], vecs[i][1])
        hw = 0.5 * float(lane_graph.widths[i])
        hd = math.atan2(vecs[i][1], vecs[i][0])
        node_corners.append(rect_corners(mids[i][0], mids[i][1], hd, hl, hw))

    present = []
    for ai, agent in enumerate(scenario.agents):
        st = agent.state_at(frame)
        if st is None:
            continue
        corners = rect_corners(st.x, st.y, st.theta, 0.5 * agent.length, 0.5 * agent.width)
        present.append((ai, st, 0.5 * agent.length, 0.5 * agent.width, corners))

    occupancy = np.zeros(n, dtype=np.int8)
    occupant = np.full(n, -1, dtype=np.int32)
    excluded = np.zeros(n, dtype=bool)
    for i in range(n):
        claimants = []
        for ai, st, hl, hw, corners in present:
            m = sat_margin(node_corners[i], corners)
            if abs(m) <= margin_tol:
                excluded[i] = True
            if m >= 0:
                claimants.append((ai, st, hl, hw))
        if not claimants:
            continue
        if len(claimants) == 1:
            occupancy[i] = 1
            occupant[i] = claimants[0][0]
            continue
        mx, my = mids[i]
        containing = []
        for ai, st, hl, hw in claimants:
            pm = point_rect_margin(mx, my, st.x, st.y, st.theta, hl, hw)
            if abs(pm) <= margin_tol:
                excluded[i] = True
            if pm >= 0:
                containing.append((ai, st, hl, hw))
        pool = containing if containing else claimants
        scored = sorted((math.hypot(mx - st.x, my - st.y), ai) for ai, st, _, _ in pool)
        if len(scored) > 1 and scored[1][0] - scored[0][0] <= margin_tol:
            excluded[i] = True
        occupancy[i] = 1
        occupant[i] = scored[0][1]
    return occupancy, occupant, excluded


def multiscale_oracle(geometric_edges, n_nodes, n_scale):
    """Hop pairs via boolean matrix powers of the successor adjacency.

    The union over s = 1..n_scale of the exact s-step walk relations,
    off-diagonal, as sorted unordered pairs.
    """
    A = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    for u, v in geometric_edges:
        A[u, v] = 1
    pairs: set[tuple[int, int]] = set()
    P = np.eye(n_nodes, dtype=np.int64)
    for _ in range(n_scale):
        P = (P @ A > 0).astype(np.int64)
        for u, v in zip(*np.nonzero(P)):
            if u != v:
                pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    return sorted(pairs)


def interaction_oracle(scenario, lane_graph, occupant, frame, threshold):
    """Expected vehicle-pair edges given a per-node occupant array.

    For each unordered pair of occupying vehicles with strictly closer
    than threshold centers, sorts both node sets front to back along
    each vehicle's own heading and pairs them index to index, the
    smaller set (ties: the lower agent index, which comes first) giving
    the first endpoint.
    """
    mids = 0.5 * (lane_graph.p1 + lane_graph.p2)
    occ_nodes: dict[int, list[int]] = {}
    for i, ai in enumerate(occupant):
        if ai >= 0:
            occ_nodes.setdefault(int(ai), []).append(i)

    def front_to_back(nodes, theta):
        proj = {i: rel_coords(mids[i][0], mids[i][1], 0.0, 0.0, theta)[0] for i in nodes}
        return sorted(nodes, key=lambda i: (proj[i], i))

    edges = []
    order = sorted(occ_nodes)
    for p, ai in enumerate(order):
        st_a = scenario.agents[ai].state_at(frame)
        for bi in order[p + 1 :]:
            st_b = scenario.agents[bi].state_at(frame)
            if math.hypot(st_a.x - st_b.x, st_a.y - st_b.y) >= threshold:
                continue
            na = front_to_back(occ_nodes[ai], st_a.theta)
            nb = front_to_back(occ_nodes[bi], st_b.theta)
            small, large = (na, nb) if len(na) <= len(nb) else (nb, na)
            edges.extend((small[k], large[k]) for k in range(len(small)))
    return edges


def temporal_oracle(scenario, lane_graph, occupants, frame_ids):
    """Expected frame-to-frame edges, scanned exhaustively in python.

    occupants is one occupant array per frame. Every node a vehicle
    occupies at time t links back to its nearest node at t-1, nearness
    measured between coordinates taken in the vehicle's own pose at the
    respective frame; ties keep the lowest node index.
    """
    mids = 0.5 * (lane_graph.p1 + lane_graph.p2)
    edges = []
    for t in range(1, len(frame_ids)):
        cur, prev = occupants[t], occupants[t - 1]
        prev_agents = {int(a) for a in prev if a >= 0}
        for ai in sorted({int(a) for a in cur if a >= 0}):
            if ai not in prev_agents:
                continue
            st_t = scenario.agents[ai].state_at(frame_ids[t])
            st_p = scenario.agents[ai].state_at(frame_ids[t - 1])
            n_t = [i for i in range(len(cur)) if cur[i] == ai]
            n_p = [i for i in range(len(prev)) if prev[i] == ai]
            rel_p = [
                rel_coords(mids[j][0], mids[j][1], st_p.x, st_p.y, st_p.theta)
                for j in n_p
            ]
            for u in n_t:
                rx, ry = rel_coords(mids[u][0], mids[u][1], st_t.x, st_t.y, st_t.theta)
                best_j = best_d = None
                for pos, (px, py) in enumerate(rel_p):
                    d = (rx - px) ** 2 + (ry - py) ** 2
                    if best_d is None or d < best_d:
                        best_d, best_j = d, n_p[pos]
                edges.append((t, u, best_j))
    return edges


def euler_track(
    agent_id: str,
    length: float,
    width: float,
    frame0: int,
    n_frames: int,
    x0: float,
    y0: float,
    theta0: float,
    vx: float,
    vy: float,
    yaw_rate: float = 0.0,
    dt: float = 0.5,
) -> AgentTrack:
    """Constant-velocity track whose positions integrate its velocities."""
    states = []
    x, y, theta = x0, y0, theta0
    for k in range(n_frames):
        states.append(AgentState(frame0 + k, x, y, theta, vx, vy, yaw_rate))
        x, y = x + vx * dt, y + vy * dt
        theta = math.atan2(
            math.sin(theta + yaw_rate * dt), math.cos(theta + yaw_rate * dt)
        )
    return AgentTrack(id=agent_id, length=length, width=width, states=states)


def tiny_scenario(n_frames: int = 2, n_agents: int = 2, lane_len: float = 3.0) -> Scenario:
    """One short lane with small slow vehicles; <= 10 nodes per frame.

    Used for gradient checks where the whole TOFG must stay tiny.
    """
    lane = LaneSpec(
        id="lane_a",
        centerline=np.array([[0.0, 0.0], [lane_len, 0.0]]),
        width=2.0,
    )
    agents = [
        euler_track("ego", 1.0, 0.5, 0, n_frames, 0.4, 0.1, 0.0, 0.6, 0.0, 0.1)
    ]
    if n_agents > 1:
        agents.append(
            euler_track("car1", 1.2, 0.6, 0, n_frames, 2.2, -0.1, math.pi, -0.5, 0.0)
        )
    return Scenario(
        id="tiny",
        lanes=[lane],
        agents=agents,
        ego_id="ego",
        route_lane_ids=["lane_a"],
        goal=Pose2D(lane_len, 0.0, 0.0),
    )


def random_scene(
    rng: np.random.Generator,
    n_frames: int = 1,
    max_lanes: int = 4,
    max_vehicles: int = 5,
) -> Scenario:
    """Randomized straight-lane corridors with randomly posed vehicles.

    Lane chains are acyclic; some vehicles may sit off-road or straddle
    several lanes, which is exactly what the occupancy oracle needs.
    """
    n_lanes = int(rng.integers(1, max_lanes + 1))
    specs: list[dict] = []
    x = y = 0.0
    prev: int | None = None
    for i in range(n_lanes):
        if prev is None or rng.uniform() < 0.3:
            x = float(rng.uniform(-6.0, 2.0))
            y = float(rng.uniform(-7.0, 7.0))
            prev = None
        length = float(rng.uniform(5.0, 15.0))
        spec = {
            "id": f"l{i}",
            "centerline": np.array([[x, y], [x + length, y]]),
            "width": float(rng.uniform(2.6, 4.0)),
            "successor_ids": [],
            "predecessor_ids": [],
        }
        if prev is not None:
            # Exercise both declaration directions at random.
            if rng.uniform() < 0.5:
                specs[prev]["successor_ids"].append(spec["id"])
            else:
                spec["predecessor_ids"].append(specs[prev]["id"])
        specs.append(spec)
        x += length
        prev = i
    lanes = [LaneSpec(**sp) for sp in specs]

    n_veh = int(rng.integers(1, max_vehicles + 1))
    agents = []
    for k in range(n_veh):
        sp = specs[int(rng.integers(0, n_lanes))]
        lo, hi = sp["centerline"][0], sp["centerline"][1]
        s = rng.uniform(0.0, 1.0)
        px = float(lo[0] + s * (hi[0] - lo[0]) + rng.uniform(-1.0, 1.0))
        py = float(lo[1] + rng.uniform(-sp["width"], sp["width"]))
        heading = float(rng.normal(0.0, 0.5))
        speed = float(rng.uniform(0.0, 5.0))
        agents.append(
            euler_track(
                f"v{k}",
                float(rng.uniform(1.8, 5.0)),
                float(rng.uniform(0.9, 2.2)),
                0,
                n_frames,
                px,
                py,
                heading,
                speed * math.cos(heading),
                speed * math.sin(heading),
                float(rng.uniform(-0.3, 0.3)),
            )
        )
    goal_state = agents[0].states[-1]
    return Scenario(
        id=f"rand-{rng.integers(1 << 30)}",
        lanes=lanes,
        agents=agents,
        ego_id="v0",
        route_lane_ids=[sp["id"] for sp in specs],
        goal=Pose2D(goal_state.x, goal_state.y, goal_state.theta),
    )
