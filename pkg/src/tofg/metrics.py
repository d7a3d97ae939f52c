"""Trajectory prediction metrics and closed-loop planning metrics.

Positions are meters, headings radians; heading differences are always
wrapped to (-pi, pi] before taking magnitudes. Trajectories are arrays
of shape (n, 2) for positions or (n, 3) with a heading column; when the
heading column is absent it is derived from consecutive waypoint
deltas, the final heading repeating the last delta's direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import point_polyline_distance, wrap_angle
from .scene import Pose2D, Scenario

__all__ = ["PredReport", "PlanReport", "pred_metrics", "plan_metrics", "derive_headings"]


@dataclass
class PredReport:
    """Open-loop prediction errors against the logged future."""

    ade: float
    fde: float
    ahe: float
    fhe: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PlanReport:
    """Closed-loop driving quality against the expert log and the goal.

    m_l2_sum is the summed per-step error (position plus weighted yaw);
    the mean and max are over steps, each also reported without the yaw
    term. prog2goal is the reduction in goal distance; prog2exp the
    driven path length accumulated while on the expert route. Both come
    with ratios against the expert's own progress.
    """

    m_l2_sum: float
    m_l2_mean: float
    m_l2_max: float
    m_l2_sum_no_yaw: float
    m_l2_mean_no_yaw: float
    m_l2_max_no_yaw: float
    dist2goal_min: float
    dist2goal_max: float
    dist2goal_mean: float
    prog2goal: float
    prog2goal_ratio: float
    prog2exp: float
    prog2exp_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def derive_headings(traj: np.ndarray) -> np.ndarray:
    """Heading per waypoint: the stored column if present, else the
    direction of the step leaving each waypoint (final one repeated)."""
    traj = np.asarray(traj, dtype=float)
    if traj.ndim != 2 or traj.shape[1] not in (2, 3):
        raise ValueError(f"trajectory must have shape (n, 2) or (n, 3), got {traj.shape}")
    if traj.shape[1] == 3:
        return wrap_angle(traj[:, 2])
    if traj.shape[0] == 1:
        return np.zeros(1)
    d = np.diff(traj[:, :2], axis=0)
    th = np.arctan2(d[:, 1], d[:, 0])
    return wrap_angle(np.append(th, th[-1]))


def pred_metrics(pred: np.ndarray, truth: np.ndarray) -> PredReport:
    """Displacement and heading errors between predicted and logged
    waypoints: mean (ADE/AHE) and final step (FDE/FHE)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape[0] != truth.shape[0] or pred.shape[0] < 1:
        raise ValueError(f"pred_metrics length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    disp = np.hypot(*(pred[:, :2] - truth[:, :2]).T)
    dth = np.abs(wrap_angle(derive_headings(pred) - derive_headings(truth)))
    return PredReport(
        ade=float(disp.mean()),
        fde=float(disp[-1]),
        ahe=float(dth.mean()),
        fhe=float(dth[-1]),
    )


def _ratio(num: float, den: float) -> float:
    """Progress ratio with a defined value for a degenerate expert:
    1 when both progresses vanish, 0 when only the expert's does."""
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return num / den


def _on_route_mask(xy: np.ndarray, scenario: Scenario) -> np.ndarray:
    """True where the nearest lane is on the route or touches it.

    Direct successors and predecessors of route lanes count as
    on-route, so briefly crossing a connected lane does not zero the
    progress metric.
    """
    route = set(scenario.route_lane_ids)
    allowed = set(route)
    for lane in scenario.lanes:
        if lane.id in route:
            allowed.update(lane.successor_ids)
            allowed.update(lane.predecessor_ids)
    mask = np.zeros(xy.shape[0], dtype=bool)
    for i, p in enumerate(xy):
        dists = [point_polyline_distance(p, lane.centerline) for lane in scenario.lanes]
        mask[i] = scenario.lanes[int(np.argmin(dists))].id in allowed
    return mask


def plan_metrics(
    driven: np.ndarray,
    expert: np.ndarray,
    goal: Pose2D,
    scenario: Scenario,
    w_theta: float = 2.5,
) -> PlanReport:
    """Score a driven trajectory against the expert log and the goal.

    driven and expert are (T_s+1, 3) state rows (x, y, theta) on the
    same frame clock; scenario supplies the lane map and route used for
    the on-route progress term.
    """
    driven = np.asarray(driven, dtype=float)
    expert = np.asarray(expert, dtype=float)
    if driven.shape[0] != expert.shape[0]:
        raise ValueError(f"plan_metrics length mismatch: {driven.shape[0]} vs {expert.shape[0]}")
    if driven.shape[0] < 2:
        raise ValueError("plan_metrics needs at least 2 states")
    d_xy, e_xy = driven[:, :2], expert[:, :2]
    pos_err = np.hypot(*(d_xy - e_xy).T)
    yaw_err = np.abs(wrap_angle(derive_headings(driven) - derive_headings(expert)))
    step = pos_err + w_theta * yaw_err

    gd = np.hypot(*(d_xy - goal.xy).T)
    ge = np.hypot(*(e_xy - goal.xy).T)
    prog2goal = float(gd[0] - gd[-1])
    expert_prog = float(ge[0] - ge[-1])

    onroute = _on_route_mask(d_xy, scenario)
    steplen = np.hypot(*np.diff(d_xy, axis=0).T)
    prog2exp = float(steplen[onroute[:-1] & onroute[1:]].sum())
    expert_len = float(np.hypot(*np.diff(e_xy, axis=0).T).sum())

    return PlanReport(
        m_l2_sum=float(step.sum()),
        m_l2_mean=float(step.mean()),
        m_l2_max=float(step.max()),
        m_l2_sum_no_yaw=float(pos_err.sum()),
        m_l2_mean_no_yaw=float(pos_err.mean()),
        m_l2_max_no_yaw=float(pos_err.max()),
        dist2goal_min=float(gd.min()),
        dist2goal_max=float(gd.max()),
        dist2goal_mean=float(gd.mean()),
        prog2goal=prog2goal,
        prog2goal_ratio=_ratio(prog2goal, expert_prog),
        prog2exp=prog2exp,
        prog2exp_ratio=_ratio(prog2exp, expert_len),
    )
