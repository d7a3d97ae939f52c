"""Graph-attention trajectory model over temporal occupancy flow graphs.

Node features are embedded by an MLP, refined by stacked residual
graph-attention layers over the union of all edge families, and an ego
query cross-attends over the latest frame's node embeddings; an MLP
decoder emits H future (x, y) waypoints in ego-relative coordinates.
Training minimizes the summed Euclidean waypoint distance to the logged
ego trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import GraphConfig, ModelConfig, TrainConfig
from .graph import Tofg, build_tofg
from .nn import (
    Matrix,
    NumericError,
    ParamStore,
    adam_step,
    backward,
    cross_attention,
    gat_layer,
    gather_rows,
    mlp,
    reshape,
    sqrt_elems,
    sum_all,
    sum_rows,
)
from .scene import AgentState, Scenario

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "AttentionMap",
    "FEATURE_DIM",
    "EGO_FEATURE_DIM",
    "node_features",
    "encode",
    "predict",
    "imitation_loss",
    "train",
    "extract_sample",
    "default_sample_frame",
    "baseline_constant_velocity",
    "attention_csv_rows",
]

# [mid x, y; segment vector x, y; occupancy; flow(4); light one-hot(4); on-route]
FEATURE_DIM = 14
# [0, 0, 0, speed, yaw rate]: position and heading are zeroed by the
# ego-relative normalization, so only the motion scalars carry signal.
EGO_FEATURE_DIM = 5


def _ego_state(tofg: Tofg) -> AgentState:
    if tofg.scenario is None:
        raise ValueError("tofg carries no scenario reference; build it with build_tofg")
    st = tofg.scenario.ego.state_at(tofg.frame_ids[-1])
    if st is None:
        raise ValueError(f"ego not observed at the last history frame {tofg.frame_ids[-1]}")
    return st


def node_features(tofg: Tofg, ego_xy: np.ndarray, coord_scale: float) -> np.ndarray:
    """Stack per-frame node features, frame-major, shape (T*n, 14).

    Midpoints are shifted to ego-relative coordinates and divided by
    coord_scale; all other entries are used as stored in the graph.
    """
    lg = tofg.lane_graph
    n = lg.n_nodes
    feats = np.zeros((len(tofg.frames) * n, FEATURE_DIM))
    rel_mid = (lg.midpoints - ego_xy) / coord_scale
    for t, ofg in enumerate(tofg.frames):
        block = feats[t * n : (t + 1) * n]
        block[:, 0:2] = rel_mid
        block[:, 2:4] = lg.vectors
        block[:, 4] = ofg.occupancy
        block[:, 5:9] = ofg.flow
        block[np.arange(n), 9 + ofg.light.astype(np.int64)] = 1.0
        block[:, 13] = ofg.on_route
    return feats


def _union_adjacency(tofg: Tofg) -> list[list[int]]:
    """Neighbor lists over all frames' nodes: multiscale, interaction,
    and temporal edges fused into one undirected adjacency."""
    cached = getattr(tofg, "_adjacency", None)
    if cached is not None:
        return cached
    n = tofg.lane_graph.n_nodes
    total = len(tofg.frames) * n
    nbr: list[set[int]] = [set() for _ in range(total)]

    def link(a: int, b: int) -> None:
        nbr[a].add(b)
        nbr[b].add(a)

    for t, ofg in enumerate(tofg.frames):
        off = t * n
        for u, v in ofg.edges["multiscale"]:
            link(off + u, off + v)
        for u, v in ofg.edges["interaction"]:
            link(off + u, off + v)
    for t, u, v in tofg.temporal_edges:
        link(t * n + u, (t - 1) * n + v)
    adjacency = [sorted(s) for s in nbr]
    tofg._adjacency = adjacency
    return adjacency


def encode(tofg: Tofg, config: ModelConfig, params: ParamStore) -> tuple[Matrix, Matrix]:
    """Embed node features and run the stacked graph-attention layers.

    Returns (node embeddings over all T frames, ego embedding row).
    """
    config.validate()
    if len(tofg.frames) != config.history:
        raise ValueError(
            f"tofg covers {len(tofg.frames)} frames, model expects history {config.history}"
        )
    st = _ego_state(tofg)
    ego_xy = np.array([st.x, st.y])
    feats = node_features(tofg, ego_xy, config.coord_scale)
    d = config.embed_dim
    h = mlp(Matrix(feats), params, "embed", [FEATURE_DIM, config.mlp_hidden, d])
    neighbors = _union_adjacency(tofg)
    for li in range(config.n_gat_layers):
        w1 = params.param(f"gat{li}.w1", 2 * d, d)
        w2 = params.param(f"gat{li}.w2", d, d)
        h = gat_layer(h, neighbors, w1, w2)
    ego_feat = np.array([[0.0, 0.0, 0.0, st.speed, st.yaw_rate]])
    h_ego = mlp(Matrix(ego_feat), params, "ego", [EGO_FEATURE_DIM, config.mlp_hidden, d])
    return h, h_ego


@dataclass(eq=False)
class AttentionMap:
    """Cross-attention weights over the last frame's nodes.

    per_head has shape (n_head, n); each row sums to 1. frame_pos
    indexes the attended frame within the source tofg.
    """

    tofg: Tofg
    frame_pos: int
    per_head: np.ndarray

    @property
    def head_mean(self) -> np.ndarray:
        return self.per_head.mean(axis=0)


def _forward(
    tofg: Tofg, config: ModelConfig, params: ParamStore
) -> tuple[Matrix, AttentionMap, np.ndarray]:
    """Full forward pass; waypoints stay ego-relative and on the tape."""
    h, h_ego = encode(tofg, config, params)
    st = _ego_state(tofg)
    n = tofg.lane_graph.n_nodes
    t_last = len(tofg.frames) - 1
    h_last = gather_rows(h, np.arange(t_last * n, (t_last + 1) * n))
    d = config.embed_dim
    attn_params = {k: params.param(f"attn.{k}", d, d) for k in ("wq", "wk", "wv", "w_att")}
    y_att, weights = cross_attention(h_ego, h_last, attn_params, config.n_head)
    out = mlp(y_att, params, "dec", [d, config.mlp_hidden, 2 * config.horizon], final_zero=True)
    pred_rel = reshape(out, config.horizon, 2)
    att = AttentionMap(tofg=tofg, frame_pos=t_last, per_head=np.stack(weights))
    return pred_rel, att, np.array([st.x, st.y])


def predict(tofg: Tofg, config: ModelConfig, params: ParamStore) -> tuple[np.ndarray, AttentionMap]:
    """Predict H future ego waypoints in world coordinates."""
    pred_rel, att, ego_xy = _forward(tofg, config, params)
    return pred_rel.data + ego_xy, att


def imitation_loss(pred: Matrix, truth) -> Matrix:
    """Sum over steps of the Euclidean distance between waypoint pairs."""
    t = truth if isinstance(truth, Matrix) else Matrix(np.asarray(truth, dtype=float))
    if pred.shape != t.shape:
        raise ValueError(f"imitation_loss length mismatch: {pred.shape} vs {t.shape}")
    diff = pred - t
    return sum_all(sqrt_elems(sum_rows(diff * diff)))


def default_sample_frame(scenario: Scenario, config: ModelConfig) -> int:
    """Center the history+horizon window on the ego track."""
    ego = scenario.ego
    n_avail = ego.last_frame - ego.first_frame + 1
    need = config.history + config.horizon
    if n_avail < need:
        raise ValueError(
            f"scenario {scenario.id!r}: ego track has {n_avail} frames, needs {need}"
        )
    return ego.first_frame + config.history - 1 + (n_avail - need) // 2


def extract_sample(
    scenario: Scenario,
    graph_cfg: GraphConfig,
    model_cfg: ModelConfig,
    t0: int | None = None,
    lane_graph=None,
) -> tuple[Tofg, np.ndarray]:
    """Cut one (tofg, future trajectory) training sample at frame t0.

    The tofg covers frames t0-T+1..t0; the ground truth is the ego's
    logged world positions at t0+1..t0+H.
    """
    if t0 is None:
        t0 = default_sample_frame(scenario, model_cfg)
    ego = scenario.ego
    frames = range(t0 - model_cfg.history + 1, t0 + 1)
    truth = []
    for j in range(1, model_cfg.horizon + 1):
        st = ego.state_at(t0 + j)
        if st is None:
            raise ValueError(f"scenario {scenario.id!r}: ego missing at future frame {t0 + j}")
        truth.append([st.x, st.y])
    tofg = build_tofg(scenario, frames, graph_cfg, lane_graph=lane_graph)
    return tofg, np.array(truth)


def baseline_constant_velocity(tofg: Tofg, horizon: int) -> np.ndarray:
    """Extrapolate the ego's last observed velocity for H steps."""
    st = _ego_state(tofg)
    dt = tofg.scenario.frame_interval
    steps = np.arange(1, horizon + 1)[:, None] * dt
    return np.array([st.x, st.y]) + steps * np.array([st.vx, st.vy])


def _clip_gradients(params: ParamStore, max_norm: float) -> None:
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= scale


def train(
    corpus: list[tuple[Tofg, np.ndarray]],
    config: ModelConfig,
    train_config: TrainConfig,
    params: ParamStore | None = None,
) -> tuple[ParamStore, list[float]]:
    """Minibatch Adam on the mean imitation loss.

    corpus entries are (tofg, world-frame future trajectory of H rows).
    Returns the trained parameters and the per-epoch mean loss curve;
    fully deterministic for fixed seeds.
    """
    config.validate()
    train_config.validate()
    if not corpus:
        raise ValueError("training corpus is empty")
    samples: list[tuple[Tofg, np.ndarray]] = []
    for tofg, truth in corpus:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != (config.horizon, 2):
            raise ValueError(
                f"ground truth shape {truth.shape}, expected {(config.horizon, 2)}"
            )
        st = _ego_state(tofg)
        samples.append((tofg, truth - np.array([st.x, st.y])))
    if params is None:
        params = ParamStore(seed=config.seed)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(train_config.seed), spawn_key=(11,))
    )
    history: list[float] = []
    for _ in range(train_config.epochs):
        order = rng.permutation(len(samples))
        epoch_losses: list[float] = []
        for lo in range(0, len(order), train_config.batch_size):
            batch = order[lo : lo + train_config.batch_size]
            for si in batch:
                tofg, truth_rel = samples[si]
                pred_rel, _, _ = _forward(tofg, config, params)
                loss = imitation_loss(pred_rel, Matrix(truth_rel))
                epoch_losses.append(loss.item())
                backward(loss * (1.0 / len(batch)), params)
            if train_config.grad_clip > 0:
                _clip_gradients(params, train_config.grad_clip)
            adam_step(params, lr=train_config.lr)
        mean_loss = float(np.mean(epoch_losses))
        if not math.isfinite(mean_loss):
            raise NumericError(f"training diverged: epoch loss {mean_loss}")
        history.append(mean_loss)
    return params, history


def attention_csv_rows(att: AttentionMap) -> tuple[list[str], list[list]]:
    """Flatten an attention map for CSV export, one row per node.

    Columns: node_id, frame, x, y, head0..head{k-1}, mean. Each head
    column sums to 1 over the rows.
    """
    ofg = att.tofg.frames[att.frame_pos]
    lg = att.tofg.lane_graph
    n_head = att.per_head.shape[0]
    header = ["node_id", "frame", "x", "y", *[f"head{h}" for h in range(n_head)], "mean"]
    mean = att.head_mean
    rows = []
    for i in range(lg.n_nodes):
        rows.append(
            [
                i,
                ofg.frame,
                float(lg.midpoints[i, 0]),
                float(lg.midpoints[i, 1]),
                *[float(att.per_head[h, i]) for h in range(n_head)],
                float(mean[i]),
            ]
        )
    return header, rows
