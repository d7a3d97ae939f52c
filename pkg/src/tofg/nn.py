"""Dense numeric core with reverse-mode differentiation.

Matrix wraps a 2-D float64 array and records the operations applied to
it; backward() walks the recorded tape. On top of that sit the layers
the trajectory model needs: linear maps, layer normalization, ReLU,
row softmax, a residual graph-attention layer, multi-head
cross-attention, and Adam. No external ML dependency.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .fileio import read_json, write_json

__all__ = [
    "Matrix",
    "NumericError",
    "ParamStore",
    "backward",
    "adam_step",
    "relu",
    "layer_norm",
    "softmax_rows",
    "concat_cols",
    "slice_cols",
    "reshape",
    "gather_rows",
    "segment_sum",
    "transpose",
    "sqrt_elems",
    "sum_all",
    "sum_rows",
    "linear",
    "mlp",
    "gat_layer",
    "cross_attention",
    "LN_EPS",
]

# Small enough that normalized rows stay unit-variance within 1e-9.
LN_EPS = 1e-12


class NumericError(ValueError):
    """A computation produced NaN or infinity."""


class Matrix:
    """2-D float64 value on a reverse-mode tape."""

    __slots__ = ("data", "grad", "_prev", "_backward", "_done")

    def __init__(self, data, _prev: tuple = (), _check: bool = True):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"Matrix expects 2-D data, got shape {arr.shape}")
        if _check and not np.isfinite(arr).all():
            raise NumericError("Matrix entries must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._prev = _prev
        self._backward = None
        self._done = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape})"

    def __add__(self, other: Matrix) -> Matrix:
        if self.shape != other.shape:
            if not (other.rows == 1 and other.cols == self.cols):
                raise ValueError(f"add shape mismatch: {self.shape} + {other.shape}")
        out = Matrix(self.data + other.data, (self, other), _check=False)

        def _bw():
            self._accum(out.grad)
            if other.shape == self.shape:
                other._accum(out.grad)
            else:
                other._accum(out.grad.sum(axis=0, keepdims=True))

        out._backward = _bw
        return out

    def __mul__(self, other) -> Matrix:
        if isinstance(other, Matrix):
            if self.shape != other.shape:
                raise ValueError(f"mul shape mismatch: {self.shape} * {other.shape}")
            out = Matrix(self.data * other.data, (self, other), _check=False)

            def _bw():
                self._accum(out.grad * other.data)
                other._accum(out.grad * self.data)

            out._backward = _bw
            return out
        c = float(other)
        out = Matrix(self.data * c, (self,), _check=False)

        def _bw_scalar():
            self._accum(out.grad * c)

        out._backward = _bw_scalar
        return out

    __rmul__ = __mul__

    def __neg__(self) -> Matrix:
        return self * -1.0

    def __sub__(self, other: Matrix) -> Matrix:
        return self + (other * -1.0)

    def __matmul__(self, other: Matrix) -> Matrix:
        if self.cols != other.rows:
            raise ValueError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        out = Matrix(self.data @ other.data, (self, other), _check=False)

        def _bw():
            self._accum(out.grad @ other.data.T)
            other._accum(self.data.T @ out.grad)

        out._backward = _bw
        return out


def relu(x: Matrix) -> Matrix:
    out = Matrix(np.maximum(x.data, 0.0), (x,), _check=False)

    def _bw():
        x._accum(out.grad * (x.data > 0.0))

    out._backward = _bw
    return out


def sqrt_elems(x: Matrix) -> Matrix:
    """Elementwise square root; entries must be non-negative."""
    out = Matrix(np.sqrt(x.data), (x,), _check=False)

    def _bw():
        x._accum(out.grad * 0.5 / np.maximum(out.data, 1e-300))

    out._backward = _bw
    return out


def reshape(x: Matrix, rows: int, cols: int) -> Matrix:
    if rows * cols != x.data.size:
        raise ValueError(f"reshape {x.shape} -> {(rows, cols)} changes element count")
    out = Matrix(x.data.reshape(rows, cols).copy(), (x,), _check=False)

    def _bw():
        x._accum(out.grad.reshape(x.shape))

    out._backward = _bw
    return out


def transpose(x: Matrix) -> Matrix:
    out = Matrix(x.data.T.copy(), (x,), _check=False)

    def _bw():
        x._accum(out.grad.T)

    out._backward = _bw
    return out


def sum_all(x: Matrix) -> Matrix:
    out = Matrix(np.array([[x.data.sum()]]), (x,), _check=False)

    def _bw():
        x._accum(np.full_like(x.data, out.grad[0, 0]))

    out._backward = _bw
    return out


def sum_rows(x: Matrix) -> Matrix:
    """Row sums as a column, (n, k) -> (n, 1)."""
    out = Matrix(x.data.sum(axis=1, keepdims=True), (x,), _check=False)

    def _bw():
        x._accum(np.repeat(out.grad, x.cols, axis=1))

    out._backward = _bw
    return out


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ValueError("concat_cols needs at least one part")
    n = parts[0].rows
    for p in parts:
        if p.rows != n:
            raise ValueError(f"concat_cols row mismatch: {n} vs {p.rows}")
    out = Matrix(np.concatenate([p.data for p in parts], axis=1), tuple(parts), _check=False)
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def _bw():
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            p._accum(out.grad[:, lo:hi])

    out._backward = _bw
    return out


def slice_cols(x: Matrix, lo: int, hi: int) -> Matrix:
    if not (0 <= lo < hi <= x.cols):
        raise ValueError(f"slice_cols [{lo}:{hi}] out of range for {x.shape}")
    out = Matrix(x.data[:, lo:hi].copy(), (x,), _check=False)

    def _bw():
        g = np.zeros_like(x.data)
        g[:, lo:hi] = out.grad
        x._accum(g)

    out._backward = _bw
    return out


def gather_rows(x: Matrix, idx: np.ndarray) -> Matrix:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ValueError(f"gather_rows index out of range for {x.shape}")
    out = Matrix(x.data[idx], (x,), _check=False)

    def _bw():
        g = np.zeros_like(x.data)
        np.add.at(g, idx, out.grad)
        x._accum(g)

    out._backward = _bw
    return out


def segment_sum(x: Matrix, seg: np.ndarray, n_out: int) -> Matrix:
    """Sum rows of x into n_out buckets; seg must be sorted ascending.

    Rows whose bucket never appears stay zero. Sorted segments let the
    forward pass use reduceat instead of a scattered accumulate.
    """
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != x.rows:
        raise ValueError(f"segment_sum needs one segment id per row: {seg.shape[0]} vs {x.rows}")
    if seg.size and (np.diff(seg) < 0).any():
        raise ValueError("segment_sum segment ids must be sorted ascending")
    if seg.size and (seg[0] < 0 or seg[-1] >= n_out):
        raise ValueError("segment_sum segment id out of range")
    data = np.zeros((n_out, x.cols))
    if seg.size:
        uniq, starts = np.unique(seg, return_index=True)
        data[uniq] = np.add.reduceat(x.data, starts, axis=0)
    out = Matrix(data, (x,), _check=False)

    def _bw():
        x._accum(out.grad[seg])

    out._backward = _bw
    return out


def layer_norm(x: Matrix, eps: float = LN_EPS) -> Matrix:
    """Per-row normalization to mean 0, variance 1. No affine terms."""
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out = Matrix(y, (x,), _check=False)

    def _bw():
        g = out.grad
        k = x.cols
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        x._accum((g - gm - y * gy) * inv)

    out._backward = _bw
    return out


def softmax_rows(x: Matrix) -> Matrix:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Matrix(y, (x,), _check=False)

    def _bw():
        g = out.grad
        dot = (g * y).sum(axis=1, keepdims=True)
        x._accum((g - dot) * y)

    out._backward = _bw
    return out


def backward(loss: Matrix, params: ParamStore | None = None) -> None:
    """Reverse-mode pass from a 1x1 loss.

    Gradients accumulate into .grad of every reachable Matrix; pass a
    ParamStore to also zero-fill parameters the loss never touched and
    mark the store ready for an optimizer step.
    """
    if loss.data.shape != (1, 1):
        raise ValueError(f"backward needs a 1x1 loss, got {loss.shape}")
    if loss._done:
        raise RuntimeError("backward already ran for this recorded forward pass")
    loss._done = True

    topo: list[Matrix] = []
    visited: set[int] = set()
    stack: list[tuple[Matrix, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))

    loss._accum(np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()

    if params is not None:
        for name, p in params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        params.grads_ready = True


class ParamStore:
    """Named parameter matrices with gradient and Adam moment slots.

    Parameters are created on first access in call order from a seeded
    generator, so a fixed seed and a fixed model give identical weights.
    """

    def __init__(self, seed: int = 0):
        self._params: dict[str, Matrix] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(101,)))
        self.step_count = 0
        self.grads_ready = False

    def param(self, name: str, rows: int, cols: int, init: str = "uniform") -> Matrix:
        """Fetch a parameter, creating it on first use.

        init "uniform" draws from +-1/sqrt(rows); "zeros" starts flat.
        """
        if name in self._params:
            p = self._params[name]
            if p.shape != (rows, cols):
                raise ValueError(f"param {name!r} exists with shape {p.shape}, requested {(rows, cols)}")
            return p
        if init == "zeros":
            data = np.zeros((rows, cols))
        elif init == "uniform":
            bound = 1.0 / math.sqrt(rows)
            data = self._rng.uniform(-bound, bound, size=(rows, cols))
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Matrix(data)
        self._params[name] = p
        self._m[name] = np.zeros((rows, cols))
        self._v[name] = np.zeros((rows, cols))
        return p

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Matrix:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None
        self.grads_ready = False

    def to_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "params": {
                name: {"shape": list(p.shape), "data": p.data.ravel()}
                for name, p in self._params.items()
            },
            "adam_m": {name: m.ravel() for name, m in self._m.items()},
            "adam_v": {name: v.ravel() for name, v in self._v.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict, seed: int = 0) -> ParamStore:
        store = cls(seed=seed)
        store.step_count = int(doc["step_count"])
        for name, rec in doc["params"].items():
            rows, cols = (int(v) for v in rec["shape"])
            data = np.asarray(rec["data"], dtype=float).reshape(rows, cols)
            store._params[name] = Matrix(data)
            store._m[name] = np.asarray(doc["adam_m"][name], dtype=float).reshape(rows, cols)
            store._v[name] = np.asarray(doc["adam_v"][name], dtype=float).reshape(rows, cols)
        return store

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path, seed: int = 0) -> ParamStore:
        return cls.from_dict(read_json(path), seed=seed)


def adam_step(
    params: ParamStore,
    lr: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    if not params.grads_ready:
        raise RuntimeError("no gradients: run backward before adam_step")
    params.step_count += 1
    t = params.step_count
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise RuntimeError(f"missing gradient for parameter {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grads()


def linear(x: Matrix, w: Matrix, b: Matrix | None = None) -> Matrix:
    out = x @ w
    if b is not None:
        out = out + b
    return out


def mlp(x: Matrix, params: ParamStore, prefix: str, dims: Sequence[int], final_zero: bool = False) -> Matrix:
    """Linear stack with ReLU between layers, none after the last.

    dims runs input -> hidden... -> output; final_zero initializes the
    last layer's weights and bias at zero.
    """
    h = x
    last = len(dims) - 2
    for li in range(len(dims) - 1):
        init = "zeros" if final_zero and li == last else "uniform"
        w = params.param(f"{prefix}.w{li}", dims[li], dims[li + 1], init=init)
        b = params.param(f"{prefix}.b{li}", 1, dims[li + 1], init="zeros")
        h = linear(h, w, b)
        if li < last:
            h = relu(h)
    return h


def gat_layer(h: Matrix, neighbors: Sequence[Sequence[int]], w1: Matrix, w2: Matrix) -> Matrix:
    """Residual graph-attention update.

    For each node i: h'_i = h_i + sum over j in N(i) of
    ReLU(LayerNorm((h_i || h_j) W1)) W2. Empty neighborhoods leave the
    node unchanged.
    """
    n, d = h.shape
    if len(neighbors) != n:
        raise ValueError(f"gat_layer adjacency has {len(neighbors)} entries for {n} nodes")
    if w1.shape != (2 * d, d):
        raise ValueError(f"gat_layer W1 shape {w1.shape}, expected {(2 * d, d)}")
    if w2.shape != (d, d):
        raise ValueError(f"gat_layer W2 shape {w2.shape}, expected {(d, d)}")
    dst_list: list[int] = []
    src_list: list[int] = []
    for i, nbrs in enumerate(neighbors):
        for j in nbrs:
            dst_list.append(i)
            src_list.append(j)
    if not dst_list:
        return h
    dst = np.array(dst_list, dtype=np.int64)
    src = np.array(src_list, dtype=np.int64)
    hi = gather_rows(h, dst)
    hj = gather_rows(h, src)
    msg = relu(layer_norm(concat_cols([hi, hj]) @ w1)) @ w2
    return h + segment_sum(msg, dst, n)


def cross_attention(
    h_ego: Matrix,
    h_tofg: Matrix,
    params: dict[str, Matrix],
    n_head: int,
) -> tuple[Matrix, list[np.ndarray]]:
    """Multi-head attention of one ego query over graph node embeddings.

    params needs single linear maps wq, wk, wv plus the output mix
    w_att, each d x d. Returns the mixed output row and, per head, the
    attention weights over the n graph nodes (each row sums to 1).
    """
    d = h_ego.cols
    if h_ego.rows != 1:
        raise ValueError(f"cross_attention expects one ego row, got {h_ego.shape}")
    if h_tofg.cols != d:
        raise ValueError(f"cross_attention dim mismatch: ego {d}, graph {h_tofg.cols}")
    if n_head < 1 or d % n_head != 0:
        raise ValueError(f"embedding dim {d} not divisible by n_head {n_head}")
    for key in ("wq", "wk", "wv", "w_att"):
        if params[key].shape != (d, d):
            raise ValueError(f"cross_attention {key} shape {params[key].shape}, expected {(d, d)}")
    dk = d // n_head
    q = h_ego @ params["wq"]
    k = h_tofg @ params["wk"]
    v = h_tofg @ params["wv"]
    contexts: list[Matrix] = []
    weights: list[np.ndarray] = []
    scale = 1.0 / math.sqrt(dk)
    for head in range(n_head):
        lo, hi = head * dk, (head + 1) * dk
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        attn = softmax_rows((qh @ transpose(kh)) * scale)
        weights.append(attn.data[0].copy())
        contexts.append(attn @ vh)
    out = concat_cols(contexts) @ params["w_att"]
    return out, weights
