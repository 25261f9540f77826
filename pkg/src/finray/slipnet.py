"""Tactile sensor graph and a small graph-convolutional slip classifier.

Nodes are taxels. Within an array every taxel links to its 8-neighbourhood;
across arrays each taxel links to the same-index taxel of the other arrays.
For three 4x4 arrays this gives 3 * 84 + 3 * 32 = 348 directed edges.

The network is three GCN layers ``H <- ReLU(A_hat H W)`` with symmetric
normalisation, mean pooling over nodes and a logistic readout. Gradients are
written out by hand and checked against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadLayout, DimensionMismatch, Divergence
from .rng import substream
from .tactile import (N_ARRAYS, ROWS, COLS, TactileFrame, TraceSpec, calibrate_threshold,
                      generate_trace, lowpass, stack)

NEIGHBOURS_8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def grid_edges(rows: int, cols: int, offset: int = 0) -> list:
    """Directed 8-neighbour edges of a row-major ``rows x cols`` grid."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in NEIGHBOURS_8:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append((offset + r * cols + c, offset + rr * cols + cc))
    return edges


def layout_edges(n_arrays: int = N_ARRAYS, rows: int = ROWS, cols: int = COLS,
                 inter_array: bool = True) -> np.ndarray:
    per = rows * cols
    edges = []
    for a in range(n_arrays):
        edges += grid_edges(rows, cols, a * per)
    if inter_array:
        for a in range(n_arrays):
            for b in range(n_arrays):
                if a != b:
                    edges += [(a * per + k, b * per + k) for k in range(per)]
    return np.array(edges, dtype=int).reshape(-1, 2)


def normalize_adjacency(edges, node_count: int) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with A symmetrised from the edge list."""
    a = np.zeros((node_count, node_count))
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= node_count):
        raise ValueError("edge references a node outside the graph")
    a[e[:, 0], e[:, 1]] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 1.0)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


@dataclass(frozen=True, eq=False)
class TactileGraph:
    node_count: int
    features: np.ndarray          # (node_count, d0)
    edges: np.ndarray             # (E, 2) directed
    a_hat: np.ndarray = field(repr=False)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def build_graph(frame, n_arrays: int = N_ARRAYS, rows: int = ROWS, cols: int = COLS,
                inter_array: bool = True) -> TactileGraph:
    """Graph for a frame (or raw per-node feature array) on the given layout."""
    x = frame.forces if isinstance(frame, TactileFrame) else np.asarray(frame, float)
    n = n_arrays * rows * cols
    if x.ndim <= 2 and x.size == n:
        x = x.reshape(n, 1)
    elif x.ndim == 2 and x.shape[0] == n:
        pass
    else:
        raise BadLayout(f"expected {n_arrays} arrays of {rows}x{cols} taxels, got shape {x.shape}")
    edges = layout_edges(n_arrays, rows, cols, inter_array)
    return TactileGraph(n, x, edges, normalize_adjacency(edges, n))


_STANDARD = {}


def standard_a_hat() -> np.ndarray:
    """Cached propagation matrix of the 3 x (4x4) layout."""
    if "a" not in _STANDARD:
        e = layout_edges()
        _STANDARD["a"] = normalize_adjacency(e, N_ARRAYS * ROWS * COLS)
    return _STANDARD["a"]


# ------------------------------------------------------------------ network

@dataclass(frozen=True, eq=False)
class GcnParams:
    """Layer weights ``W1..Wk``, readout ``w`` (d_k,), bias ``b``.

    ``feature_scale`` multiplies raw node features before the first layer; it
    is fixed at training time and stored with the model.
    """

    weights: tuple
    readout: np.ndarray
    bias: float = 0.0
    feature_scale: float = 1.0

    def __post_init__(self):
        ws = tuple(np.asarray(w, float) for w in self.weights)
        for w0, w1 in zip(ws, ws[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise DimensionMismatch("layer widths do not chain")
        r = np.asarray(self.readout, float).reshape(-1)
        if ws and r.shape[0] != ws[-1].shape[1]:
            raise DimensionMismatch("readout width does not match last layer")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "readout", r)
        object.__setattr__(self, "bias", float(self.bias))
        if not all(np.all(np.isfinite(w)) for w in ws + (r,)):
            raise ValueError("non-finite parameters")

    @property
    def W1(self):
        return self.weights[0]

    @property
    def W2(self):
        return self.weights[1]

    @property
    def W3(self):
        return self.weights[2]

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [self.readout, [self.bias]])

    def unflat(self, v: np.ndarray) -> "GcnParams":
        out, i = [], 0
        for w in self.weights:
            out.append(v[i:i + w.size].reshape(w.shape))
            i += w.size
        k = self.readout.size
        return GcnParams(tuple(out), v[i:i + k], float(v[i + k]), self.feature_scale)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "feature_scale": self.feature_scale,
            "weights": [w.ravel().tolist() for w in self.weights],
            "readout": self.readout.tolist(),
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GcnParams":
        dims = d["dims"]
        ws = tuple(np.asarray(w, float).reshape(dims[i], dims[i + 1]) for i, w in enumerate(d["weights"]))
        return cls(ws, np.asarray(d["readout"], float), float(d["bias"]), float(d.get("feature_scale", 1.0)))


def init_params(dims=(1, 16, 16, 16), seed: int = 0, zero_readout: bool = True,
                feature_scale: float = 1.0) -> GcnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from a seeded stream."""
    rng = substream(seed, "slipnet/init")
    ws = []
    for a, b in zip(dims[:-1], dims[1:]):
        lim = 1.0 / np.sqrt(a)
        ws.append(rng.uniform(-lim, lim, size=(a, b)))
    if zero_readout:
        r = np.zeros(dims[-1])
    else:
        lim = 1.0 / np.sqrt(dims[-1])
        r = rng.uniform(-lim, lim, size=dims[-1])
    return GcnParams(tuple(ws), r, 0.0, feature_scale)


def _propagate(a_hat, h):
    """``A_hat @ h`` for node-major h of shape (n, B, d) as one matrix product."""
    n, b, d = h.shape
    return (a_hat @ h.reshape(n, b * d)).reshape(n, b, d)


def _as_batch(x, d0):
    """(B, n, d0) batch from (n,), (B, n) or (B, n, d0) input."""
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None] if d0 == 1 and x.shape[-1] != 1 else x[None]
    if x.shape[-1] != d0:
        raise DimensionMismatch(f"feature width {x.shape[-1]} != {d0}")
    return x


def _matmul(h, w):
    n, b, d = h.shape
    return (h.reshape(n * b, d) @ w).reshape(n, b, w.shape[1])


def forward(params: GcnParams, x, a_hat: np.ndarray):
    """Batched forward pass. ``x`` is (B, n, d0) or (B, n) for scalar features.

    Returns probabilities (B,) and a cache for :func:`loss_and_grad`.
    Activations are held node-major, (n, B, d).
    """
    h = np.ascontiguousarray(_as_batch(x, params.dims[0]).transpose(1, 0, 2)) * params.feature_scale
    if h.shape[0] != a_hat.shape[0]:
        raise DimensionMismatch("node count does not match the graph")
    inputs, pre = [], []
    for w in params.weights:
        ah = _propagate(a_hat, h)
        inputs.append(ah)
        z = _matmul(ah, w)
        pre.append(z)
        h = np.maximum(z, 0.0)
    pooled = h.mean(axis=0)
    logit = pooled @ params.readout + params.bias
    prob = 0.5 * (1.0 + np.tanh(0.5 * logit))   # overflow-free logistic
    return prob, {"inputs": inputs, "pre": pre, "pooled": pooled, "logit": logit}


def gcn_forward(params: GcnParams, graph: TactileGraph) -> dict:
    prob, cache = forward(params, graph.features[None], graph.a_hat)
    return {"probability": float(prob[0]), "hidden": [np.maximum(z[:, 0], 0) for z in cache["pre"]]}


def bce(prob, y, logit=None) -> float:
    """Mean binary cross-entropy, evaluated from the logit for stability."""
    y = np.asarray(y, float)
    if logit is None:
        p = np.clip(prob, 1e-15, 1 - 1e-15)
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


def loss_and_grad(params: GcnParams, x, y, a_hat, l2: float = 0.0):
    """Data loss + l2 * sum ||W||^2 (readout included, bias excluded), and its gradient."""
    y = np.asarray(y, float)
    prob, c = forward(params, x, a_hat)
    b = len(y)
    data = bce(prob, y, c["logit"])
    reg = l2 * (sum(float((w * w).sum()) for w in params.weights) + float(params.readout @ params.readout))

    dlogit = (prob - y) / b
    g_read = c["pooled"].T @ dlogit + 2 * l2 * params.readout
    g_bias = float(dlogit.sum())
    n = c["pre"][-1].shape[0]
    dh = np.broadcast_to((dlogit[:, None] * params.readout[None, :])[None] / n, c["pre"][-1].shape)
    g_ws = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        dz = dh * (c["pre"][k] > 0)
        ah = c["inputs"][k]
        g_ws[k] = ah.reshape(-1, ah.shape[-1]).T @ dz.reshape(-1, dz.shape[-1]) + 2 * l2 * params.weights[k]
        if k:
            # A_hat is symmetric
            dh = _propagate(a_hat, _matmul(dz, params.weights[k].T))
    if not (np.isfinite(g_bias) and all(np.all(np.isfinite(g)) for g in g_ws + [g_read])):
        raise Divergence("gradient became non-finite")
    grad = GcnParams(tuple(g_ws), g_read, g_bias, params.feature_scale)
    return data + reg, data, grad


def grad_check(params: GcnParams, graph: TactileGraph, label: int, epsilon: float = 1e-5,
               l2: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must be in [1e-7, 1e-3]")
    x = graph.features[None]
    y = np.array([label], float)
    _, _, g = loss_and_grad(params, x, y, graph.a_hat, l2)
    analytic = g.flat()
    v = params.flat()
    numeric = np.zeros_like(v)
    for i in range(len(v)):
        vp, vm = v.copy(), v.copy()
        vp[i] += epsilon
        vm[i] -= epsilon
        fp = loss_and_grad(params.unflat(vp), x, y, graph.a_hat, l2)[0]
        fm = loss_and_grad(params.unflat(vm), x, y, graph.a_hat, l2)[0]
        numeric[i] = (fp - fm) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2.0
    epochs: int = 150
    l2_penalty: float = 1e-5
    seed: int = 0
    hidden: tuple = (16, 16, 16)
    window: int = 1                    # filtered frames per node feature, newest first

    def __post_init__(self):
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.l2_penalty >= 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SlipDataset:
    """Taxel features with labels (0 below, 1 above threshold).

    Features are (N, 48) for single frames or (N, 48, window) when each node
    carries its last ``window`` filtered readings, newest first.
    """

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, float)
        y = np.asarray(self.labels).astype(int)
        if x.ndim not in (2, 3) or x.shape[0] != y.shape[0]:
            raise DimensionMismatch("features must be (N, nodes) or (N, nodes, window) and match labels")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def window(self) -> int:
        return 1 if self.features.ndim == 2 else self.features.shape[2]

    @property
    def current(self) -> np.ndarray:
        """(N, 48) newest frame of every sample."""
        return self.features if self.features.ndim == 2 else self.features[..., 0]


def train(dataset: SlipDataset, config: TrainConfig = TrainConfig(), a_hat=None,
          params: GcnParams | None = None) -> dict:
    """Full-batch gradient descent on BCE + l2. History records the data loss per epoch
    (evaluated before each update)."""
    if len(dataset) == 0:
        raise ValueError("empty training split")
    a_hat = standard_a_hat() if a_hat is None else a_hat
    x, y = dataset.features, dataset.labels
    if dataset.window != config.window:
        raise DimensionMismatch(f"dataset window {dataset.window} != configured window {config.window}")
    if params is None:
        pos = x[x > 0]
        scale = 1.0 / float(np.std(pos)) if pos.size and np.std(pos) > 0 else 1.0
        params = init_params((config.window,) + config.hidden, config.seed, feature_scale=scale)
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs):
            total, data, g = loss_and_grad(params, x, y, a_hat, config.l2_penalty)
            if not np.isfinite(total):
                raise Divergence("loss became non-finite")
            history.append(data)
            if config.learning_rate:
                v = params.flat() - config.learning_rate * g.flat()
                if not np.all(np.isfinite(v)):
                    raise Divergence("parameters became non-finite")
                params = params.unflat(v)
    return {"params": params, "loss_history": history}


def predict(params: GcnParams, x, a_hat=None) -> np.ndarray:
    """Class predictions; probability exactly 0.5 maps to class 0."""
    a_hat = standard_a_hat() if a_hat is None else a_hat
    prob, _ = forward(params, x, a_hat)
    return (prob > 0.5).astype(int)


def evaluate(params: GcnParams, dataset: SlipDataset, a_hat=None) -> dict:
    pred = predict(params, dataset.features, a_hat)
    y = dataset.labels
    cm = np.zeros((2, 2), dtype=int)
    np.add.at(cm, (y, pred), 1)
    return {"accuracy": float(np.mean(pred == y)), "confusion": cm}


# ------------------------------------------------------------------ dataset

def windows(x: np.ndarray, window: int) -> np.ndarray:
    """(N, 48) frames to (N - window + 1, 48, window); lag j sits at index j."""
    if window == 1:
        return x
    n = len(x) - window + 1
    if n < 1:
        raise ValueError("trace shorter than the window")
    return np.stack([x[window - 1 - j: window - 1 - j + n] for j in range(window)], axis=-1)


def label_trace(frames, model, alpha: float = 0.5, window: int = 1) -> tuple:
    """Filtered features and labels for one trace.

    Features are (N, 48), or (N - window + 1, 48, window) for a window. Labels
    follow the convention 0 = newest filtered aggregate below ``f_min``,
    1 = at or above it.
    """
    t, x = stack(lowpass(frames, alpha))
    feats = x.reshape(len(t), -1)
    labels = (feats.sum(axis=1) >= model.f_min).astype(int)
    k = window - 1
    return windows(feats, window), labels[k:], t[k:]


def generate_dataset(spec: TraceSpec, n_train: int = 2100, n_test: int = 700, seed: int = 0,
                     n_traces: int = 8, test_traces: int = 2, alpha: float = 0.5, window: int = 1) -> tuple:
    """Train/test splits drawn from seeded synthetic traces.

    Each trace is calibrated on its own and its frames labelled by the
    recovered ``f_min``. Test frames come from traces never seen in training.
    """
    if not 0 < test_traces < n_traces:
        raise ValueError("need at least one training and one test trace")
    pools = {"train": [], "test": []}
    for k in range(n_traces):
        s = replace(spec, seed=int(substream(seed, "slipnet/trace", k).integers(2 ** 31)))
        frames = generate_trace(s)
        model = calibrate_threshold(frames)
        x, y, t = label_trace(frames, model, alpha, window)
        pools["test" if k >= n_traces - test_traces else "train"].append((x, y, t))
    out = []
    for split, n in (("train", n_train), ("test", n_test)):
        x = np.concatenate([p[0] for p in pools[split]])
        y = np.concatenate([p[1] for p in pools[split]])
        t = np.concatenate([p[2] for p in pools[split]])
        if n > len(y):
            raise ValueError(f"{split} pool holds only {len(y)} frames")
        idx = np.sort(substream(seed, "slipnet/split", 0 if split == "train" else 1)
                      .choice(len(y), size=n, replace=False))
        out.append(SlipDataset(x[idx], y[idx], split, t[idx]))
    return out[0], out[1]
