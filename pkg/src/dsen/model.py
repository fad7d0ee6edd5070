"""Feature extractor and classifier for dyadic-subject EEG.

Per subject: split the amplitude series into per-clip segments, per-channel
local 1-D conv -> batch-norm -> ReLU -> adaptive max-pool, concatenate along
time, per-channel global 1-D conv (same post-ops) down to the temporal
feature width, then three EdgeConv blocks on the fully-connected electrode
graph. Each block's vertex features are globally max-pooled and the three
pooled vectors concatenated and refined by two linear layers into the final
feature vector.

The classifier fuses the two subjects' features with single-token attention
(query/key/value linear maps, scaled dot product) and maps the fused vector
to the two relationship logits through two linear layers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (
    Tensor,
    adaptive_max_pool1d,
    batch_norm,
    concat,
    conv1d,
    dropout,
    linear,
    softmax,
    take,
)
from .errors import ConfigError, GraphTooSmallError, ShapeError

STRANGER, FRIEND = 0, 1


@dataclass(frozen=True)
class ExtractorConfig:
    """Shape parameters of the feature extractor and classifier head."""

    n_channels: int = 30
    n_segments: int = 9
    segment_len: int = 400
    local_kernel: int = 64
    local_pool_target: int = 100
    global_kernel: int = 200
    temporal_feature_dim: int = 128
    edgeconv_dims: tuple[int, ...] = (128, 256, 512)
    head_out_dim: int = 128
    dropout_keep: float = 0.75
    neighbor_aggregate: str = "max"  # or "mean"
    edge_feature: str = "concat"  # or "difference" (bare neighbor difference)
    shared_channel_filter: bool = False  # tie conv weights across channels

    def __post_init__(self):
        for name in (
            "n_channels", "n_segments", "segment_len", "local_kernel",
            "local_pool_target", "global_kernel", "temporal_feature_dim",
            "head_out_dim",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.dropout_keep <= 1:
            raise ConfigError("dropout_keep must be in (0, 1]")
        if len(self.edgeconv_dims) != 3:
            raise ConfigError("exactly three EdgeConv blocks are expected")
        for a, b in zip(self.edgeconv_dims, self.edgeconv_dims[1:]):
            if b != 2 * a:
                raise ConfigError(
                    f"edgeconv_dims must double at each block, got {self.edgeconv_dims}"
                )
        if self.local_kernel > self.segment_len:
            raise ConfigError("local kernel longer than a segment")
        if self.local_pool_target > self.segment_len - self.local_kernel + 1:
            raise ConfigError("local_pool_target exceeds the local conv output")
        if self.neighbor_aggregate not in ("max", "mean"):
            raise ConfigError("neighbor_aggregate must be 'max' or 'mean'")
        if self.edge_feature not in ("concat", "difference"):
            raise ConfigError("edge_feature must be 'concat' or 'difference'")

    @property
    def effective_global_kernel(self) -> int:
        """Global kernel clamped to the concatenated local-feature length
        (the single-clip setting shrinks that length below the kernel)."""
        return min(self.global_kernel, self.n_segments * self.local_pool_target)

    @property
    def concat_len(self) -> int:
        return self.n_segments * self.local_pool_target

    @property
    def pooled_dim(self) -> int:
        return sum(self.edgeconv_dims)

    @property
    def fused_dim(self) -> int:
        return 2 * self.head_out_dim

    def validate_runtime(self) -> None:
        out_len = self.concat_len - self.effective_global_kernel + 1
        if out_len < self.temporal_feature_dim:
            raise ConfigError(
                f"global conv output {out_len} is shorter than "
                f"temporal_feature_dim {self.temporal_feature_dim}"
            )


@dataclass(frozen=True)
class ElectrodeGraph:
    """Fully-connected electrode graph: every vertex adjacent to all others,
    no self-loops."""

    n_vertices: int

    def __post_init__(self):
        if self.n_vertices < 2:
            raise GraphTooSmallError("graph needs at least two vertices")

    @property
    def adjacency(self) -> np.ndarray:
        a = np.ones((self.n_vertices, self.n_vertices)) - np.eye(self.n_vertices)
        return a

    def neighbor_index(self) -> np.ndarray:
        """[V, V-1] indices of each vertex's neighbors, ascending."""
        v = self.n_vertices
        grid = np.tile(np.arange(v), (v, 1))
        return grid[~np.eye(v, dtype=bool)].reshape(v, v - 1)


@dataclass
class DsenParams:
    """Learnable weights of the extractor and classifier plus the
    batch-norm running statistics (non-learnable state)."""

    extractor: dict[str, Tensor]
    classifier: dict[str, Tensor]
    bn_state: dict[str, np.ndarray] = field(default_factory=dict)

    def all_learnable(self) -> dict[str, Tensor]:
        merged = {f"f.{k}": v for k, v in self.extractor.items()}
        merged.update({f"c.{k}": v for k, v in self.classifier.items()})
        return merged

    def n_parameters(self) -> int:
        return sum(p.size for p in self.all_learnable().values())

    def flatten_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.all_learnable().items()}
        out.update({f"state.{k}": v for k, v in self.bn_state.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.all_learnable().items():
            if arrays[name].shape != t.data.shape:
                raise ShapeError(f"checkpoint entry {name} has shape "
                                 f"{arrays[name].shape}, expected {t.data.shape}")
            t.data = arrays[name].copy()
        for key in self.bn_state:
            self.bn_state[key] = arrays[f"state.{key}"].copy()


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_params(cfg: ExtractorConfig, rng: np.random.Generator) -> DsenParams:
    """Deterministic parameter initialization from an explicit RNG."""
    cfg.validate_runtime()
    c = cfg.n_channels
    conv_rows = 1 if cfg.shared_channel_filter else c

    ext: dict[str, Tensor] = {}
    ext["local.w"] = _glorot(rng, (conv_rows, 1, cfg.local_kernel),
                             cfg.local_kernel, cfg.local_kernel)
    ext["local.b"] = _zeros(c)
    ext["local_bn.gamma"] = _ones(c)
    ext["local_bn.beta"] = _zeros(c)
    kg = cfg.effective_global_kernel
    ext["global.w"] = _glorot(rng, (conv_rows, 1, kg), kg, kg)
    ext["global.b"] = _zeros(c)
    ext["global_bn.gamma"] = _ones(c)
    ext["global_bn.beta"] = _zeros(c)

    d_in = cfg.temporal_feature_dim
    for block, d_out in enumerate(cfg.edgeconv_dims, start=1):
        width = 2 * d_in if cfg.edge_feature == "concat" else d_in
        ext[f"edge{block}.w1"] = _glorot(rng, (width, d_out), width, d_out)
        ext[f"edge{block}.b1"] = _zeros(d_out)
        ext[f"edge{block}.w2"] = _glorot(rng, (d_out, d_out), d_out, d_out)
        ext[f"edge{block}.b2"] = _zeros(d_out)
        d_in = d_out

    h = cfg.head_out_dim
    ext["head.w1"] = _glorot(rng, (cfg.pooled_dim, h), cfg.pooled_dim, h)
    ext["head.b1"] = _zeros(h)
    ext["head.w2"] = _glorot(rng, (h, h), h, h)
    ext["head.b2"] = _zeros(h)

    cls: dict[str, Tensor] = {}
    for name in ("wq", "wk", "wv"):
        cls[name] = _glorot(rng, (h, h), h, h)
    cls["fc1.w"] = _glorot(rng, (cfg.fused_dim, h), cfg.fused_dim, h)
    cls["fc1.b"] = _zeros(h)
    cls["fc2.w"] = _glorot(rng, (h, 2), h, 2)
    cls["fc2.b"] = _zeros(2)

    bn_state = {
        "local_bn.mean": np.zeros(c),
        "local_bn.var": np.ones(c),
        "global_bn.mean": np.zeros(c),
        "global_bn.var": np.ones(c),
    }
    return DsenParams(extractor=ext, classifier=cls, bn_state=bn_state)


def _conv_kernels(w: Tensor, n_channels: int) -> Tensor:
    """Per-channel kernels; a shared filter is broadcast to every channel."""
    if w.shape[0] == n_channels:
        return w
    return take(w, np.zeros(n_channels, dtype=np.intp), axis=0)


def edgeconv_block(
    vertex_feats: Tensor,
    weights: dict[str, Tensor],
    graph: ElectrodeGraph,
    aggregate: str = "max",
    edge_feature: str = "concat",
) -> Tensor:
    """One EdgeConv pass over a fully-connected graph.

    For vertex i and neighbor j the edge feature is [fea_i, fea_j - fea_i]
    (or the bare difference), pushed through the shared
    linear -> ReLU -> linear stack and aggregated over neighbors.

    Args:
        vertex_feats: [B, V, D] or [V, D].
        weights: w1/b1/w2/b2 of the shared MLP.

    Returns:
        [B, V, D_out] (or [V, D_out] for an unbatched input).
    """
    t = Tensor.lift(vertex_feats)
    squeeze = t.ndim == 2
    if squeeze:
        t = t.reshape(1, *t.shape)
    b, v, d = t.shape
    if v != graph.n_vertices:
        raise ShapeError(f"{v} vertex rows for a {graph.n_vertices}-vertex graph")

    nbr = graph.neighbor_index()
    self_idx = np.repeat(np.arange(v)[:, None], v - 1, axis=1)
    fea_i = take(t, self_idx, axis=1)  # [B, V, V-1, D]
    fea_j = take(t, nbr, axis=1)
    diff = fea_j - fea_i
    edge = concat([fea_i, diff], axis=3) if edge_feature == "concat" else diff

    width = edge.shape[-1]
    flat = edge.reshape(b * v * (v - 1), width)
    hidden = linear(flat, weights["w1"], weights["b1"]).relu()
    out = linear(hidden, weights["w2"], weights["b2"])
    d_out = out.shape[-1]
    out = out.reshape(b, v, v - 1, d_out)
    out = out.max(axis=2) if aggregate == "max" else out.mean(axis=2)
    return out.reshape(v, d_out) if squeeze else out


def extract_features(
    amp: Tensor,
    params: DsenParams,
    cfg: ExtractorConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Map a per-channel amplitude series to the subject feature vector.

    Args:
        amp: [B, C, n_segments * segment_len] or unbatched [C, ...].
        training: batch-norm uses batch statistics (updating the running
            estimates in ``params.bn_state``) and dropout is active.
        rng: dropout stream, required when training.

    Returns:
        [B, head_out_dim] (or [head_out_dim] for an unbatched input).
    """
    cfg.validate_runtime()
    x = Tensor.lift(amp)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, c, length = x.shape
    if c != cfg.n_channels or length != cfg.n_segments * cfg.segment_len:
        raise ConfigError(
            f"input {x.shape} does not match config "
            f"[{cfg.n_channels}, {cfg.n_segments} * {cfg.segment_len}]"
        )
    if cfg.effective_global_kernel < cfg.global_kernel:
        warnings.warn(
            f"global kernel clamped from {cfg.global_kernel} to "
            f"{cfg.effective_global_kernel} for {cfg.n_segments} segment(s)",
            stacklevel=2,
        )

    ext, state = params.extractor, params.bn_state
    n, seg = cfg.n_segments, cfg.segment_len

    # Local stage: fold segments into the batch so the shared layer and one
    # batch-norm update see every segment at once.
    xs = x.reshape(b, c, n, seg).transpose((0, 2, 1, 3)).reshape(b * n, c, seg)
    h = conv1d(xs, _conv_kernels(ext["local.w"], c), ext["local.b"], groups=c)
    h, state["local_bn.mean"], state["local_bn.var"] = batch_norm(
        h, ext["local_bn.gamma"], ext["local_bn.beta"],
        state["local_bn.mean"], state["local_bn.var"], training,
    )
    h = adaptive_max_pool1d(h.relu(), cfg.local_pool_target)
    p = cfg.local_pool_target
    h = h.reshape(b, n, c, p).transpose((0, 2, 1, 3)).reshape(b, c, n * p)

    t = conv1d(h, _conv_kernels(ext["global.w"], c), ext["global.b"], groups=c)
    t, state["global_bn.mean"], state["global_bn.var"] = batch_norm(
        t, ext["global_bn.gamma"], ext["global_bn.beta"],
        state["global_bn.mean"], state["global_bn.var"], training,
    )
    t = adaptive_max_pool1d(t.relu(), cfg.temporal_feature_dim)

    graph = ElectrodeGraph(c)
    pooled = []
    h = t
    for block in range(1, 4):
        weights = {k: ext[f"edge{block}.{k}"] for k in ("w1", "b1", "w2", "b2")}
        h = edgeconv_block(h, weights, graph, cfg.neighbor_aggregate, cfg.edge_feature)
        pooled.append(h.max(axis=1))
    g = concat(pooled, axis=1)

    g = linear(g, ext["head.w1"], ext["head.b1"]).relu()
    g = dropout(g, cfg.dropout_keep, rng, training)
    out = linear(g, ext["head.w2"], ext["head.b2"])
    return out.reshape(cfg.head_out_dim) if squeeze else out


def attention_fuse(
    h_x: Tensor,
    h_y: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    scale: float | None = None,
) -> Tensor:
    """Cross-attention fusion of the two subject features.

    Each feature is a length-1 token sequence: queries/keys/values are linear
    maps, the X->Y score is q_x . k_y / scale, and the fused vector is the
    concatenation [softmax(s_x) v_y, softmax(s_y) v_x]. Over a single token
    the softmax is identically one, so the fusion reduces to [v_y, v_x].
    """
    h_x, h_y = Tensor.lift(h_x), Tensor.lift(h_y)
    squeeze = h_x.ndim == 1
    if squeeze:
        h_x = h_x.reshape(1, -1)
        h_y = h_y.reshape(1, -1)
    if h_x.shape != h_y.shape or h_x.shape[1] != w_q.shape[0]:
        raise ShapeError("attention_fuse: feature/weight dimensions disagree")
    if scale is None:
        scale = float(np.sqrt(w_q.shape[0]))

    q_x, k_x, v_x = h_x @ w_q, h_x @ w_k, h_x @ w_v
    q_y, k_y, v_y = h_y @ w_q, h_y @ w_k, h_y @ w_v
    s_x = (q_x * k_y).sum(axis=1, keepdims=True) * (1.0 / scale)
    s_y = (q_y * k_x).sum(axis=1, keepdims=True) * (1.0 / scale)
    att_x = softmax(s_x, axis=1)
    att_y = softmax(s_y, axis=1)
    fused = concat([att_x * v_y, att_y * v_x], axis=1)
    return fused.reshape(-1) if squeeze else fused


def classify(
    h_fused: Tensor,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
    dropout_keep: float = 1.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Fused feature -> two relationship logits (stranger=0, friend=1)."""
    h = Tensor.lift(h_fused)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    if h.shape[1] != fc1_w.shape[0]:
        raise ShapeError(f"classifier expects {fc1_w.shape[0]}-dim input, got {h.shape[1]}")
    hidden = linear(h, fc1_w, fc1_b).relu()
    hidden = dropout(hidden, dropout_keep, rng, training)
    logits = linear(hidden, fc2_w, fc2_b)
    return logits.reshape(-1) if squeeze else logits


class DsenNetwork:
    """Config + parameters bundled with the forward passes the trainer uses."""

    def __init__(self, cfg: ExtractorConfig, params: DsenParams | None = None,
                 seed: int = 0):
        cfg.validate_runtime()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params = params if params is not None else init_params(cfg, rng)
        self.dropout_rng = np.random.default_rng(seed + 1)

    def features(self, amp, training: bool = False) -> Tensor:
        return extract_features(amp, self.params, self.cfg, training=training,
                                rng=self.dropout_rng if training else None)

    def fuse(self, h_x: Tensor, h_y: Tensor, use_attention: bool = True) -> Tensor:
        if not use_attention:
            return concat([h_x, h_y], axis=h_x.ndim - 1)
        c = self.params.classifier
        return attention_fuse(h_x, h_y, c["wq"], c["wk"], c["wv"])

    def logits(self, fused: Tensor, training: bool = False) -> Tensor:
        c = self.params.classifier
        return classify(
            fused, c["fc1.w"], c["fc1.b"], c["fc2.w"], c["fc2.b"],
            dropout_keep=self.cfg.dropout_keep, training=training,
            rng=self.dropout_rng if training else None,
        )


def reduced_config(**overrides) -> ExtractorConfig:
    """Desk-scale configuration used by the synthetic end-to-end runs."""
    base = ExtractorConfig(
        n_channels=8,
        n_segments=3,
        segment_len=400,
        local_kernel=64,
        local_pool_target=100,
        global_kernel=200,
        temporal_feature_dim=64,
        edgeconv_dims=(32, 64, 128),
        head_out_dim=32,
    )
    return replace(base, **overrides)
