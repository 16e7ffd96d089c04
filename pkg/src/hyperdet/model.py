"""Attention hypergraph convolutions, the feature autoencoder and the multi-head source classifier."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Segments, Tensor
from .irc import AugmentedIncidence

ATTENTION_MODES = ("learned", "large", "small", "uniform")


@dataclass(frozen=True)
class ModelConfig:
    k: int = 8
    ae_hidden: int = 128
    latent: int = 64
    hidden: int = 500
    heads: int = 3
    slope: float = 0.2
    attention: str = "learned"
    use_autoencoder: bool = True
    dynamic_edges: bool = True
    init_seed: int = 0

    @property
    def feature_width(self) -> int:
        return 2 + self.k

    @property
    def fusion_input(self) -> int:
        return self.latent if self.use_autoencoder else self.feature_width

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.heads <= 8:
            raise ValueError("heads must lie in 1..8")
        for name in ("ae_hidden", "latent", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")


# --- batched graph structure --------------------------------------------------


@dataclass
class GraphBatch:
    """Disjoint union of one or more augmented snapshots.

    Entries are the non-zeros of the (block-diagonal) incidence matrix.
    ``by_edge`` groups entries per hyperedge (node-to-edge stage) and
    ``by_node`` per node (edge-to-node stage).
    """

    n: int
    num_edges: int
    node_idx: np.ndarray
    edge_idx: np.ndarray
    entry_weight: np.ndarray
    by_edge: Segments
    by_node: Segments
    node_offsets: np.ndarray
    mean_weight: np.ndarray = field(repr=False)
    node_deg: np.ndarray = field(repr=False)
    edge_deg: np.ndarray = field(repr=False)

    @property
    def num_graphs(self) -> int:
        return self.node_offsets.size - 1

    def graph_slice(self, i: int) -> slice:
        return slice(int(self.node_offsets[i]), int(self.node_offsets[i + 1]))


def make_batch(incidences: Sequence[AugmentedIncidence]) -> GraphBatch:
    node_parts, edge_parts, w_parts = [], [], []
    n_off, e_off = [0], 0
    for inc in incidences:
        node_parts.append(inc.node_idx + n_off[-1])
        edge_parts.append(inc.edge_idx + e_off)
        w_parts.append(inc.weights[inc.edge_idx])
        n_off.append(n_off[-1] + inc.n)
        e_off += inc.num_edges
    node_idx = np.concatenate(node_parts)
    edge_idx = np.concatenate(edge_parts)
    n = n_off[-1]
    by_edge = Segments(edge_idx, e_off)
    by_node = Segments(node_idx, n)
    edge_deg = by_edge.counts.astype(float)
    node_deg = by_node.counts.astype(float)
    return GraphBatch(
        n=n,
        num_edges=e_off,
        node_idx=node_idx,
        edge_idx=edge_idx,
        entry_weight=np.concatenate(w_parts),
        by_edge=by_edge,
        by_node=by_node,
        node_offsets=np.asarray(n_off, dtype=np.int64),
        mean_weight=1.0 / edge_deg[edge_idx],
        node_deg=node_deg,
        edge_deg=edge_deg,
    )


def fixed_attention(batch: GraphBatch, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Non-learned coefficients for (node-to-edge, edge-to-node) stages.

    ``large``: proportional to the degree of what is attended to (node
    degree, then hyperedge size); ``small``: inverse degree; ``uniform``:
    equal weights. Each is normalized within its segment.
    """
    if mode == "large":
        raw1, raw2 = batch.node_deg[batch.node_idx], batch.edge_deg[batch.edge_idx]
    elif mode == "small":
        raw1, raw2 = 1.0 / batch.node_deg[batch.node_idx], 1.0 / batch.edge_deg[batch.edge_idx]
    elif mode == "uniform":
        raw1 = raw2 = np.ones(batch.node_idx.size)
    else:
        raise ValueError(f"no fixed attention for mode {mode!r}")
    a1 = raw1 / batch.by_edge.sum(raw1)[batch.edge_idx]
    a2 = raw2 / batch.by_node.sum(raw2)[batch.node_idx]
    return a1, a2


# --- parameters -----------------------------------------------------------------


class HConvAttLayer:
    """Parameters of one attention hypergraph convolution (``in_dim -> out_dim``)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, prefix: str):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = Tensor(_glorot(rng, in_dim, out_dim), True, f"{prefix}.W")
        self.W_edge = Tensor(_glorot(rng, out_dim, out_dim), True, f"{prefix}.W_edge")
        self.a_v2e = Tensor(rng.uniform(-0.1, 0.1, (2 * out_dim, 1)), True, f"{prefix}.a_v2e")
        self.a_e2v = Tensor(rng.uniform(-0.1, 0.1, (2 * out_dim, 1)), True, f"{prefix}.a_e2v")

    def parameters(self) -> list[Tensor]:
        return [self.W, self.W_edge, self.a_v2e, self.a_e2v]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class HyperDetParams:
    """All trainable tensors, in a fixed declaration order."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        f, h, z = cfg.feature_width, cfg.ae_hidden, cfg.latent
        self.encoder: list[HConvAttLayer] = []
        self.decoder: list[HConvAttLayer] = []
        if cfg.use_autoencoder:
            self.encoder = [HConvAttLayer(f, h, rng, "enc0"), HConvAttLayer(h, z, rng, "enc1")]
            self.decoder = [HConvAttLayer(z, h, rng, "dec0"), HConvAttLayer(h, f, rng, "dec1")]
        w = cfg.hidden
        self.entry = HConvAttLayer(cfg.fusion_input, w, rng, "entry")
        self.heads = [HConvAttLayer(w, w, rng, f"head{i}") for i in range(cfg.heads)]
        self.final = [HConvAttLayer(cfg.heads * w, w, rng, f"final{i}") for i in range(cfg.heads)]
        self.proj = Tensor(_glorot(rng, w, 2), True, "proj.W")
        self.bias = Tensor(np.zeros((1, 2)), True, "proj.b")

    def autoencoder_parameters(self) -> list[Tensor]:
        return [p for layer in self.encoder + self.decoder for p in layer.parameters()]

    def fusion_parameters(self) -> list[Tensor]:
        layers = [self.entry] + self.heads + self.final
        return [p for layer in layers for p in layer.parameters()] + [self.proj, self.bias]

    def parameters(self) -> list[Tensor]:
        return self.autoencoder_parameters() + self.fusion_parameters()

    def manifest(self) -> list[tuple[str, tuple[int, int]]]:
        return [(p.name, p.shape) for p in self.parameters()]

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"shape mismatch for {p.name}: {a.shape} vs {p.shape}")
            p.data[...] = a


# --- layer operations ------------------------------------------------------------


def attention_logit(x_v: np.ndarray, theta_e: np.ndarray, W: np.ndarray, a: np.ndarray, slope: float = 0.2) -> float:
    """Scalar reference form ``a . LReLU([W^T x_v | W^T theta_e])`` for one (node, edge) pair."""
    z = np.concatenate([np.asarray(x_v) @ W, np.asarray(theta_e) @ W])
    return float(np.where(z > 0, z, slope * z) @ np.asarray(a).reshape(-1))


def _pair_logits(left_act: Tensor, right: Tensor, a: Tensor, batch: GraphBatch, slope: float) -> Tensor:
    # a . LReLU([l | r]) == a_left . LReLU(l) + a_right . LReLU(r) since the activation is elementwise;
    # left_act is LReLU(l), shared by both stages of a layer
    d = left_act.shape[1]
    s_left = ad.matmul(left_act, ad.slice_rows(a, 0, d))
    s_right = ad.matmul(ad.leaky_relu(right, slope), ad.slice_rows(a, d, 2 * d))
    return ad.add(ad.gather_rows(s_left, batch.node_idx), ad.gather_rows(s_right, batch.edge_idx))


def node_to_edge(
    XW: Tensor,
    ThetaW: Tensor,
    batch: GraphBatch,
    layer: HConvAttLayer,
    slope: float = 0.2,
    fixed=None,
    XW_act: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Edge messages ``sum_{v in e} alpha_ve W x_v`` (before activation) and the coefficients.

    Coefficients are normalized over the members of each hyperedge.
    """
    if fixed is None:
        act = ad.leaky_relu(XW, slope) if XW_act is None else XW_act
        alpha = ad.segment_softmax(_pair_logits(act, ThetaW, layer.a_v2e, batch, slope), batch.by_edge)
    else:
        alpha = Tensor(fixed.reshape(-1, 1))
    return ad.attend(XW, batch.node_idx, alpha, batch.by_edge), alpha


def edge_to_node(
    XW: Tensor,
    theta: Tensor,
    batch: GraphBatch,
    layer: HConvAttLayer,
    slope: float = 0.2,
    fixed=None,
    XW_act: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Node outputs ``sum_{e ni v} alpha_ev Omega_e W' theta_e`` (before activation) and the coefficients.

    Coefficients are normalized over the hyperedges incident to each node.
    """
    T = ad.matmul(theta, layer.W_edge)
    if fixed is None:
        act = ad.leaky_relu(XW, slope) if XW_act is None else XW_act
        alpha = ad.segment_softmax(_pair_logits(act, T, layer.a_e2v, batch, slope), batch.by_node)
    else:
        alpha = Tensor(fixed.reshape(-1, 1))
    return ad.attend(T, batch.edge_idx, alpha, batch.by_node, batch.entry_weight), alpha


def hconv_att(
    X: Tensor,
    Theta: Tensor,
    batch: GraphBatch,
    layer: HConvAttLayer,
    slope: float = 0.2,
    fixed=None,
) -> tuple[Tensor, Tensor]:
    """One layer: node-to-edge then edge-to-node, each followed by LeakyReLU.

    Returns the new node features and the new edge attributes.
    """
    XW = ad.matmul(X, layer.W)
    ThetaW = ad.matmul(Theta, layer.W)
    f1, f2 = (None, None) if fixed is None else fixed
    act = ad.leaky_relu(XW, slope) if fixed is None else None
    theta, _ = node_to_edge(XW, ThetaW, batch, layer, slope, f1, act)
    theta = ad.leaky_relu(theta, slope)
    out, _ = edge_to_node(XW, theta, batch, layer, slope, f2, act)
    return ad.leaky_relu(out, slope), theta


def initial_edge_attributes(X: Tensor, batch: GraphBatch) -> Tensor:
    """Member mean of node features for every hyperedge (zero for empty ones)."""
    return ad.segment_sum(ad.gather_rows(X, batch.node_idx), batch.by_edge, batch.mean_weight)


@dataclass
class ForwardResult:
    probs: Tensor
    gamma: Tensor
    recon: Tensor | None


def _fixed(params: HyperDetParams, batch: GraphBatch):
    mode = params.cfg.attention
    return None if mode == "learned" else fixed_attention(batch, mode)


def encode(X: Tensor, batch: GraphBatch, params: HyperDetParams, fixed=None) -> tuple[Tensor, Tensor]:
    slope = params.cfg.slope
    h, theta = X, initial_edge_attributes(X, batch)
    for layer in params.encoder:
        h, theta = hconv_att(h, theta, batch, layer, slope, fixed)
    return h, theta


def decode(gamma: Tensor, theta: Tensor, batch: GraphBatch, params: HyperDetParams, fixed=None) -> Tensor:
    slope = params.cfg.slope
    h = gamma
    for layer in params.decoder:
        h, theta = hconv_att(h, theta, batch, layer, slope, fixed)
    return h


def fusion_forward(gamma: Tensor, batch: GraphBatch, params: HyperDetParams, fixed=None) -> Tensor:
    """Entry layer, K concatenated heads, K averaged heads, projection to 2 and softmax."""
    slope = params.cfg.slope
    theta0 = initial_edge_attributes(gamma, batch)
    g1, t1 = hconv_att(gamma, theta0, batch, params.entry, slope, fixed)
    outs = [hconv_att(g1, t1, batch, layer, slope, fixed) for layer in params.heads]
    g2 = ad.concat_cols(*[o[0] for o in outs])
    t2 = ad.concat_cols(*[o[1] for o in outs])
    finals = [hconv_att(g2, t2, batch, layer, slope, fixed)[0] for layer in params.final]
    g3 = ad.row_mean_k(finals)
    logits = ad.add_bias(ad.matmul(g3, params.proj), params.bias)
    return ad.row_softmax(logits)


def forward(X: Tensor, batch: GraphBatch, params: HyperDetParams) -> ForwardResult:
    fixed = _fixed(params, batch)
    if params.cfg.use_autoencoder:
        gamma, theta = encode(X, batch, params, fixed)
        recon = decode(gamma, theta, batch, params, fixed)
    else:
        gamma, recon = X, None
    probs = fusion_forward(gamma, batch, params, fixed)
    return ForwardResult(probs, gamma, recon)


def autoencode(X: Tensor, batch: GraphBatch, params: HyperDetParams) -> Tensor:
    fixed = _fixed(params, batch)
    gamma, theta = encode(X, batch, params, fixed)
    return decode(gamma, theta, batch, params, fixed)


def classify(probs: np.ndarray) -> np.ndarray:
    """Indices whose source-class probability (column 0) is strictly above 0.5."""
    probs = np.asarray(probs)
    return np.flatnonzero(probs[:, 0] > 0.5)


# --- checkpoints -----------------------------------------------------------------

_MAGIC = b"HYPERDET-CKPT 1\n"


def save_checkpoint(params: HyperDetParams, path: str | Path, extra: dict | None = None) -> None:
    header = {
        "model": asdict(params.cfg),
        "manifest": [[name, list(shape)] for name, shape in params.manifest()],
        "extra": extra or {},
    }
    blob = np.concatenate([a.reshape(-1) for a in params.state()]).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> tuple[HyperDetParams, dict]:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        blob = fh.read()
    cfg = ModelConfig(**header["model"])
    if expect is not None:
        mismatch = {
            k: (v, getattr(cfg, k))
            for k, v in asdict(expect).items()
            if k != "init_seed" and getattr(cfg, k) != v
        }
        if mismatch:
            raise ValueError(f"checkpoint does not match configured model: {mismatch}")
    params = HyperDetParams(cfg)
    manifest = [(name, tuple(shape)) for name, shape in header["manifest"]]
    if manifest != params.manifest():
        raise ValueError("checkpoint shape manifest does not match the model")
    flat = np.frombuffer(blob, dtype="<f8")
    total = sum(int(np.prod(s)) for _, s in manifest)
    if flat.size != total:
        raise ValueError(f"checkpoint holds {flat.size} values, manifest needs {total}")
    arrays, pos = [], 0
    for _, shape in manifest:
        size = int(np.prod(shape))
        arrays.append(flat[pos : pos + size].reshape(shape).copy())
        pos += size
    params.load_state(arrays)
    return params, header.get("extra", {})


def variant_config(cfg: ModelConfig, variant: str) -> ModelConfig:
    """Model-side switches for ablation variants (topology-side ones live in the experiment runner)."""
    if variant in ("full", "woH"):
        return cfg
    if variant == "woD":
        return replace(cfg, dynamic_edges=False)
    if variant == "woE":
        return replace(cfg, use_autoencoder=False)
    if variant == "wAL":
        return replace(cfg, attention="large")
    if variant == "wAS":
        return replace(cfg, attention="small")
    if variant == "woA":
        return replace(cfg, attention="uniform")
    raise ValueError(f"unknown variant {variant!r}")
