"""GCN, residual GCN, self-attention GNN and masked self-attention GNN classifiers.

All variants end in the same readout: mean pooling over valid arcs, a 64->64
ReLU layer and a single sigmoid unit giving P(false trigger).
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .batching import GraphBatch
from .lattice import FEATURE_DIM
from .numerics import (
    BatchNormState,
    Parameter,
    Tensor,
    add,
    batch_norm,
    init_glorot,
    layer_norm,
    masked_mean_pool,
    masked_row_softmax,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    transpose,
)


class Variant(str, enum.Enum):
    GCN = "gcn"
    RESGCN = "resgcn"
    SAGNN = "sagnn"
    MASKED_SAGNN = "masked_sagnn"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        return cls(name.strip().lower().replace("-", "_"))

    @property
    def attention(self) -> bool:
        return self in (Variant.SAGNN, Variant.MASKED_SAGNN)


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.GCN
    input_dim: int = FEATURE_DIM
    hidden_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    head_dim: int | None = None
    attention_scaling: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.variant, str) and not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.head_dim is None:
            if self.hidden_dim % self.num_heads:
                raise ValueError("hidden_dim must be divisible by num_heads")
            object.__setattr__(self, "head_dim", self.hidden_dim // self.num_heads)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.num_heads * self.head_dim != self.hidden_dim:
            raise ValueError("num_heads * head_dim must equal hidden_dim")
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    params: dict[str, Parameter]
    batch_norm: dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams({k: Parameter(p.data.copy(), k) for k, p in self.params.items()},
                           copy.deepcopy(self.batch_norm))


def _linear_count(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def param_count(config: ModelConfig) -> int:
    """Scalar parameter total, computed from the architecture alone."""
    d, h = config.input_dim, config.hidden_dim
    readout = _linear_count(h, h) + _linear_count(h, 1)
    if config.variant is Variant.GCN:
        return _linear_count(d, h) + (config.depth - 1) * _linear_count(h, h) + readout
    if config.variant is Variant.RESGCN:
        block = 2 * _linear_count(h, h) + 2 * 2 * h
        return _linear_count(d, h) + config.depth * block + readout
    qkv = 3 * config.num_heads * _linear_count(h, config.head_dim)
    layer = qkv + _linear_count(h, h) + 2 * h
    return _linear_count(d, h) + config.depth * layer + readout


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Glorot weights, zero biases, unit scale and zero shift for normalizations."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, Parameter] = {}
    bn: dict[str, BatchNormState] = {}
    d, h = config.input_dim, config.hidden_dim

    def linear(name, n_in, n_out):
        params[f"{name}.weight"] = Parameter(init_glorot(n_in, n_out, rng), f"{name}.weight")
        params[f"{name}.bias"] = Parameter(np.zeros(n_out), f"{name}.bias")

    def norm(name):
        params[f"{name}.scale"] = Parameter(np.ones(h), f"{name}.scale")
        params[f"{name}.shift"] = Parameter(np.zeros(h), f"{name}.shift")

    if config.variant is Variant.GCN:
        for layer in range(config.depth):
            linear(f"gc{layer}", d if layer == 0 else h, h)
    else:
        linear("input", d, h)
    if config.variant is Variant.RESGCN:
        for b in range(config.depth):
            for k in (1, 2):
                linear(f"block{b}.gc{k}", h, h)
                norm(f"block{b}.bn{k}")
                bn[f"block{b}.bn{k}"] = BatchNormState(h)
    if config.variant.attention:
        for layer in range(config.depth):
            for role in ("query", "key", "value"):
                name = f"sa{layer}.{role}"
                w = np.stack([init_glorot(h, config.head_dim, rng) for _ in range(config.num_heads)])
                params[f"{name}.weight"] = Parameter(w, f"{name}.weight")
                params[f"{name}.bias"] = Parameter(np.zeros((config.num_heads, config.head_dim)),
                                                   f"{name}.bias")
            linear(f"sa{layer}.proj", h, h)
            norm(f"sa{layer}.norm")
    linear("readout.fc", h, h)
    linear("readout.out", h, 1)
    return ModelParams(params, bn)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def gc_aggregate_node(i: int, h: np.ndarray, adjacency: np.ndarray, weight: np.ndarray,
                      bias: np.ndarray | None = None) -> np.ndarray:
    """Hidden vector of arc ``i`` after one graph convolution, one neighbour at a time."""
    bias = np.zeros(weight.shape[1]) if bias is None else bias
    acc = np.zeros(weight.shape[1])
    for j in np.flatnonzero(adjacency[i]):
        acc += adjacency[i, j] * (h[j] @ weight + bias)
    return np.maximum(acc, 0.0)


def graph_conv(h, adjacency, weight, bias) -> Tensor:
    """A (H W + b), no activation."""
    return matmul(adjacency, add(matmul(h, weight), bias))


def gcn_layer(h, adjacency, weight, bias) -> Tensor:
    if np.shape(h.data if isinstance(h, Tensor) else h)[-1] != np.shape(
            weight.data if isinstance(weight, Tensor) else weight)[0]:
        raise ValueError("feature width does not match weight rows")
    return relu(graph_conv(h, adjacency, weight, bias))


def residual_block(h, adjacency, params: ModelParams, prefix: str, training: bool,
                   validity: np.ndarray | None = None) -> Tensor:
    """ReLU(BN2(GC2(ReLU(BN1(GC1(h))))) + h)."""
    p = params.params
    if h.shape[-1] != p[f"{prefix}.gc1.weight"].shape[0]:
        raise ValueError("residual block input width must equal hidden_dim")
    x = graph_conv(h, adjacency, p[f"{prefix}.gc1.weight"], p[f"{prefix}.gc1.bias"])
    x = batch_norm(x, p[f"{prefix}.bn1.scale"], p[f"{prefix}.bn1.shift"],
                   params.batch_norm[f"{prefix}.bn1"], training, validity)
    x = relu(x)
    x = graph_conv(x, adjacency, p[f"{prefix}.gc2.weight"], p[f"{prefix}.gc2.bias"])
    x = batch_norm(x, p[f"{prefix}.bn2.scale"], p[f"{prefix}.bn2.shift"],
                   params.batch_norm[f"{prefix}.bn2"], training, validity)
    return relu(add(x, h))


def attention_mask(adjacency: np.ndarray, validity: np.ndarray, masked: bool) -> np.ndarray:
    """Binary (B, N, N) attention pattern.

    Valid arcs attend to connected arcs (masked) or to all valid arcs. Padded
    rows attend only to themselves so the softmax stays defined; their output
    is discarded.
    """
    valid = validity > 0
    if masked:
        allowed = adjacency > 0
    else:
        allowed = valid[:, :, None] & valid[:, None, :]
    eye = np.eye(adjacency.shape[-1], dtype=bool)
    return allowed | (eye[None] & ~valid[:, :, None])


def sa_layer(h, mask: np.ndarray, params: ModelParams, prefix: str, config: ModelConfig,
             validity: np.ndarray | None = None, trace: list | None = None) -> Tensor:
    """Multi-head self-attention over arcs, output projection, layer normalization.

    ``h`` is (B, N, hidden) and ``mask`` is the (B, N, N) binary pattern.
    """
    p = params.params
    b, n, width = h.shape
    if width != config.hidden_dim:
        raise ValueError("attention layer input width must equal hidden_dim")
    heads, hd = config.num_heads, config.head_dim
    x = reshape(h, (b, 1, n, width))

    def project(role):
        w = p[f"{prefix}.{role}.weight"]
        bias = reshape(p[f"{prefix}.{role}.bias"], (heads, 1, hd))
        return add(matmul(x, w), bias)  # (B, heads, N, hd)

    q, k, v = project("query"), project("key"), project("value")
    logits = matmul(q, transpose(k, (0, 1, 3, 2)))
    if config.attention_scaling:
        logits = mul(logits, 1.0 / np.sqrt(hd))
    attn = masked_row_softmax(logits, mask[:, None, :, :])
    if trace is not None:
        trace.append(attn.data)
    out = transpose(matmul(attn, v), (0, 2, 1, 3))
    out = reshape(out, (b, n, heads * hd))
    out = add(matmul(out, p[f"{prefix}.proj.weight"]), p[f"{prefix}.proj.bias"])
    out = layer_norm(out, p[f"{prefix}.norm.scale"], p[f"{prefix}.norm.shift"])
    if validity is not None:
        out = mul(out, validity[..., None])
    return out


def readout_head(embedding, params: ModelParams) -> Tensor:
    """sigmoid(w_out . ReLU(W_fc e + b_fc) + b_out) for each row of ``embedding``."""
    p = params.params
    hidden = relu(add(matmul(embedding, p["readout.fc.weight"]), p["readout.fc.bias"]))
    logit = add(matmul(hidden, p["readout.out.weight"]), p["readout.out.bias"])
    return sigmoid(reshape(logit, logit.shape[:-1]))


def model_forward(config: ModelConfig, params: ModelParams, batch: GraphBatch,
                  training: bool = False, trace: dict | None = None,
                  features: Tensor | None = None) -> Tensor:
    """Per-sample P(false trigger), shape (B,).

    ``features`` optionally replaces ``batch.features`` (e.g. a tensor that
    records gradients w.r.t. the inputs). ``trace`` collects attention maps.
    """
    if batch.features.shape[-1] != config.input_dim:
        raise ValueError(f"batch has {batch.features.shape[-1]} features, model expects "
                         f"{config.input_dim}")
    p = params.params
    adjacency, validity = batch.adjacency, batch.validity
    h = features if features is not None else Tensor(batch.features)
    variant = config.variant

    if variant is Variant.GCN:
        for layer in range(config.depth):
            h = gcn_layer(h, adjacency, p[f"gc{layer}.weight"], p[f"gc{layer}.bias"])
    else:
        h = add(matmul(h, p["input.weight"]), p["input.bias"])
        h = mul(h, validity[..., None])
        if variant is Variant.RESGCN:
            for b in range(config.depth):
                h = residual_block(h, adjacency, params, f"block{b}", training, validity)
        else:
            mask = attention_mask(adjacency, validity, variant is Variant.MASKED_SAGNN)
            maps = trace.setdefault("attention", []) if trace is not None else None
            for layer in range(config.depth):
                h = sa_layer(h, mask, params, f"sa{layer}", config, validity, maps)

    embedding = masked_mean_pool(h, validity)
    return readout_head(embedding, params)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "lattice-ftm-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_dict(config: ModelConfig, params: ModelParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "parameters": [
            {"name": name, "shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in params.params.items()
        ],
        "batch_norm": [
            {"name": name, "momentum": s.momentum, "epsilon": s.epsilon,
             "running_mean": s.running_mean.tolist(), "running_var": s.running_var.tolist()}
            for name, s in params.batch_norm.items()
        ],
    }


def save_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    text = json.dumps(checkpoint_dict(config, params), sort_keys=False, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: not a checkpoint ({err})") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    config = ModelConfig.from_dict(doc["config"])
    expected = init_params(config)
    params: dict[str, Parameter] = {}
    for entry in doc["parameters"]:
        name = entry["name"]
        if name not in expected.params:
            raise CheckpointError(f"unexpected parameter {name}")
        shape = tuple(entry["shape"])
        if shape != expected.params[name].shape:
            raise CheckpointError(f"{name}: shape {shape} != {expected.params[name].shape}")
        params[name] = Parameter(np.array(entry["values"], dtype=np.float64).reshape(shape), name)
    missing = set(expected.params) - set(params)
    if missing:
        raise CheckpointError(f"missing parameters: {sorted(missing)}")
    bn = {}
    for entry in doc.get("batch_norm", []):
        bn[entry["name"]] = BatchNormState(
            len(entry["running_mean"]), entry["momentum"], entry["epsilon"],
            np.array(entry["running_mean"]), np.array(entry["running_var"]))
    if set(bn) != set(expected.batch_norm):
        raise CheckpointError("batch-norm sites do not match the configuration")
    return config, ModelParams({k: params[k] for k in expected.params}, bn)
