"""The dual-stream detector.

Per stream: learned layer aggregation, multi-head self-attention with a
residual, mean pooling and a tanh projection to a fixed embedding. The two
embeddings are concatenated and scored by a linear head. Every function takes
batched inputs with a leading batch axis; unbatched (L, T, d) stacks are
promoted to a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tn
from .encoders import ConfigError, LayerStack
from .tensor import DimensionError, Tensor

STREAMS = ("music", "vocal")
PUBLISHED_EMBED_DIM = 512
CHECKPOINT_MAGIC_LINE = "# clamdet checkpoint v1"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    dim: int = 32
    embed_dim: int = 32
    heads: int = 4
    # "both" is the full model; "music" / "vocal" are single-stream ablations
    streams: str = "both"
    # 0 = linear head on the fused embedding; >0 inserts one tanh hidden layer
    head_hidden: int = 32

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.streams not in ("both", "music", "vocal"):
            raise ConfigError(f"unknown stream selection {self.streams!r}")
        if min(self.n_layers, self.dim, self.embed_dim, self.heads) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.head_hidden < 0:
            raise ConfigError("head_hidden must be >= 0")

    @property
    def active_streams(self) -> tuple[str, ...]:
        return STREAMS if self.streams == "both" else (self.streams,)


PUBLISHED_SCALE = ModelConfig(embed_dim=PUBLISHED_EMBED_DIM)


@dataclass
class StreamEmbeddingPair:
    track_id: str
    d_music: np.ndarray | None
    d_vocal: np.ndarray | None


@dataclass
class ClamParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def copy(self) -> "ClamParams":
        return ClamParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                        for k, v in self.tensors.items()})

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ClamParams":
        expected = param_shapes(config)
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        tensors = {}
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
            tensors[name] = Tensor(arr.copy(), requires_grad=True, name=name)
        return cls(config, tensors)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    L, d, e = cfg.n_layers, cfg.dim, cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for s in cfg.active_streams:
        shapes[f"{s}.layer_w"] = (L,)
        for p in ("wq", "wk", "wv", "wo"):
            shapes[f"{s}.{p}"] = (d, d)
        shapes[f"{s}.proj_w"] = (d, e)
        shapes[f"{s}.proj_b"] = (e,)
    fused = e * len(cfg.active_streams)
    if cfg.head_hidden:
        shapes["head.w1"] = (fused, cfg.head_hidden)
        shapes["head.b1"] = (cfg.head_hidden,)
        fused = cfg.head_hidden
    shapes["head.w"] = (fused, 1)
    shapes["head.b"] = (1,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ClamParams:
    """Uniform +-1/sqrt(fan_in) projections, layer weights 1/L, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("layer_w"):
            arrays[name] = np.full(shape, 1.0 / cfg.n_layers)
        elif name.endswith("_b") or name in ("head.b", "head.b1"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ClamParams.from_arrays(cfg, arrays)


# -- building blocks ---------------------------------------------------------------

def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return tn.reshape(x, (1,) + x.shape), True
    if x.ndim != ndim:
        raise DimensionError(f"expected a {ndim - 1}-D or batched {ndim}-D input, got shape {x.shape}")
    return x, False


def aggregate_layers(stack, w: Tensor) -> Tensor:
    """Weighted sum over the layer axis: (B, L, T, d) -> (B, T, d)."""
    x = stack if isinstance(stack, Tensor) else Tensor(stack.layers if isinstance(stack, LayerStack) else stack)
    x, single = _batched(x, 4)
    B, L, T, d = x.shape
    if w.shape != (L,):
        raise DimensionError(f"aggregate_layers: {L} layers but weights of shape {w.shape}")
    flat = tn.reshape(tn.transpose(x, (0, 2, 3, 1)), (B * T * d, L))
    out = tn.reshape(tn.matmul(flat, tn.reshape(w, (L, 1))), (B, T, d))
    return tn.reshape(out, (T, d)) if single else out


def self_attend(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, heads: int,
                return_weights: bool = False):
    """Multi-head scaled dot-product self-attention plus residual, no positions."""
    x, single = _batched(x, 3)
    B, T, d = x.shape
    if d % heads:
        raise ConfigError(f"dim {d} is not divisible by {heads} heads")
    dh = d // heads

    def split_heads(t):
        return tn.transpose(tn.reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split_heads(tn.matmul(x, wq))
    k = split_heads(tn.matmul(x, wk))
    v = split_heads(tn.matmul(x, wv))
    scores = tn.scale(tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = tn.softmax(scores, axis=-1)
    ctx = tn.reshape(tn.transpose(tn.matmul(attn, v), (0, 2, 1, 3)), (B, T, d))
    out = tn.add(tn.matmul(ctx, wo), x)
    if single:
        out = tn.reshape(out, (T, d))
    return (out, attn) if return_weights else out


def pool_embed(x: Tensor, w: Tensor, b: Tensor, nonlinear: bool = True) -> Tensor:
    """Mean over frames, affine d -> e, then tanh: (B, T, d) -> (B, e)."""
    x, single = _batched(x, 3)
    B = x.shape[0]
    e = w.shape[1]
    z = tn.add(tn.matmul(tn.mean(x, axis=1), w), tn.expand(tn.reshape(b, (1, e)), (B, e)))
    if nonlinear:
        z = tn.tanh(z)
    return tn.reshape(z, (e,)) if single else z


def embed_stream(stack, params: ClamParams, stream: str) -> Tensor:
    p = params.tensors
    agg = aggregate_layers(stack, p[f"{stream}.layer_w"])
    att = self_attend(agg, p[f"{stream}.wq"], p[f"{stream}.wk"], p[f"{stream}.wv"],
                      p[f"{stream}.wo"], params.config.heads)
    return pool_embed(att, p[f"{stream}.proj_w"], p[f"{stream}.proj_b"])


def forward(music, vocal, params: ClamParams) -> tuple[Tensor, dict[str, Tensor]]:
    """Logits (B,) and per-stream embeddings (B, e) for a batch of tracks.

    ``music`` / ``vocal`` are (B, L, T, d) arrays or Tensors, or single
    LayerStacks. Streams disabled in the config may be passed as None.
    """
    cfg = params.config
    inputs = {"music": music, "vocal": vocal}
    embeds: dict[str, Tensor] = {}
    for s in cfg.active_streams:
        x = inputs[s]
        if x is None:
            raise ValueError(f"stream {s!r} is required by this model")
        if isinstance(x, LayerStack):
            x = x.layers[None].astype(np.float64)
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 3:
            x = tn.reshape(x, (1,) + x.shape)
        if x.shape[1] != cfg.n_layers or x.shape[3] != cfg.dim:
            raise DimensionError(f"{s} stack shape {x.shape} does not match L={cfg.n_layers}, d={cfg.dim}")
        embeds[s] = embed_stream(x, params, s)
    fused = embeds[cfg.active_streams[0]] if len(embeds) == 1 else tn.concat(
        [embeds["music"], embeds["vocal"]], axis=1)
    B = fused.shape[0]
    if cfg.head_hidden:
        h = cfg.head_hidden
        fused = tn.tanh(tn.add(tn.matmul(fused, params["head.w1"]),
                               tn.expand(tn.reshape(params["head.b1"], (1, h)), (B, h))))
    logits = tn.add(tn.matmul(fused, params["head.w"]),
                    tn.expand(tn.reshape(params["head.b"], (1, 1)), (B, 1)))
    return tn.reshape(logits, (B,)), embeds


def embedding_pairs(track_ids: Sequence[str], embeds: Mapping[str, Tensor]) -> list[StreamEmbeddingPair]:
    out = []
    for i, tid in enumerate(track_ids):
        m = embeds.get("music")
        v = embeds.get("vocal")
        out.append(StreamEmbeddingPair(tid, None if m is None else m.data[i].copy(),
                                       None if v is None else v.data[i].copy()))
    return out


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ClamParams, hparams: Mapping[str, object] | None = None) -> None:
    """Plain-text ``key=value`` header, a blank line, then the named-tensor blob."""
    head = {f"model.{k}": v for k, v in asdict(params.config).items()}
    head.update(hparams or {})
    lines = [CHECKPOINT_MAGIC_LINE] + [f"{k}={v}" for k, v in head.items()]
    text = ("\n".join(lines) + "\n\n").encode("utf-8")
    Path(path).write_bytes(text + tn.encode_blob(params.arrays()))


def load_checkpoint(path: str | Path) -> tuple[ClamParams, dict[str, str]]:
    buf = Path(path).read_bytes()
    first = buf.split(b"\n", 1)[0].decode("utf-8", "replace")
    if first != CHECKPOINT_MAGIC_LINE:
        raise tn.BlobFormatError(f"{path}: not a checkpoint (first line {first!r})")
    sep = buf.find(b"\n\n")
    if sep < 0:
        raise OSError(f"{path}: truncated checkpoint header")
    header = {}
    for line in buf[:sep].decode("utf-8").splitlines()[1:]:
        k, _, v = line.partition("=")
        header[k] = v
    arrays = tn.decode_blob(buf[sep + 2:])
    cfg = ModelConfig(n_layers=int(header["model.n_layers"]), dim=int(header["model.dim"]),
                      embed_dim=int(header["model.embed_dim"]), heads=int(header["model.heads"]),
                      streams=header.get("model.streams", "both"),
                      head_hidden=int(header.get("model.head_hidden", 0)))
    return ClamParams.from_arrays(cfg, arrays), header
