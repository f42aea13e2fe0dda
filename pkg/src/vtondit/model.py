"""DiT-style backbone: stacked self-attention/feedforward blocks with rotary
positions, plus a pose-encoder branch injected after the first block.

There is no cross-attention and no text path: all conditioning arrives
through the channel stack of the token sequence and through the pose branch.
The pose encoder duplicates block 0 (weights copied at init) behind a
zero-initialized output projection, so injection starts as a no-op and the
branch learns from there.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import formats
from .conditioning import ConditionedSequence, patchify, unpatchify
from .errors import ConfigError, ContractError, ParseError
from .tensor import (Parameter, Tensor, gelu, layer_norm, make_rng, no_grad,
                     rotate_pairs, softmax, transpose)

ROPE_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 4
    hidden_dim: int = 128
    num_heads: int = 4
    # 8x hidden keeps the attention share of the backbone under 1/5, so the
    # selective-unlock budget holds at this scale.
    ffn_dim: int = 1024
    patch_size: int = 4
    channels: int = 3
    pose_channels: int = 2
    max_frames: int = 64
    rope_dims: tuple[int, int, int] = (16, 8, 8)  # temporal, row, col per head
    time_embed_dim: int = 256

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by "
                              f"num_heads {self.num_heads}")
        head_dim = self.hidden_dim // self.num_heads
        if head_dim % 2:
            raise ConfigError(f"per-head dim {head_dim} must be even for rotary pairs")
        dims = tuple(self.rope_dims)
        if len(dims) != 3 or any(d < 0 or d % 2 for d in dims):
            raise ConfigError(f"rope_dims must be three even non-negative ints, got {dims}")
        if sum(dims) != head_dim:
            raise ConfigError(f"rope_dims {dims} must sum to per-head dim {head_dim}")
        for name in ("num_blocks", "hidden_dim", "num_heads", "ffn_dim", "patch_size",
                     "channels", "pose_channels", "max_frames", "time_embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def frame_channels(self) -> int:
        return 2 * self.channels + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rope_dims"] = list(self.rope_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"unknown ModelConfig keys: {sorted(unknown)}")
        missing = known - set(d)
        if missing:
            raise ParseError(f"missing ModelConfig keys: {sorted(missing)}")
        d = dict(d)
        d["rope_dims"] = tuple(d["rope_dims"])
        return cls(**d)


# ---- rotary positions -------------------------------------------------------


def rope_tables(positions: np.ndarray, rope_dims: tuple[int, int, int],
                dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Per-token cos/sin tables of shape [N, 1, head_dim] for the 3-axis split.

    Each axis group of size g rotates pair i by angle pos * base^(-2i/g).
    """
    positions = np.asarray(positions)
    pieces_cos, pieces_sin = [], []
    for axis, group in enumerate(rope_dims):
        if group == 0:
            continue
        if group % 2:
            raise ConfigError(f"rope group sizes must be even, got {rope_dims}")
        exponents = -2.0 * np.arange(group // 2, dtype=np.float64) / group
        inv_freq = ROPE_BASE ** exponents
        angles = positions[:, axis].astype(np.float64)[:, None] * inv_freq[None, :]
        angles = np.repeat(angles, 2, axis=1)
        pieces_cos.append(np.cos(angles))
        pieces_sin.append(np.sin(angles))
    cos = np.concatenate(pieces_cos, axis=1).astype(dtype)
    sin = np.concatenate(pieces_sin, axis=1).astype(dtype)
    return cos[:, None, :], sin[:, None, :]


def rope_apply(qk: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate [tokens, heads, head_dim] queries or keys by their positions."""
    return qk * Tensor(cos) + rotate_pairs(qk) * Tensor(sin)


def timestep_features(t: float, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of the diffusion timestep, shape [1, dim]."""
    half = dim // 2
    freqs = np.exp(-np.log(ROPE_BASE) * np.arange(half, dtype=np.float64) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(dtype)[None, :]


# ---- layers -----------------------------------------------------------------


class Linear:
    def __init__(self, registry: dict, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, bias: bool = True, zero: bool = False):
        if zero:
            w = np.zeros((fan_in, fan_out), dtype=np.float32)
        else:
            w = rng.normal(0.0, 0.02, size=(fan_in, fan_out)).astype(np.float32)
        self.w = Parameter(Tensor(w), f"{name}.w")
        registry[self.w.name] = self.w
        self.b = None
        if bias:
            self.b = Parameter(Tensor(np.zeros(fan_out, dtype=np.float32)), f"{name}.b")
            registry[self.b.name] = self.b

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.w.value
        return out + self.b.value if self.b is not None else out


class LayerNormParams:
    def __init__(self, registry: dict, name: str, dim: int):
        self.gamma = Parameter(Tensor(np.ones(dim, dtype=np.float32)), f"{name}.gamma")
        self.beta = Parameter(Tensor(np.zeros(dim, dtype=np.float32)), f"{name}.beta")
        registry[self.gamma.name] = self.gamma
        registry[self.beta.name] = self.beta

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.value, self.beta.value)


class DiTBlock:
    """Pre-norm residual block: x + Attn(LN(x)) then + FFN(LN(.))."""

    def __init__(self, registry: dict, name: str, config: ModelConfig,
                 rng: np.random.Generator):
        d = config.hidden_dim
        self.config = config
        self.wq = Linear(registry, f"{name}.attn.wq", d, d, rng, bias=False)
        self.wk = Linear(registry, f"{name}.attn.wk", d, d, rng, bias=False)
        self.wv = Linear(registry, f"{name}.attn.wv", d, d, rng, bias=False)
        self.wo = Linear(registry, f"{name}.attn.wo", d, d, rng, bias=False)
        self.ln1 = LayerNormParams(registry, f"{name}.ln1", d)
        self.ln2 = LayerNormParams(registry, f"{name}.ln2", d)
        self.ffn_in = Linear(registry, f"{name}.ffn.w1", d, config.ffn_dim, rng)
        self.ffn_out = Linear(registry, f"{name}.ffn.w2", config.ffn_dim, d, rng)

    def attention(self, x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
        n = x.shape[0]
        heads, head_dim = self.config.num_heads, self.config.head_dim
        q = rope_apply(self.wq(x).reshape(n, heads, head_dim), cos, sin)
        k = rope_apply(self.wk(x).reshape(n, heads, head_dim), cos, sin)
        v = self.wv(x).reshape(n, heads, head_dim)
        q = transpose(q, (1, 0, 2))
        k = transpose(k, (1, 2, 0))
        v = transpose(v, (1, 0, 2))
        logits = (q @ k) * (1.0 / np.sqrt(head_dim))
        attn = softmax(logits, axis=-1)
        mixed = transpose(attn @ v, (1, 0, 2)).reshape(n, heads * head_dim)
        return self.wo(mixed)

    def __call__(self, x: Tensor, temb: Optional[Tensor], cos: np.ndarray,
                 sin: np.ndarray) -> Tensor:
        h = x + temb if temb is not None else x
        h = h + self.attention(self.ln1(h), cos, sin)
        return h + self.ffn_out(gelu(self.ffn_in(self.ln2(h))))


class PoseEncoder:
    """Patch-embeds pose maps, runs one block (a copy of backbone block 0),
    and projects through a zero-initialized output layer.

    The branch carries no timestep conditioning: with all-zero pose maps and
    zero biases it must contribute exactly zero."""

    def __init__(self, registry: dict, config: ModelConfig, rng: np.random.Generator):
        in_dim = config.pose_channels * config.patch_size ** 2
        self.embed = Linear(registry, "pose.embed", in_dim, config.hidden_dim, rng)
        self.block = DiTBlock(registry, "pose.block", config, rng)
        self.out = Linear(registry, "pose.out", config.hidden_dim, config.hidden_dim,
                          rng, zero=True)

    def __call__(self, pose_tokens: Tensor, cos: np.ndarray,
                 sin: np.ndarray) -> Tensor:
        return self.out(self.block(self.embed(pose_tokens), None, cos, sin))


def pose_inject(hidden: Tensor, pose_features: Tensor) -> Tensor:
    """Element-wise addition of the pose branch, no normalization in between."""
    if hidden.shape[0] != pose_features.shape[0]:
        raise ContractError(f"pose/hidden token counts differ: "
                            f"{pose_features.shape[0]} vs {hidden.shape[0]}")
    return hidden + pose_features


# ---- full model -------------------------------------------------------------


class TryOnBackbone:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = make_rng(seed)
        self.params: dict[str, Parameter] = {}
        d = config.hidden_dim
        self.patch_embed = Linear(self.params, "patch_embed",
                                  config.frame_channels * config.patch_size ** 2, d, rng)
        self.t_in = Linear(self.params, "t_embed.w1", config.time_embed_dim, d, rng)
        self.t_out = Linear(self.params, "t_embed.w2", d, d, rng)
        self.blocks = [DiTBlock(self.params, f"blocks.{i}", config, rng)
                       for i in range(config.num_blocks)]
        self.final_ln = LayerNormParams(self.params, "final_ln", d)
        self.unembed = Linear(self.params, "unembed", d,
                              config.channels * config.patch_size ** 2, rng, zero=True)
        self.pose = PoseEncoder(self.params, config, rng)
        self._copy_block_weights(self.blocks[0], self.pose.block)

    @staticmethod
    def _copy_block_weights(src: DiTBlock, dst: DiTBlock) -> None:
        source = _block_params(src)
        for name, param in _block_params(dst).items():
            param.value.data[...] = source[name].value.data

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.value.zero_grad()

    # ---- forward ----

    def timestep_embedding(self, t: float, dtype=np.float32) -> Tensor:
        feats = Tensor(timestep_features(t, self.config.time_embed_dim, dtype))
        return self.t_out(gelu(self.t_in(feats)))

    def run_tokens(self, tokens: np.ndarray, positions: np.ndarray, t: float,
                   pose_tokens: Optional[np.ndarray] = None,
                   inject_pose: bool = True) -> Tensor:
        """Token-level forward pass; returns per-token noise prediction rows."""
        dtype = tokens.dtype
        cos, sin = rope_tables(positions, self.config.rope_dims, dtype)
        temb = self.timestep_embedding(t, dtype)
        x = self.patch_embed(Tensor(tokens))
        x = self.blocks[0](x, temb, cos, sin)
        if inject_pose:
            if pose_tokens is None:
                raise ContractError("pose tokens required when injection is enabled")
            pose_features = self.pose(Tensor(pose_tokens), cos, sin)
            x = pose_inject(x, pose_features)
        for block in self.blocks[1:]:
            x = block(x, temb, cos, sin)
        return self.unembed(self.final_ln(x))

    def forward_tokens(self, seq: ConditionedSequence, t: float,
                       inject_pose: bool = True) -> tuple[Tensor, np.ndarray]:
        cfg = self.config
        if seq.frames.shape[1] != cfg.frame_channels:
            raise ContractError(f"sequence has {seq.frames.shape[1]} channels per frame, "
                                f"model expects {cfg.frame_channels}")
        tokens, positions = patchify(seq.frames, cfg.patch_size)
        pose_tokens, _ = patchify(seq.pose, cfg.patch_size)
        pred = self.run_tokens(tokens, positions, t, pose_tokens, inject_pose)
        return pred, positions

    def forward(self, seq: ConditionedSequence, t: float,
                inject_pose: bool = True) -> np.ndarray:
        """Noise prediction for every frame position, shape [G+T, C, H, W]."""
        with no_grad():
            pred, _ = self.forward_tokens(seq, t, inject_pose)
        nframes, _, height, width = seq.frames.shape
        return unpatchify(pred.data, nframes, self.config.channels, height, width,
                          self.config.patch_size)

    # ---- persistence ----

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.data for name, p in self.params.items()}

    def save(self, path) -> None:
        formats.write_checkpoint(path, self.config.to_dict(), self.state_arrays())

    @classmethod
    def load(cls, path) -> "TryOnBackbone":
        config_dict, arrays = formats.read_checkpoint(path)
        config = ModelConfig.from_dict(config_dict)
        model = cls(config, seed=0)
        expected = model.named_parameters()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ParseError(f"checkpoint parameter names mismatch: missing {missing}, "
                             f"unexpected {extra}")
        for name, param in expected.items():
            stored = arrays[name]
            if stored.shape != param.value.data.shape:
                raise ParseError(f"parameter {name!r} shape {stored.shape} mismatches "
                                 f"config-implied {param.value.data.shape}")
            param.value.data = stored.astype(np.float32)
        return model


def _block_params(block: DiTBlock) -> dict[str, Parameter]:
    out = {}
    for layer_name in ("wq", "wk", "wv", "wo"):
        out[f"attn.{layer_name}"] = getattr(block, layer_name).w
    for ln_name in ("ln1", "ln2"):
        ln = getattr(block, ln_name)
        out[f"{ln_name}.gamma"] = ln.gamma
        out[f"{ln_name}.beta"] = ln.beta
    for ffn_name, layer in (("w1", block.ffn_in), ("w2", block.ffn_out)):
        out[f"ffn.{ffn_name}.w"] = layer.w
        out[f"ffn.{ffn_name}.b"] = layer.b
    return out


# ---- trainability partition --------------------------------------------------


@dataclass
class FreezeReport:
    mode: str
    backbone_total: int
    backbone_trainable: int
    pose_total: int
    pose_trainable: int
    trainable_total: int = field(init=False)
    backbone_ratio: float = field(init=False)

    def __post_init__(self):
        self.trainable_total = self.backbone_trainable + self.pose_trainable
        self.backbone_ratio = self.backbone_trainable / self.backbone_total

    def lines(self) -> list[str]:
        return [
            f"mode: {self.mode}",
            f"backbone parameters: {self.backbone_total}",
            f"backbone trainable: {self.backbone_trainable}",
            f"pose encoder parameters: {self.pose_total} (trainable: {self.pose_trainable})",
            f"total trainable: {self.trainable_total}",
            f"trainable ratio vs backbone: {self.backbone_ratio:.4f}",
        ]


def freeze_partition(model: TryOnBackbone, mode: str) -> FreezeReport:
    """Set trainable flags: `full` unlocks everything, `selective` unlocks the
    per-block attention projections and the whole pose encoder."""
    if mode not in ("full", "selective"):
        raise ConfigError(f"freeze mode must be 'full' or 'selective', got {mode!r}")
    backbone_total = backbone_trainable = pose_total = pose_trainable = 0
    for name, param in model.params.items():
        is_pose = name.startswith("pose.")
        if mode == "full":
            param.trainable = True
        else:
            param.trainable = is_pose or (name.startswith("blocks.") and ".attn." in name)
        if is_pose:
            pose_total += param.size
            pose_trainable += param.size if param.trainable else 0
        else:
            backbone_total += param.size
            backbone_trainable += param.size if param.trainable else 0
    return FreezeReport(mode, backbone_total, backbone_trainable, pose_total,
                        pose_trainable)
