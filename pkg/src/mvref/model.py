"""Toy multi-view-conditioned diffusion transformer.

Latent encoding is a fixed seeded linear patch projection (the
conditioning mechanisms under test are upstream of any real VAE), the
prompt encoder is a hash stub, and the transformer itself runs on the
package's float64 autodiff engine: noisy video tokens and clean
reference tokens are concatenated into one sequence, mixed by
rotary-encoded self-attention (optionally view-masked), conditioned on
the prompt by cross-attention, and read out as a velocity field over the
video tokens.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .masking import RegionMask, ViewAttentionMask, apply_region_mask
from .rope import RopeConfig, SequenceLayout, assign_coordinates, rope_cos_sin

LN_EPS = 1e-6
PROMPT_TOKENS = 4


@dataclass
class ModelConfig:
    """Toy-scale dimensions; the defaults keep a full training run on one
    CPU core in the minutes range."""

    latent_frames: int = 2
    grid: tuple[int, int] = (8, 8)
    latent_dim: int = 8
    model_dim: int = 32
    heads: int = 4
    blocks: int = 2
    num_refs: int = 3
    scheme: str = "rd_rope"
    temporal_offset: int = 1
    channels: int = 3
    spatial_compression: int = 8
    temporal_compression: int = 4
    seed: int = 0
    vm_renorm: bool = True  # True: -inf logits pre-softmax; False: post-softmax zeroing

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.head_dim % 2:
            raise ValueError(f"head_dim {self.head_dim} must be even for rotary encoding")
        if self.model_dim % 2:
            raise ValueError(f"model_dim {self.model_dim} must be even for time embedding")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.grid[0] * self.spatial_compression, self.grid[1] * self.spatial_compression)

    @property
    def patch_volume(self) -> int:
        return self.temporal_compression * self.channels * self.spatial_compression**2

    @property
    def source_frames(self) -> int:
        return self.latent_frames * self.temporal_compression

    def rope_config(self) -> RopeConfig:
        return RopeConfig(
            head_dim=self.head_dim,
            grid=self.grid,
            temporal_offset=self.temporal_offset,
            num_refs=self.num_refs,
        )

    def to_dict(self) -> dict:
        return {
            "latent_frames": self.latent_frames,
            "grid": list(self.grid),
            "latent_dim": self.latent_dim,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "blocks": self.blocks,
            "num_refs": self.num_refs,
            "scheme": self.scheme,
            "temporal_offset": self.temporal_offset,
            "channels": self.channels,
            "spatial_compression": self.spatial_compression,
            "temporal_compression": self.temporal_compression,
            "seed": self.seed,
            "vm_renorm": self.vm_renorm,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["grid"] = tuple(doc["grid"])
        return cls(**doc)


@dataclass
class LatentVideo:
    """Temporally grouped latent frames: ceil(T / c_t) groups of
    (H, W, latent_dim) values."""

    latents: np.ndarray  # (groups, H, W, latent_dim)
    fps: float
    source_frames: int

    @property
    def groups(self) -> int:
        return self.latents.shape[0]


@dataclass
class ReferenceLatent:
    """One encoded reference image; spatial extents match the video."""

    latent: np.ndarray  # (H, W, latent_dim)
    origin: str = "clean"  # or "region-masked"


class VideoEncoder:
    """Deterministic linear patch projection standing in for a video VAE.

    No bias, so zero pixels encode to zero latents; with
    latent_dim >= patch volume the projection is invertible through its
    pseudo-inverse.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([0xE0, config.seed]))
        vol = config.patch_volume
        self.projection = rng.standard_normal((vol, config.latent_dim)) / math.sqrt(vol)
        self._pinv: np.ndarray | None = None

    def _patches(self, frames: np.ndarray) -> np.ndarray:
        cfg = self.config
        t, c, h, w = frames.shape
        ct, cs = cfg.temporal_compression, cfg.spatial_compression
        groups = -(-t // ct)  # ceil
        padded = np.zeros((groups * ct, c, h, w), dtype=np.float64)
        padded[:t] = frames
        hl, wl = h // cs, w // cs
        cells = padded.reshape(groups, ct, c, hl, cs, wl, cs)
        return cells.transpose(0, 3, 5, 1, 2, 4, 6).reshape(groups, hl, wl, -1)

    def encode_video(self, frames: np.ndarray, fps: float = 16.0) -> LatentVideo:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4:
            raise ValueError(f"expected frames of shape (T, C, H, W), got {frames.shape}")
        t, c, h, w = frames.shape
        cfg = self.config
        if t < 1:
            raise ValueError("at least one frame required")
        if c != cfg.channels:
            raise ValueError(f"{c} channels, encoder expects {cfg.channels}")
        if h % cfg.spatial_compression or w % cfg.spatial_compression:
            raise ValueError(
                f"spatial dims {h}x{w} not divisible by compression {cfg.spatial_compression}"
            )
        return LatentVideo(self._patches(frames) @ self.projection, fps=fps, source_frames=t)

    def encode_reference(self, image: np.ndarray, mask: RegionMask | None = None) -> ReferenceLatent:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.config.channels, *self.config.image_size):
            raise ValueError(
                f"reference shape {image.shape} does not match video frames "
                f"{(self.config.channels, *self.config.image_size)}"
            )
        origin = "clean"
        if mask is not None:
            image = apply_region_mask(image, mask)
            origin = "region-masked"
        latent = self.encode_video(image[None]).latents[0]
        return ReferenceLatent(latent=latent, origin=origin)

    def decode(self, latents: np.ndarray) -> np.ndarray:
        """Pseudo-inverse reconstruction, (groups, H, W, d) -> pixel frames."""
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.projection)
        cfg = self.config
        groups, hl, wl, _ = latents.shape
        ct, cs = cfg.temporal_compression, cfg.spatial_compression
        cells = (latents @ self._pinv).reshape(groups, hl, wl, ct, cfg.channels, cs, cs)
        frames = cells.transpose(0, 3, 4, 1, 5, 2, 6)
        return frames.reshape(groups * ct, cfg.channels, hl * cs, wl * cs)


def embed_prompt(text: str, dim: int, length: int = PROMPT_TOKENS) -> np.ndarray:
    """Hash the prompt bytes into a fixed-length embedding sequence; the
    same text always yields the same embedding."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seeds = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    rng = np.random.default_rng(np.random.SeedSequence(seeds))
    return rng.standard_normal((length, dim))


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar time in [0, 1]."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


# ---------------------------------------------------------------------------
# token sequences


@dataclass
class TokenSequence:
    """Video tokens followed by reference tokens in index order, with the
    coordinate layout and optional view mask they will be attended under."""

    tokens: np.ndarray  # (N, latent_dim)
    layout: SequenceLayout
    groups: list[tuple[str, int]] = field(repr=False)
    view_mask: ViewAttentionMask | None = None

    @property
    def video_token_count(self) -> int:
        return self.layout.video_token_count

    def validate(self) -> None:
        if self.tokens.shape[0] != self.layout.total_tokens:
            raise ValueError(
                f"{self.tokens.shape[0]} tokens but layout describes {self.layout.total_tokens}"
            )
        if len(self.groups) != self.tokens.shape[0]:
            raise ValueError("group labels do not cover the sequence")
        v = self.video_token_count
        if any(kind != "video" for kind, _ in self.groups[:v]):
            raise ValueError("video tokens must precede reference tokens")
        ref_order = [idx for kind, idx in self.groups[v:] if kind == "ref"]
        if len(ref_order) != len(self.groups) - v or ref_order != sorted(ref_order):
            raise ValueError("reference blocks must appear in index order")


def concat_sequence(
    video: LatentVideo,
    refs: list[ReferenceLatent],
    scheme: str,
    rope_config: RopeConfig,
    view_mask: ViewAttentionMask | None = None,
) -> TokenSequence:
    """Concatenate noisy video tokens with clean (possibly region-masked)
    reference tokens along the sequence dimension."""
    if not 1 <= len(refs) <= 3:
        raise ValueError(f"reference count must be in [1, 3], got {len(refs)}")
    groups, hl, wl, dl = video.latents.shape
    for r in refs:
        if r.latent.shape != (hl, wl, dl):
            raise ValueError(f"reference latent shape {r.latent.shape} != video {(hl, wl, dl)}")
    layout = assign_coordinates(groups, (hl, wl), len(refs), scheme, rope_config)
    parts = [video.latents.reshape(groups * hl * wl, dl)]
    labels: list[tuple[str, int]] = [("video", i) for i in range(groups) for _ in range(hl * wl)]
    for j, r in enumerate(refs):
        parts.append(r.latent.reshape(hl * wl, dl))
        labels.extend(("ref", j) for _ in range(hl * wl))
    seq = TokenSequence(tokens=np.concatenate(parts, axis=0), layout=layout, groups=labels, view_mask=view_mask)
    seq.validate()
    return seq


# ---------------------------------------------------------------------------
# the transformer


def _layer_norm(x: T.Tensor, gain: T.Tensor, bias: T.Tensor) -> T.Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + LN_EPS) ** -0.5 * gain + bias


class MvDit:
    """L pre-norm blocks of rotary self-attention, prompt cross-attention
    and a silu MLP; the head reads the video positions as a velocity."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.encoder = VideoEncoder(config)
        self.rope = config.rope_config()
        rng = np.random.default_rng(np.random.SeedSequence([0xD1, config.seed]))
        d, dl = config.model_dim, config.latent_dim
        self.params: dict[str, T.Tensor] = {}

        def par(name: str, shape: tuple[int, ...], scale: float) -> None:
            self.params[name] = T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True, name=name)

        def ones(name: str, shape) -> None:
            self.params[name] = T.Tensor(np.ones(shape), requires_grad=True, name=name)

        def zeros(name: str, shape) -> None:
            self.params[name] = T.Tensor(np.zeros(shape), requires_grad=True, name=name)

        par("w_in", (dl, d), 1.0 / math.sqrt(dl))
        for b in range(config.blocks):
            par(f"blk{b}.w_time", (d, d), 1.0 / math.sqrt(d))
            ones(f"blk{b}.ln1_g", (d,))
            zeros(f"blk{b}.ln1_b", (d,))
            for w in ("wq", "wk", "wv", "wo"):
                par(f"blk{b}.{w}", (d, d), 1.0 / math.sqrt(d))
            ones(f"blk{b}.ln2_g", (d,))
            zeros(f"blk{b}.ln2_b", (d,))
            for w in ("wcq", "wck", "wcv", "wco"):
                par(f"blk{b}.{w}", (d, d), 1.0 / math.sqrt(d))
            ones(f"blk{b}.ln3_g", (d,))
            zeros(f"blk{b}.ln3_b", (d,))
            par(f"blk{b}.w1", (d, 4 * d), 1.0 / math.sqrt(d))
            par(f"blk{b}.w2", (4 * d, d), 1.0 / math.sqrt(4 * d))
        ones("ln_f_g", (d,))
        zeros("ln_f_b", (d,))
        par("w_out", (d, dl), 1.0 / math.sqrt(d))

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return list(self.params.items())

    def _split_heads(self, x: T.Tensor, n: int) -> T.Tensor:
        cfg = self.config
        return x.reshape((n, cfg.heads, cfg.head_dim)).swapaxes(0, 1)

    def _merge_heads(self, x: T.Tensor, n: int) -> T.Tensor:
        return x.swapaxes(0, 1).reshape((n, self.config.model_dim))

    def forward(
        self,
        seq: TokenSequence,
        t: float,
        prompt: np.ndarray,
        record_attention: list | None = None,
    ) -> T.Tensor:
        """Predict the velocity field over the video tokens, shape
        (groups, H, W, latent_dim)."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time must be in [0, 1], got {t}")
        seq.validate()
        cfg = self.config
        n = seq.tokens.shape[0]
        v_count = seq.video_token_count
        scale = 1.0 / math.sqrt(cfg.head_dim)
        p = self.params

        cos, sin = rope_cos_sin(seq.layout.all_coords(), self.rope)
        cos_t, sin_t = T.Tensor(cos), T.Tensor(sin)
        additive = keep = None
        if seq.view_mask is not None:
            if cfg.vm_renorm:
                additive = T.Tensor(seq.view_mask.additive_logits())
            else:
                keep = T.Tensor(seq.view_mask.keep_matrix())

        video_rows = np.zeros((n, 1))
        video_rows[:v_count] = 1.0
        vrow = T.Tensor(video_rows)
        temb = T.Tensor(time_embedding(t, cfg.model_dim)[None, :])
        prompt_t = T.Tensor(np.asarray(prompt, dtype=np.float64))
        n_prompt = prompt_t.shape[0]

        x = T.Tensor(seq.tokens) @ p["w_in"]
        for b in range(cfg.blocks):
            # clean reference tokens carry no time conditioning
            x = x + vrow * (temb @ p[f"blk{b}.w_time"])

            h = _layer_norm(x, p[f"blk{b}.ln1_g"], p[f"blk{b}.ln1_b"])
            q = self._split_heads(h @ p[f"blk{b}.wq"], n)
            k = self._split_heads(h @ p[f"blk{b}.wk"], n)
            val = self._split_heads(h @ p[f"blk{b}.wv"], n)
            q = q * cos_t + T.rotate_pairs(q) * sin_t
            k = k * cos_t + T.rotate_pairs(k) * sin_t
            scores = (q @ k.swapaxes(1, 2)) * scale
            if additive is not None:
                scores = scores + additive
            attn = T.softmax(scores, axis=-1)
            if keep is not None:
                attn = attn * keep
            if record_attention is not None:
                record_attention.append(attn.data.copy())
            x = x + self._merge_heads(attn @ val, n) @ p[f"blk{b}.wo"]

            h = _layer_norm(x, p[f"blk{b}.ln2_g"], p[f"blk{b}.ln2_b"])
            qc = self._split_heads(h @ p[f"blk{b}.wcq"], n)
            kc = self._split_heads(prompt_t @ p[f"blk{b}.wck"], n_prompt)
            vc = self._split_heads(prompt_t @ p[f"blk{b}.wcv"], n_prompt)
            cross = T.softmax((qc @ kc.swapaxes(1, 2)) * scale, axis=-1)
            x = x + self._merge_heads(cross @ vc, n) @ p[f"blk{b}.wco"]

            h = _layer_norm(x, p[f"blk{b}.ln3_g"], p[f"blk{b}.ln3_b"])
            x = x + T.silu(h @ p[f"blk{b}.w1"]) @ p[f"blk{b}.w2"]

        y = _layer_norm(x, p["ln_f_g"], p["ln_f_b"])
        video = y[: v_count] @ p["w_out"]
        hl, wl = seq.layout.grid
        return video.reshape((seq.layout.frames, hl, wl, cfg.latent_dim))

    def attention_weights(self, seq: TokenSequence, t: float, prompt: np.ndarray, layer: int, head: int) -> np.ndarray:
        """The post-softmax self-attention map actually used in forward at
        (layer, head); rows sum to 1 under pre-softmax masking."""
        cfg = self.config
        if not 0 <= layer < cfg.blocks:
            raise IndexError(f"layer {layer} out of range [0, {cfg.blocks})")
        if not 0 <= head < cfg.heads:
            raise IndexError(f"head {head} out of range [0, {cfg.heads})")
        recorded: list[np.ndarray] = []
        self.forward(seq, t, prompt, record_attention=recorded)
        return recorded[layer][head]


# ---------------------------------------------------------------------------
# checkpoints: a directory of flat binary tensor files plus a JSON config


def save_checkpoint(path: str, model: MvDit, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    doc = {"model": model.config.to_dict()}
    if extra:
        doc.update(extra)
    with open(os.path.join(path, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    for name, param in model.parameters():
        T.save_tensor(os.path.join(path, f"{name}.bin"), param.data)


def load_checkpoint(path: str) -> tuple[MvDit, dict]:
    config_path = os.path.join(path, "config.json")
    if not os.path.isdir(path) or not os.path.exists(config_path):
        raise FileNotFoundError(f"checkpoint not found at {path}")
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model = MvDit(ModelConfig.from_dict(doc["model"]))
    for name, param in model.parameters():
        arr = T.load_tensor(os.path.join(path, f"{name}.bin"))
        if arr.shape != param.data.shape:
            raise ValueError(f"checkpoint param {name} has shape {arr.shape}, expected {param.data.shape}")
        param.data = arr
    return model, doc
