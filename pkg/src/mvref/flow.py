"""Rectified-flow training objective and the Euler probability-flow sampler.

The interpolant is linear, z_t = (1 - t) z0 + t eps with velocity target
eps - z0, so t = 1 is pure noise and t = 0 is data; sampling integrates
dz/dt = v(z, t) backwards from t = 1 with plain Euler steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .datapipe import ClipRecord, sample_references
from .masking import (
    MASK_MODES,
    PoseAngles,
    build_view_attention_mask,
    generate_region_mask,
    pose_anchor_frame,
)
from .model import (
    LatentVideo,
    ModelConfig,
    MvDit,
    ReferenceLatent,
    TokenSequence,
    concat_sequence,
    embed_prompt,
)
from .synthetic import render_clip_frames, render_glyph


@dataclass
class FlowSample:
    """One interpolant draw: endpoints, time, mixture and velocity target."""

    z0: np.ndarray
    eps: np.ndarray
    t: float
    z_t: np.ndarray
    v_target: np.ndarray


def make_flow_sample(z0: np.ndarray, seed: int, t: float) -> FlowSample:
    """Draw eps from the seed's stream and build the linear interpolant."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must be in [0, 1], got {t}")
    z0 = np.asarray(z0, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([0xAB, seed]))
    eps = rng.standard_normal(z0.shape)
    return FlowSample(z0=z0, eps=eps, t=t, z_t=(1.0 - t) * z0 + t * eps, v_target=eps - z0)


def flow_loss(pred: T.Tensor, target: np.ndarray) -> T.Tensor:
    """Mean squared error between the predicted and target velocities."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise T.ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - T.Tensor(target)
    return (diff * diff).mean()


def euler_integrate(v_fn, z1: np.ndarray, steps: int) -> np.ndarray:
    """Integrate dz/dt = v(z, t) from t = 1 down to t = 0 in `steps`
    uniform Euler steps: z <- z - (1/K) v(z, t)."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    z = np.asarray(z1, dtype=np.float64).copy()
    dt = 1.0 / steps
    for i in range(steps):
        t = 1.0 - i * dt
        z = z - dt * np.asarray(v_fn(z, t), dtype=np.float64)
    return z


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 2
    lr: float = 0.05
    seed: int = 0
    masking: str = "none"  # none | rm | vm | rm+vm
    rm_ratio: float = 0.6
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.masking not in MASK_MODES:
            raise ValueError(f"masking mode {self.masking!r} not in {MASK_MODES}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch size must be positive")

    @property
    def use_rm(self) -> bool:
        return "rm" in self.masking.split("+")

    @property
    def use_vm(self) -> bool:
        return "vm" in self.masking.split("+")


@dataclass
class PreparedClip:
    """A clip readied for the training loop: pixels resolved, video
    latents cached; references are re-encoded per step when region
    masking is active."""

    record: ClipRecord
    z0: LatentVideo
    ref_images: list[np.ndarray]
    ref_poses: list[PoseAngles]
    anchor_poses: list[PoseAngles]
    prompt: np.ndarray


def clip_pixels(record: ClipRecord, size: int) -> np.ndarray:
    """Resolve a record to pixel frames: a tensor file when a path is
    given, otherwise the synthetic glyph renderer."""
    if record.frames_path is not None:
        frames = T.load_tensor(record.frames_path)
        if frames.ndim != 4:
            raise ValueError(f"{record.clip_id}: {record.frames_path} is not a (T, C, H, W) tensor")
        return frames
    if record.identity_seed is not None:
        return render_clip_frames(record, size)
    raise ValueError(f"{record.clip_id}: record has neither synthetic parameters nor pixels")


def prepare_clip(record: ClipRecord, model: MvDit, ref_seed: int = 0) -> PreparedClip:
    cfg = model.config
    size = cfg.image_size[0]
    pixels = clip_pixels(record, size)
    frames = pixels[: cfg.source_frames]
    z0 = model.encoder.encode_video(frames, fps=record.fps)

    ref_frames = record.reference_frames
    if ref_frames is None:
        ref_frames = sample_references(record, n=cfg.num_refs, seed=ref_seed)
    if len(ref_frames) < cfg.num_refs:
        raise ValueError(
            f"{record.clip_id}: {len(ref_frames)} reference frames for {cfg.num_refs} references"
        )
    ref_frames = ref_frames[: cfg.num_refs]
    ref_poses = [record.poses[i] for i in ref_frames]
    if record.identity_seed is not None:
        ref_images = [render_glyph(record.identity_seed, p.yaw, p.pitch, size) for p in ref_poses]
    else:
        ref_images = [pixels[i] for i in ref_frames]

    anchors = []
    for i in range(z0.groups):
        idx = min(pose_anchor_frame(i, cfg.temporal_compression), len(record.poses) - 1)
        anchors.append(record.poses[idx])

    prompt = embed_prompt(record.caption or record.clip_id, cfg.model_dim)
    return PreparedClip(
        record=record, z0=z0, ref_images=ref_images, ref_poses=ref_poses,
        anchor_poses=anchors, prompt=prompt,
    )


def build_training_sequence(
    model: MvDit,
    clip: PreparedClip,
    video_tokens: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> TokenSequence:
    """Encode (optionally region-masked) references and assemble the
    token sequence; the view mask is attached when view masking is on."""
    cfg = model.config
    refs = []
    for image in clip.ref_images:
        mask = None
        if config.use_rm:
            # independent mask per reference per sample: fresh seed stream
            mask = generate_region_mask(
                image.shape[-2], image.shape[-1], config.rm_ratio, seed=int(rng.integers(2**63))
            )
        refs.append(model.encoder.encode_reference(image, mask))
    noisy = LatentVideo(latents=video_tokens, fps=clip.z0.fps, source_frames=clip.z0.source_frames)
    seq = concat_sequence(noisy, refs, cfg.scheme, model.rope)
    if config.use_vm:
        seq.view_mask = build_view_attention_mask(seq.layout, clip.anchor_poses, clip.ref_poses)
    return seq


def train_step(
    model: MvDit,
    batch: list[PreparedClip],
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One optimization step over a batch; the masking mode only changes
    the conditioning inputs, never the velocity target."""
    if not batch:
        raise ValueError("empty batch")
    params = [p for _, p in model.parameters()]
    T.zero_grads(params)
    with T.Tape() as tape:
        losses = []
        for clip in batch:
            t = float(rng.uniform(0.0, 1.0))
            fs = make_flow_sample(clip.z0.latents, seed=int(rng.integers(2**63)), t=t)
            seq = build_training_sequence(model, clip, fs.z_t, config, rng)
            pred = model.forward(seq, t, clip.prompt)
            losses.append(flow_loss(pred, fs.v_target))
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        loss = total * (1.0 / len(losses))
    tape.backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    T.sgd_step(params, grads, config.lr)
    return loss.item()


def train(
    records: list[ClipRecord],
    config: TrainConfig,
    model: MvDit | None = None,
) -> tuple[MvDit, list[float]]:
    """Full training loop; deterministic for a fixed config and corpus."""
    if not records:
        raise ValueError("no training clips")
    if model is None:
        model = MvDit(config.model)
    rng = np.random.default_rng(np.random.SeedSequence([0xF1, config.seed]))
    prepared = [
        prepare_clip(r, model, ref_seed=int(rng.integers(2**63))) for r in records
    ]
    losses = []
    for _ in range(config.steps):
        if len(prepared) <= config.batch_size:
            batch = [prepared[i % len(prepared)] for i in range(config.batch_size)]
        else:
            idx = rng.choice(len(prepared), size=config.batch_size, replace=False)
            batch = [prepared[int(i)] for i in idx]
        losses.append(train_step(model, batch, config, rng))
    return model, losses


def write_loss_csv(path, losses: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, repr(loss)])


# ---------------------------------------------------------------------------
# sampling


def sample(
    model: MvDit,
    refs: list[ReferenceLatent],
    prompt_text: str,
    steps: int,
    seed: int,
    collect_attention: list | None = None,
) -> np.ndarray:
    """Generate a latent video by integrating the learned velocity field
    from seeded noise at t = 1 down to t = 0. References stay clean and
    no view mask is applied at inference."""
    cfg = model.config
    rng = np.random.default_rng(np.random.SeedSequence([0x5A, seed]))
    hl, wl = cfg.grid
    z1 = rng.standard_normal((cfg.latent_frames, hl, wl, cfg.latent_dim))
    prompt = embed_prompt(prompt_text, cfg.model_dim)

    def v_fn(z, t):
        noisy = LatentVideo(latents=z, fps=16.0, source_frames=cfg.source_frames)
        seq = concat_sequence(noisy, refs, cfg.scheme, model.rope)
        recorder = [] if collect_attention is not None else None
        pred = model.forward(seq, t, prompt, record_attention=recorder)
        if collect_attention is not None:
            collect_attention.append(recorder)
        return pred.data

    return euler_integrate(v_fn, z1, steps)
