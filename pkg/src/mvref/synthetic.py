"""Procedurally rendered "heads" for desk-scale experiments.

A glyph is a 3-channel image that is a deterministic function of
(identity seed, yaw, pitch):

  channel 0  identity strip -- eight intensity blocks along the top rows
             encoding the identity vector, readable back by
             estimate_glyph_identity,
  channel 1  a Gaussian "nose" blob whose offset from the image centre
             encodes (sin yaw, -sin pitch), readable back by
             estimate_glyph_pose via a centroid,
  channel 2  a fixed head disc for visual context.

Both estimators are linear functionals of the pixels, so they stay
usable on blurry reconstructions of generated latents.
"""

from __future__ import annotations

import numpy as np

from .datapipe import ClipRecord
from .masking import PoseAngles

ID_DIM = 8
POSE_OFFSET_FRACTION = 0.25  # nose displacement per unit sine, as a fraction of size


def identity_vector(seed: int) -> np.ndarray:
    """Unit identity vector drawn from the seed's own stream."""
    rng = np.random.default_rng(np.random.SeedSequence([0x1D, seed]))
    v = rng.standard_normal(ID_DIM)
    return v / np.linalg.norm(v)


def _strip_rows(size: int) -> int:
    return max(1, size // 16)


def _block_columns(size: int) -> list[np.ndarray]:
    return np.array_split(np.arange(size), ID_DIM)


def render_glyph(identity_seed: int, yaw: float, pitch: float, size: int = 64) -> np.ndarray:
    """Render one frame, shape (3, size, size), values in [0, 1]."""
    if size < ID_DIM:
        raise ValueError(f"glyph size must be >= {ID_DIM}, got {size}")
    img = np.zeros((3, size, size), dtype=np.float64)
    cx = cy = (size - 1) / 2.0

    u = identity_vector(identity_seed)
    rows = _strip_rows(size)
    for block, cols in zip(u, _block_columns(size)):
        img[0, :rows, cols] = (block + 1.0) / 2.0

    offset = POSE_OFFSET_FRACTION * size
    nose_x = cx + offset * np.sin(np.radians(yaw))
    nose_y = cy - offset * np.sin(np.radians(pitch))
    sigma = max(1.0, 0.04 * size)
    ys, xs = np.mgrid[0:size, 0:size]
    img[1] = np.exp(-((xs - nose_x) ** 2 + (ys - nose_y) ** 2) / (2.0 * sigma**2))

    disc = ((xs - cx) ** 2 + (ys - cy) ** 2) <= (0.3 * size) ** 2
    img[2][disc] = 0.5
    return img


def estimate_glyph_pose(frame: np.ndarray) -> PoseAngles | None:
    """Invert the nose channel by centroid; None when the channel holds
    no positive mass."""
    frame = np.asarray(frame, dtype=np.float64)
    size = frame.shape[-1]
    w = np.clip(frame[1], 0.0, None)
    mass = w.sum()
    if mass <= 1e-9:
        return None
    ys, xs = np.mgrid[0 : frame.shape[-2], 0:size]
    cx = cy = (size - 1) / 2.0
    offset = POSE_OFFSET_FRACTION * size
    sin_yaw = np.clip(((w * xs).sum() / mass - cx) / offset, -1.0, 1.0)
    sin_pitch = np.clip(-((w * ys).sum() / mass - cy) / offset, -1.0, 1.0)
    return PoseAngles(float(np.degrees(np.arcsin(sin_yaw))), float(np.degrees(np.arcsin(sin_pitch))), 0.0)


def estimate_glyph_identity(frame: np.ndarray) -> np.ndarray | None:
    """Read the identity strip back; None when the strip is empty."""
    frame = np.asarray(frame, dtype=np.float64)
    size = frame.shape[-1]
    rows = _strip_rows(size)
    strip = frame[0, :rows, :]
    u = np.array([2.0 * strip[:, cols].mean() - 1.0 for cols in _block_columns(size)])
    if np.linalg.norm(u) < 1e-9:
        return None
    return u


# ---------------------------------------------------------------------------
# clips and corpora


def pose_track(seed: int, frames: int, min_amplitude: float = 50.0, max_amplitude: float = 72.0) -> list[PoseAngles]:
    """Smooth sinusoidal yaw/pitch trajectory over the clip."""
    rng = np.random.default_rng(np.random.SeedSequence([0x7A, seed]))
    a_yaw = rng.uniform(min_amplitude, max_amplitude)
    a_pitch = rng.uniform(8.0, 30.0)
    phase_yaw = rng.uniform(0.0, 2.0 * np.pi)
    phase_pitch = rng.uniform(0.0, 2.0 * np.pi)
    ts = np.linspace(0.0, 1.0, frames)
    yaw = np.clip(a_yaw * np.sin(2.0 * np.pi * ts + phase_yaw), -80.0, 80.0)
    pitch = np.clip(a_pitch * np.sin(2.0 * np.pi * ts + phase_pitch), -80.0, 80.0)
    return [PoseAngles(float(y), float(p), 0.0) for y, p in zip(yaw, pitch)]


def render_clip_frames(record: ClipRecord, size: int = 64) -> np.ndarray:
    """All frames of a synthetic clip, shape (T, 3, size, size)."""
    if record.identity_seed is None:
        raise ValueError(f"{record.clip_id}: record carries no synthetic identity seed")
    return np.stack(
        [render_glyph(record.identity_seed, p.yaw, p.pitch, size) for p in record.poses]
    )


def render_reference_images(record: ClipRecord, size: int = 64) -> list[np.ndarray]:
    """Clean reference renders at the clip's chosen reference frames."""
    if record.reference_frames is None:
        raise ValueError(f"{record.clip_id}: no reference frames chosen yet")
    return [
        render_glyph(record.identity_seed, record.poses[i].yaw, record.poses[i].pitch, size)
        for i in record.reference_frames
    ]


def render_eval_references(identity_seed: int, count: int = 10, size: int = 64) -> list[np.ndarray]:
    """A multi-view evaluation set for one identity: yaw sweeps the
    large-angle range while pitch undulates."""
    images = []
    for i in range(count):
        yaw = -60.0 + 120.0 * i / max(count - 1, 1)
        pitch = 15.0 * np.sin(2.0 * np.pi * i / count)
        images.append(render_glyph(identity_seed, yaw, pitch, size))
    return images


def make_clip_record(
    clip_id: str,
    identity_seed: int,
    frames: int = 48,
    fps: float = 16.0,
    size: int = 64,
    quality: float = 0.9,
    face_coverage: float = 1.0,
    person_count: int = 1,
    min_amplitude: float = 50.0,
) -> ClipRecord:
    record = ClipRecord(
        clip_id=clip_id,
        duration=frames / fps,
        fps=fps,
        resolution=(size, size),
        person_count=person_count,
        face_coverage=face_coverage,
        quality=quality,
        poses=pose_track(identity_seed, frames, min_amplitude=min_amplitude),
        caption=f"synthetic head {clip_id}",
        identity_seed=identity_seed,
    )
    record.validate()
    return record


def synthetic_corpus(
    num_clips: int,
    seed: int = 0,
    frames: int = 48,
    fps: float = 16.0,
    size: int = 64,
    clean: bool = False,
) -> list[ClipRecord]:
    """Generate annotation records. `clean` corpora pass every pipeline
    stage (training data); mixed corpora include clips each filter
    should drop."""
    rng = np.random.default_rng(np.random.SeedSequence([0xC0, seed]))
    records = []
    for i in range(num_clips):
        identity_seed = int(rng.integers(0, 2**31))
        if clean:
            records.append(
                make_clip_record(f"clip-{i:04d}", identity_seed, frames=frames, fps=fps, size=size)
            )
            continue
        clip_frames = int(rng.integers(24, 81))
        no_face = rng.random() < 0.12
        record = ClipRecord(
            clip_id=f"clip-{i:04d}",
            duration=clip_frames / fps,
            fps=fps,
            resolution=(size, size),
            person_count=2 if rng.random() < 0.15 else 1,
            face_coverage=0.0 if no_face else float(rng.uniform(0.4, 1.0)),
            quality=float(rng.uniform(0.2, 1.0)),
            poses=pose_track(identity_seed, clip_frames, min_amplitude=float(rng.uniform(10.0, 60.0))),
            caption=None,
            identity_seed=identity_seed,
        )
        record.validate()
        records.append(record)
    return records
