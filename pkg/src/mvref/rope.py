"""Rotary positional coordinates for video and reference tokens.

Three coordinate schemes are supported for the reference blocks appended
after the video tokens:

  vanilla          -- each reference block gets the next temporal index
                      after the last video frame, spatial coordinates
                      copied from the video grid.
  temporal_offset  -- all reference blocks share one offset temporal
                      index, spatial coordinates copied from the grid.
  rd_rope          -- all reference blocks share the offset temporal
                      index AND each block is pushed into its own
                      disjoint spatial coordinate region.

The attention-score functions here are pure float64 math, independent of
the model's tensor engine, so they double as oracles for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("vanilla", "temporal_offset", "rd_rope")

AXES = ("t", "x", "y")


class ConfigurationError(ValueError):
    """Invalid rotary/layout configuration."""


def default_axis_split(head_dim: int) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Partition the head's d/2 two-dimensional subspaces into contiguous
    temporal, height and width sets, as even as possible with any
    remainder going to the temporal set."""
    n_sub = head_dim // 2
    base = n_sub // 3
    sizes = (base + (n_sub - 3 * base), base, base)
    m_t = tuple(range(0, sizes[0]))
    m_x = tuple(range(sizes[0], sizes[0] + sizes[1]))
    m_y = tuple(range(sizes[0] + sizes[1], n_sub))
    return m_t, m_x, m_y


@dataclass
class RopeConfig:
    """Frequency spectrum and axis-subspace allocation for one head."""

    head_dim: int = 8
    base: float = 10000.0
    temporal_offset: int = 1
    grid: tuple[int, int] = (8, 8)
    num_refs: int = 3
    axis_subspaces: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] | None = None

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ConfigurationError(f"head_dim must be even and positive, got {self.head_dim}")
        if self.temporal_offset < 0:
            raise ConfigurationError(f"temporal_offset must be >= 0, got {self.temporal_offset}")
        if not (1 <= self.num_refs <= 3):
            raise ConfigurationError(f"num_refs must be in [1, 3], got {self.num_refs}")
        if self.grid[0] <= 0 or self.grid[1] <= 0:
            raise ConfigurationError(f"grid extents must be positive, got {self.grid}")
        if self.axis_subspaces is None:
            self.axis_subspaces = default_axis_split(self.head_dim)
        flat = sorted(m for axis in self.axis_subspaces for m in axis)
        if flat != list(range(self.head_dim // 2)):
            raise ConfigurationError("axis subspaces must partition the d/2 subspaces")

    def frequencies(self) -> np.ndarray:
        """omega_m = base^(-2m/d) for global subspace index m; strictly
        decreasing, omega_0 == 1."""
        m = np.arange(self.head_dim // 2, dtype=np.float64)
        return self.base ** (-2.0 * m / self.head_dim)

    def axis_of(self, m: int) -> str:
        for name, members in zip(AXES, self.axis_subspaces):
            if m in members:
                return name
        raise ConfigurationError(f"subspace {m} outside head_dim {self.head_dim}")


@dataclass(frozen=True)
class RopeCoordinate:
    """Shared 3D token position: temporal index and spatial cell."""

    f: int
    h: int
    w: int

    def __post_init__(self):
        if self.f < 0 or self.h < 0 or self.w < 0:
            raise ConfigurationError(f"coordinates must be non-negative, got {self}")

    def shifted(self, s: int) -> "RopeCoordinate":
        return RopeCoordinate(self.f + s, self.h + s, self.w + s)

    def axis_value(self, axis: str) -> int:
        return {"t": self.f, "x": self.h, "y": self.w}[axis]


@dataclass
class SequenceLayout:
    """Token coordinates for one concatenated video+references sequence.

    Video tokens tile f in [0, frames), h in [0, H), w in [0, W) in
    (f, h, w) order; reference blocks follow in index order.
    """

    scheme: str
    frames: int
    grid: tuple[int, int]
    video_coords: list[RopeCoordinate]
    ref_blocks: list[list[RopeCoordinate]] = field(default_factory=list)

    @property
    def num_refs(self) -> int:
        return len(self.ref_blocks)

    @property
    def tokens_per_block(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def video_token_count(self) -> int:
        return len(self.video_coords)

    @property
    def total_tokens(self) -> int:
        return self.video_token_count + sum(len(b) for b in self.ref_blocks)

    def all_coords(self) -> list[RopeCoordinate]:
        coords = list(self.video_coords)
        for block in self.ref_blocks:
            coords.extend(block)
        return coords

    def video_token_range(self, latent_index: int) -> range:
        per = self.tokens_per_block
        return range(latent_index * per, (latent_index + 1) * per)

    def ref_token_range(self, ref_index: int) -> range:
        start = self.video_token_count
        for j, block in enumerate(self.ref_blocks):
            if j == ref_index:
                return range(start, start + len(block))
            start += len(block)
        raise IndexError(f"reference index {ref_index} out of range")

    def block_ranges(self) -> list[dict]:
        out = []
        for i, block in enumerate(self.ref_blocks, start=1):
            fs = sorted({c.f for c in block})
            out.append(
                {
                    "ref": i,
                    "f": fs,
                    "h_range": [min(c.h for c in block), max(c.h for c in block) + 1],
                    "w_range": [min(c.w for c in block), max(c.w for c in block) + 1],
                }
            )
        return out

    def to_json(self) -> str:
        doc = {
            "scheme": self.scheme,
            "latent_frames": self.frames,
            "grid": list(self.grid),
            "video_tokens": self.video_token_count,
            "video_f_range": [0, self.frames],
            "ref_blocks": self.block_ranges(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def assign_coordinates(
    frames: int,
    grid: tuple[int, int],
    num_refs: int,
    scheme: str,
    config: RopeConfig,
) -> SequenceLayout:
    """Assign (f, h, w) positions to every video and reference token."""
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    if not (1 <= num_refs <= 3):
        raise ConfigurationError(f"num_refs must be in [1, 3], got {num_refs}")
    if frames < 1:
        raise ConfigurationError(f"frames must be >= 1, got {frames}")
    if grid[0] <= 0 or grid[1] <= 0:
        raise ConfigurationError(f"grid extents must be positive, got {grid}")
    if tuple(grid) != tuple(config.grid):
        raise ConfigurationError(f"grid {grid} does not match config grid {config.grid}")

    H, W = grid
    video = [
        RopeCoordinate(f, h, w)
        for f in range(frames)
        for h in range(H)
        for w in range(W)
    ]
    f_last = frames - 1
    blocks: list[list[RopeCoordinate]] = []
    for i in range(1, num_refs + 1):
        if scheme == "vanilla":
            f_i = f_last + i
            block = [RopeCoordinate(f_i, h, w) for h in range(H) for w in range(W)]
        elif scheme == "temporal_offset":
            f_i = f_last + config.temporal_offset
            block = [RopeCoordinate(f_i, h, w) for h in range(H) for w in range(W)]
        else:  # rd_rope: shared temporal index, disjoint spatial region per ref
            f_i = f_last + config.temporal_offset
            block = [
                RopeCoordinate(f_i, h + i * H, w + i * W)
                for h in range(H)
                for w in range(W)
            ]
        blocks.append(block)
    return SequenceLayout(scheme=scheme, frames=frames, grid=(H, W), video_coords=video, ref_blocks=blocks)


# ---------------------------------------------------------------------------
# rotation math


def rotate(v, theta: float) -> np.ndarray:
    """Apply the 2D rotation matrix [[cos, -sin], [sin, cos]] to v."""
    v = np.asarray(v, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def subspace_angles(coord: RopeCoordinate, config: RopeConfig) -> np.ndarray:
    """theta_m = omega_m * p_axis(m) for every subspace m, in order."""
    omega = config.frequencies()
    theta = np.empty_like(omega)
    for axis, members in zip(AXES, config.axis_subspaces):
        p = coord.axis_value(axis)
        for m in members:
            theta[m] = omega[m] * p
    return theta


def apply_rope(x, coord: RopeCoordinate, config: RopeConfig) -> np.ndarray:
    """Rotate each 2D subspace of x by its positional angle."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.head_dim:
        raise ConfigurationError(f"vector dim {x.shape[-1]} != head_dim {config.head_dim}")
    theta = subspace_angles(coord, config)
    out = x.copy()
    for m, th in enumerate(theta):
        out[..., 2 * m : 2 * m + 2] = rotate(x[..., 2 * m : 2 * m + 2], th)
    return out


def rope_attention_score(q, k, p_i: RopeCoordinate, p_j: RopeCoordinate, config: RopeConfig) -> float:
    """Sum over subspaces of q^T R(omega_m * (p_j - p_i)) k, per axis.

    The relative-rotation form: the result depends only on the coordinate
    difference, never on absolute positions.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    omega = config.frequencies()
    score = 0.0
    for axis, members in zip(AXES, config.axis_subspaces):
        delta = p_j.axis_value(axis) - p_i.axis_value(axis)
        for m in members:
            km = rotate(k[2 * m : 2 * m + 2], omega[m] * delta)
            score += float(q[2 * m] * km[0] + q[2 * m + 1] * km[1])
    return score


def phase_shift_spectrum(offset: int, axis: str, config: RopeConfig) -> np.ndarray:
    """Delta-theta_m = omega_m * offset over the axis' subspaces, in
    subspace order. Low-index subspaces carry the largest shifts."""
    if offset < 0:
        raise ConfigurationError(f"offset must be >= 0, got {offset}")
    if axis not in AXES:
        raise ConfigurationError(f"axis must be one of {AXES}, got {axis!r}")
    omega = config.frequencies()
    members = config.axis_subspaces[AXES.index(axis)]
    return np.array([omega[m] * offset for m in members])


def rope_cos_sin(coords: list[RopeCoordinate], config: RopeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-token cos/sin tables of shape [n_tokens, head_dim], each
    subspace angle repeated for its (even, odd) component pair.

    With r = rotate_pairs, x' = x * cos + r(x) * sin reproduces
    apply_rope exactly; this is the form the model consumes.
    """
    angles = np.stack([subspace_angles(c, config) for c in coords])
    cos = np.repeat(np.cos(angles), 2, axis=-1)
    sin = np.repeat(np.sin(angles), 2, axis=-1)
    return cos, sin
