"""Facial-direction trajectories: construction, naturalness statistics
and a deterministic SVG scatter rendering.

A trajectory is the per-frame unit facing direction with time normalized
to [0, 1] across the clip. Collapse segments (long runs confined to a
small angular cone) are the quantitative signature of view-locked
generation; dispersion and smoothness summarize how the direction moves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masking import PoseAngles

DEFAULT_CONE_DEG = 10.0
DEFAULT_MIN_RUN = 20

PROJECTIONS = ("xy", "xz")


@dataclass(frozen=True)
class TrajectoryPoint:
    direction: np.ndarray  # unit 3-vector
    time: float  # in [0, 1]


def pose_to_direction(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Unit facing vector; yaw rotates about the vertical axis, pitch is
    elevation, +z is frontal. (0, 0) -> (0, 0, 1)."""
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    return np.array(
        [
            math.sin(yaw) * math.cos(pitch),
            math.sin(pitch),
            math.cos(yaw) * math.cos(pitch),
        ]
    )


def build_trajectory(poses: Sequence[PoseAngles], frame_count: int | None = None) -> list[TrajectoryPoint]:
    """Directions from per-frame pose with time_k = k / (frames - 1)."""
    if frame_count is None:
        frame_count = len(poses)
    if frame_count != len(poses):
        raise ValueError(f"{len(poses)} poses for a declared frame count of {frame_count}")
    if frame_count < 2:
        raise ValueError(f"a trajectory needs at least 2 frames, got {frame_count}")
    return [
        TrajectoryPoint(direction=pose_to_direction(p.yaw, p.pitch), time=k / (frame_count - 1))
        for k, p in enumerate(poses)
    ]


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0)))


@dataclass
class CollapseSegment:
    start: int
    end: int  # inclusive
    centroid: np.ndarray


@dataclass
class TrajectoryStats:
    dispersion: float  # mean pairwise angular distance, radians
    smoothness: float  # mean per-step angular increment, radians
    max_jump: float  # largest single-step angle
    collapse_segments: list[CollapseSegment] = field(default_factory=list)


def trajectory_stats(
    traj: Sequence[TrajectoryPoint],
    cone_deg: float = DEFAULT_CONE_DEG,
    min_len: int = DEFAULT_MIN_RUN,
) -> TrajectoryStats:
    """Dispersion over all pairs, smoothness over consecutive pairs, and
    maximal non-overlapping runs of at least min_len points staying
    within cone_deg of the run's first point."""
    if len(traj) < 2:
        raise ValueError(f"need at least 2 trajectory points, got {len(traj)}")
    dirs = np.stack([p.direction for p in traj])
    n = len(dirs)

    cosines = np.clip(dirs @ dirs.T, -1.0, 1.0)
    angles = np.arccos(cosines)
    iu = np.triu_indices(n, k=1)
    dispersion = float(angles[iu].mean())
    steps = np.array([angles[i, i + 1] for i in range(n - 1)])
    smoothness = float(steps.mean())
    max_jump = float(steps.max())

    cone = math.radians(cone_deg)
    segments: list[CollapseSegment] = []
    i = 0
    while i < n:
        j = i + 1
        while j < n and angles[i, j] <= cone:
            j += 1
        if j - i >= min_len:
            centroid = dirs[i:j].mean(axis=0)
            centroid = centroid / np.linalg.norm(centroid)
            segments.append(CollapseSegment(start=i, end=j - 1, centroid=centroid))
            i = j
        else:
            i += 1
    return TrajectoryStats(
        dispersion=dispersion, smoothness=smoothness, max_jump=max_jump, collapse_segments=segments
    )


# ---------------------------------------------------------------------------
# SVG rendering (hand-built: textual, diffable, golden-testable)

_SIZE = 400
_CENTER = 200.0
_RADIUS = 170.0

_RAMP_STOPS = ((0x2B, 0x6C, 0xB0), (0x2F, 0x9E, 0x44), (0xE0, 0x31, 0x31))


def _ramp(t: float) -> str:
    """Fixed time-to-color ramp: blue through green to red."""
    t = min(max(t, 0.0), 1.0)
    if t <= 0.5:
        a, b, local = _RAMP_STOPS[0], _RAMP_STOPS[1], t * 2.0
    else:
        a, b, local = _RAMP_STOPS[1], _RAMP_STOPS[2], (t - 0.5) * 2.0
    rgb = tuple(round(x + (y - x) * local) for x, y in zip(a, b))
    return "#%02x%02x%02x" % rgb


def _project(direction: np.ndarray, projection: str) -> tuple[float, float]:
    if projection == "xy":
        return float(direction[0]), float(direction[1])
    return float(direction[0]), float(direction[2])


def render_trajectory_svg(traj: Sequence[TrajectoryPoint], projection: str = "xy") -> str:
    """Orthographic scatter of the trajectory: one circle per point,
    colored by the time ramp, plus a black origin marker. Byte-for-byte
    deterministic for a fixed input."""
    if not traj:
        raise ValueError("cannot render an empty trajectory")
    if projection not in PROJECTIONS:
        raise ValueError(f"projection must be one of {PROJECTIONS}, got {projection!r}")
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    for point in traj:
        px, py = _project(point.direction, projection)
        sx = _CENTER + _RADIUS * px
        sy = _CENTER - _RADIUS * py
        lines.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="4" fill="{_ramp(point.time)}"/>')
    lines.append(f'<circle cx="{_CENTER:.2f}" cy="{_CENTER:.2f}" r="5" fill="black"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pose files and stats reporting


def read_poses_jsonl(path) -> list[PoseAngles]:
    """Pose input: JSON-lines of {frame, yaw, pitch, roll}, sorted by frame."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                rows.append(
                    (int(doc["frame"]), PoseAngles(float(doc["yaw"]), float(doc["pitch"]), float(doc.get("roll", 0.0))))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    rows.sort(key=lambda r: r[0])
    return [pose for _, pose in rows]


def stats_csv_rows(stats: TrajectoryStats) -> list[list]:
    rows = [
        ["metric", "value"],
        ["dispersion_rad", repr(stats.dispersion)],
        ["smoothness_rad", repr(stats.smoothness)],
        ["max_jump_rad", repr(stats.max_jump)],
        ["collapse_segments", len(stats.collapse_segments)],
    ]
    for seg in stats.collapse_segments:
        rows.append([f"collapse_{seg.start}_{seg.end}", repr(float(angle_between(seg.centroid, np.array([0.0, 0.0, 1.0]))))])
    return rows
