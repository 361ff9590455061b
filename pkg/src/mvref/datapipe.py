"""Three-stage dataset construction over annotation records.

The pipeline never touches pixels: detectors, quality scorers and pose
estimators are upstream providers that produce ClipRecords. Stages are
pure subset selections (coarse quality/face screen, clip-level rules,
large-angle pose mining) followed by reference-frame sampling.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .masking import PoseAngles

LARGE_ANGLE_DEG = 45.0
MIN_CLIP_SECONDS = 3.0
DEFAULT_QUALITY_THRESHOLD = 0.5
DEFAULT_MIN_COVERAGE = 0.8  # "appears only briefly" cutoff; artifact choice


class ManifestError(ValueError):
    """A manifest line failed to parse or validate."""


class InsufficientPoseSpreadError(ValueError):
    """A clip cannot supply reference frames with the required pairwise
    pose separation, even greedily."""


@dataclass
class ClipRecord:
    """One annotated clip: provider outputs plus optional synthetic
    rendering parameters and pipeline-chosen reference frames."""

    clip_id: str
    duration: float
    fps: float
    resolution: tuple[int, int]
    person_count: int
    face_coverage: float
    quality: float
    poses: list[PoseAngles]
    caption: str | None = None
    identity_seed: int | None = None
    frames_path: str | None = None
    reference_frames: list[int] | None = None
    region_mask_rle: dict | None = None

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def validate(self) -> None:
        if self.duration <= 0:
            raise ManifestError(f"{self.clip_id}: duration must be positive, got {self.duration}")
        if not 0.0 <= self.face_coverage <= 1.0:
            raise ManifestError(f"{self.clip_id}: face coverage {self.face_coverage} outside [0, 1]")
        if not 0.0 <= self.quality <= 1.0:
            raise ManifestError(f"{self.clip_id}: quality {self.quality} outside [0, 1]")
        expected = round(self.duration * self.fps)
        if self.poses and len(self.poses) != expected:
            raise ManifestError(
                f"{self.clip_id}: {len(self.poses)} poses for duration*fps == {expected}"
            )

    def to_dict(self) -> dict:
        doc = {
            "clip_id": self.clip_id,
            "duration": self.duration,
            "fps": self.fps,
            "resolution": list(self.resolution),
            "person_count": self.person_count,
            "face_coverage": self.face_coverage,
            "quality": self.quality,
            "poses": [[p.yaw, p.pitch, p.roll] for p in self.poses],
        }
        if self.caption is not None:
            doc["caption"] = self.caption
        if self.identity_seed is not None:
            doc["identity_seed"] = self.identity_seed
        if self.frames_path is not None:
            doc["frames_path"] = self.frames_path
        if self.reference_frames is not None:
            doc["reference_frames"] = self.reference_frames
        if self.region_mask_rle is not None:
            doc["region_mask_rle"] = self.region_mask_rle
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ClipRecord":
        record = cls(
            clip_id=str(doc["clip_id"]),
            duration=float(doc["duration"]),
            fps=float(doc["fps"]),
            resolution=tuple(doc["resolution"]),
            person_count=int(doc["person_count"]),
            face_coverage=float(doc["face_coverage"]),
            quality=float(doc["quality"]),
            poses=[PoseAngles(*p) for p in doc["poses"]],
            caption=doc.get("caption"),
            identity_seed=doc.get("identity_seed"),
            frames_path=doc.get("frames_path"),
            reference_frames=doc.get("reference_frames"),
            region_mask_rle=doc.get("region_mask_rle"),
        )
        record.validate()
        return record


def read_manifest(path) -> list[ClipRecord]:
    """Parse a JSON-lines manifest; errors carry the offending line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ClipRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_manifest(path, records: list[ClipRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# filter stages


@dataclass
class StageReport:
    name: str
    input: int = 0
    kept: int = 0
    dropped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str) -> None:
        self.dropped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {
            "stage": self.name,
            "input": self.input,
            "kept": self.kept,
            "dropped": self.dropped,
            "reasons": dict(sorted(self.reasons.items())),
        }


@dataclass
class PipelineReport:
    stages: list[StageReport] = field(default_factory=list)

    def verify_conservation(self) -> None:
        for i, stage in enumerate(self.stages):
            if stage.input != stage.kept + stage.dropped:
                raise ValueError(f"stage {stage.name}: {stage.input} != {stage.kept} + {stage.dropped}")
            if sum(stage.reasons.values()) != stage.dropped:
                raise ValueError(f"stage {stage.name}: reason counts do not sum to drops")
            if i and stage.input != self.stages[i - 1].kept:
                raise ValueError(
                    f"stage {stage.name} input {stage.input} != previous kept {self.stages[i - 1].kept}"
                )

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}


def coarse_filter(
    records: list[ClipRecord], quality_threshold: float = DEFAULT_QUALITY_THRESHOLD
) -> tuple[list[ClipRecord], StageReport]:
    """Keep clips with a visible face and quality at or above threshold."""
    if not 0.0 <= quality_threshold <= 1.0:
        raise ValueError(f"quality threshold must be in [0, 1], got {quality_threshold}")
    report = StageReport("coarse", input=len(records))
    kept = []
    for record in records:
        if record.face_coverage <= 0.0:
            report.drop("no-face")
        elif record.quality < quality_threshold:
            report.drop("low-quality")
        else:
            kept.append(record)
    report.kept = len(kept)
    return kept, report


def clip_filter(
    records: list[ClipRecord],
    min_duration: float = MIN_CLIP_SECONDS,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
) -> tuple[list[ClipRecord], StageReport]:
    """Keep single-person clips of at least min_duration seconds whose
    face track covers at least min_coverage of frames. The duration
    boundary is inclusive: exactly 3.0 s survives."""
    report = StageReport("clip", input=len(records))
    kept = []
    for record in records:
        if record.duration < min_duration:
            report.drop("short")
        elif record.person_count != 1:
            report.drop("multi-person")
        elif record.face_coverage < min_coverage:
            report.drop("low-coverage")
        else:
            kept.append(record)
    report.kept = len(kept)
    return kept, report


def pose_spread(record: ClipRecord) -> tuple[float, float]:
    yaws = [p.yaw for p in record.poses]
    pitches = [p.pitch for p in record.poses]
    return max(yaws) - min(yaws), max(pitches) - min(pitches)


def pose_filter(records: list[ClipRecord]) -> tuple[list[ClipRecord], StageReport]:
    """Keep clips whose pose range exceeds 45 degrees in yaw or pitch;
    strictly greater, so a range of exactly 45 is dropped."""
    report = StageReport("pose", input=len(records))
    kept = []
    for record in records:
        if not record.poses:
            report.drop("no-pose")
            continue
        yaw_range, pitch_range = pose_spread(record)
        if yaw_range > LARGE_ANGLE_DEG or pitch_range > LARGE_ANGLE_DEG:
            kept.append(record)
        else:
            report.drop("small-angle")
    report.kept = len(kept)
    return kept, report


# ---------------------------------------------------------------------------
# reference sampling


def ref_pose_gap(a: PoseAngles, b: PoseAngles) -> float:
    """Per-axis reading of "pose difference": the larger of the yaw and
    pitch separations."""
    return max(abs(a.yaw - b.yaw), abs(a.pitch - b.pitch))


def _all_gaps_exceed(poses: list[PoseAngles], indices: list[int], threshold: float) -> bool:
    for a in range(len(indices)):
        for b in range(a + 1, len(indices)):
            if ref_pose_gap(poses[indices[a]], poses[indices[b]]) <= threshold:
                return False
    return True


def _greedy_spread(poses: list[PoseAngles], n: int) -> list[int]:
    """Deterministic fallback: farthest-point selection on the pose gap."""
    count = len(poses)
    if n == 1:
        return [0]
    best_pair, best_gap = (0, 1), -1.0
    for a in range(count):
        for b in range(a + 1, count):
            gap = ref_pose_gap(poses[a], poses[b])
            if gap > best_gap:
                best_pair, best_gap = (a, b), gap
    chosen = list(best_pair)
    while len(chosen) < n:
        best_idx, best_min = -1, -1.0
        for c in range(count):
            if c in chosen:
                continue
            nearest = min(ref_pose_gap(poses[c], poses[j]) for j in chosen)
            if nearest > best_min:
                best_idx, best_min = c, nearest
        chosen.append(best_idx)
    return sorted(chosen)


def sample_references(
    record: ClipRecord,
    n: int = 3,
    seed: int = 0,
    max_attempts: int = 64,
) -> list[int]:
    """Seeded rejection sampling of n frame indices with pairwise pose
    gaps above 45 degrees; falls back to the deterministic
    maximal-spread selection before giving up."""
    if not 1 <= n <= 3:
        raise ValueError(f"reference count must be in [1, 3], got {n}")
    if record.frame_count < n:
        raise InsufficientPoseSpreadError(
            f"{record.clip_id}: only {record.frame_count} frames for {n} references"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        picks = sorted(int(i) for i in rng.choice(record.frame_count, size=n, replace=False))
        if _all_gaps_exceed(record.poses, picks, LARGE_ANGLE_DEG):
            return picks
    fallback = _greedy_spread(record.poses, n)
    if _all_gaps_exceed(record.poses, fallback, LARGE_ANGLE_DEG):
        return fallback
    raise InsufficientPoseSpreadError(
        f"{record.clip_id}: no {n} frames with pairwise pose gaps > {LARGE_ANGLE_DEG} degrees"
    )


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineConfig:
    quality_threshold: float = DEFAULT_QUALITY_THRESHOLD
    min_duration: float = MIN_CLIP_SECONDS
    min_coverage: float = DEFAULT_MIN_COVERAGE
    num_refs: int = 3
    seed: int = 0
    max_attempts: int = 64


def _clip_seed(base_seed: int, clip_id: str) -> int:
    return int(np.random.SeedSequence([base_seed, zlib.crc32(clip_id.encode())]).generate_state(1)[0])


def run_pipeline(
    records: list[ClipRecord], config: PipelineConfig | None = None
) -> tuple[list[ClipRecord], PipelineReport]:
    """Apply the three filter stages in order, then choose reference
    frames for every surviving clip."""
    config = config or PipelineConfig()
    report = PipelineReport()

    kept, stage = coarse_filter(records, config.quality_threshold)
    report.stages.append(stage)
    kept, stage = clip_filter(kept, config.min_duration, config.min_coverage)
    report.stages.append(stage)
    kept, stage = pose_filter(kept)
    report.stages.append(stage)

    stage = StageReport("references", input=len(kept))
    out = []
    for record in kept:
        try:
            frames = sample_references(
                record,
                n=config.num_refs,
                seed=_clip_seed(config.seed, record.clip_id),
                max_attempts=config.max_attempts,
            )
        except InsufficientPoseSpreadError:
            stage.drop("insufficient-pose-spread")
            continue
        out.append(dataclasses.replace(record, reference_frames=frames))
    stage.kept = len(out)
    report.stages.append(stage)

    report.verify_conservation()
    return out, report
