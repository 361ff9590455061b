"""Identity-consistency scoring and attention-concentration statistics.

The multi-view consistency score of a frame is the mean cosine
similarity between its face embedding and every embedding in a
multi-view reference set; video scores average the frame scores.
Embeddings come from a pluggable extractor: a synthetic oracle that
reads glyph identity strips, or an external executable speaking the
package's tensor-file format.
"""

from __future__ import annotations

import math
import os
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rope import SequenceLayout
from .synthetic import estimate_glyph_identity


class NoFaceError(RuntimeError):
    """Extraction failed on every sampled frame."""

    def __init__(self, message: str, diagnostics: list[tuple[int, str]]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class FaceEmbedding:
    """A face feature vector and the tag of the extractor that made it."""

    vector: np.ndarray
    extractor: str = "unknown"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if np.linalg.norm(self.vector) == 0.0:
            raise ValueError("zero embedding rejected")


@dataclass
class ReferenceSet:
    """Embeddings of the multi-view reference images (default protocol
    uses ten per identity)."""

    embeddings: list[FaceEmbedding]

    def __post_init__(self):
        if not self.embeddings:
            raise ValueError("reference set must hold at least one embedding")

    def __len__(self) -> int:
        return len(self.embeddings)


def cosine(a: FaceEmbedding, b: FaceEmbedding) -> float:
    """Cosine similarity between two embeddings, in [-1, 1]."""
    num = float(np.dot(a.vector, b.vector))
    return num / (float(np.linalg.norm(a.vector)) * float(np.linalg.norm(b.vector)))


def mvrc_frame(frame_embedding: FaceEmbedding, refs: ReferenceSet) -> float:
    """Mean cosine against every reference embedding, in index order."""
    total = 0.0
    for r in refs.embeddings:
        total += cosine(frame_embedding, r)
    return total / len(refs)


def score_frames(frames, refs: ReferenceSet, extractor, frame_stride: int = 1) -> list[tuple[int, float | None]]:
    """Per-sampled-frame scores; None marks an extraction failure."""
    if frame_stride < 1:
        raise ValueError(f"frame stride must be >= 1, got {frame_stride}")
    scores: list[tuple[int, float | None]] = []
    for idx in range(0, len(frames), frame_stride):
        vec = extractor.embed(frames[idx])
        if vec is None:
            scores.append((idx, None))
            continue
        emb = FaceEmbedding(vec, extractor=extractor.tag)
        scores.append((idx, mvrc_frame(emb, refs)))
    return scores


def mvrc_video(frames, refs: ReferenceSet, extractor, frame_stride: int = 1) -> float:
    """Mean of the frame scores over sampled frames; frames whose
    extraction fails are skipped, not zero-scored."""
    scores = score_frames(frames, refs, extractor, frame_stride)
    valid = [s for _, s in scores if s is not None]
    if not valid:
        diagnostics = [(idx, "extraction-failed") for idx, s in scores if s is None]
        raise NoFaceError(
            f"no face embedding on any of {len(scores)} sampled frames", diagnostics
        )
    return sum(valid) / len(valid)


def embed_references(images, extractor) -> ReferenceSet:
    """Embed curated reference images; here a failure is an error, not a
    skip, since the reference set defines the metric."""
    embeddings = []
    for i, image in enumerate(images):
        vec = extractor.embed(image)
        if vec is None:
            raise ValueError(f"reference image {i} yielded no embedding")
        embeddings.append(FaceEmbedding(vec, extractor=extractor.tag))
    return ReferenceSet(embeddings)


# ---------------------------------------------------------------------------
# extractors


class SyntheticGlyphExtractor:
    """Oracle for the synthetic corpus: reads the identity strip pixels,
    so ground-truth identity is known exactly."""

    tag = "synthetic"

    def embed(self, frame: np.ndarray) -> np.ndarray | None:
        return estimate_glyph_identity(frame)


class ExternalProcessExtractor:
    """Adapter for a user-supplied embedder executable.

    Protocol: `prog <frame.bin> <embedding.bin>`; both files use the flat
    binary tensor format. A nonzero exit status means "no face in this
    frame" and the frame is skipped; a missing or crashing executable
    raises.
    """

    def __init__(self, executable: str):
        if not os.path.exists(executable):
            raise FileNotFoundError(f"extractor executable not found: {executable}")
        self.executable = executable
        self.tag = f"exec:{executable}"

    def embed(self, frame: np.ndarray) -> np.ndarray | None:
        with tempfile.TemporaryDirectory(prefix="mvref-embed-") as tmp:
            frame_path = os.path.join(tmp, "frame.bin")
            out_path = os.path.join(tmp, "embedding.bin")
            T.save_tensor(frame_path, np.asarray(frame, dtype=np.float64))
            proc = subprocess.run(
                [self.executable, frame_path, out_path],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                return None
            return T.load_tensor(out_path)


def get_extractor(spec: str):
    """Resolve an extractor flag value: `synthetic` or `exec:<path>`."""
    if spec == "synthetic":
        return SyntheticGlyphExtractor()
    if spec.startswith("exec:"):
        return ExternalProcessExtractor(spec[len("exec:") :])
    raise ValueError(f"unknown extractor {spec!r}; use 'synthetic' or 'exec:<path>'")


# ---------------------------------------------------------------------------
# attention concentration


@dataclass
class ConcentrationSeries:
    """Per video latent: the fraction of its attention mass landing on
    each reference view, plus the entropy of that distribution."""

    fractions: np.ndarray  # (num_latents, num_refs)
    entropy: np.ndarray  # (num_latents,)

    def mean_entropy(self) -> float:
        return float(self.entropy.mean())


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def attention_concentration(attn_map: np.ndarray, layout: SequenceLayout) -> ConcentrationSeries:
    """Sum attention mass from each video latent's tokens onto each
    reference block and normalize across references."""
    attn_map = np.asarray(attn_map, dtype=np.float64)
    n = layout.total_tokens
    if attn_map.shape != (n, n):
        raise ValueError(f"attention map shape {attn_map.shape} does not match layout ({n} tokens)")
    latents, refs = layout.frames, layout.num_refs
    fractions = np.zeros((latents, refs))
    entropy = np.zeros(latents)
    for i in range(latents):
        rows = layout.video_token_range(i)
        mass = np.array(
            [
                attn_map[rows.start : rows.stop, c.start : c.stop].sum()
                for c in (layout.ref_token_range(j) for j in range(refs))
            ]
        )
        total = mass.sum()
        if total <= 0.0:
            raise ValueError(f"video latent {i} has no attention mass on any reference")
        fractions[i] = mass / total
        entropy[i] = _entropy(fractions[i])
    return ConcentrationSeries(fractions=fractions, entropy=entropy)


def max_entropy(num_refs: int) -> float:
    return math.log(num_refs)
