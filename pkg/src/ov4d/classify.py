"""Text-prompt classification of per-frame mask proposals.

Prompts become unit vectors, masks are scored by cosine against them, the
logits are min-max equalized per class column, and per-point labels come from
the mask-weighted accumulation Y = M x logits with a reject threshold tau
mapping weak points to the extra `no label` class K.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import AssetFormatError, UnknownPromptError
from .fusion import FrameProposalSet
from .stub_vectors import class_vector

VOCAB_MAGIC = b"OV4DVOC\x00"
LABEL_MAGIC = b"OV4DLAB\x00"

NO_LABEL_NAME = "no label"

_UNIT_NORM_TOL = 1e-5


@dataclass
class PromptSet:
    """Ordered class strings with their unit-norm text embeddings."""

    classes: list[str]
    embeddings: np.ndarray  # (K, D) float32

    def __post_init__(self) -> None:
        if len(self.classes) < 1:
            raise UnknownPromptError("prompt set needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise UnknownPromptError("duplicate prompt strings")
        if self.embeddings.shape[0] != len(self.classes):
            raise AssetFormatError(
                f"{len(self.classes)} classes but {self.embeddings.shape[0]} embedding rows"
            )
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.all(np.abs(norms - 1.0) <= _UNIT_NORM_TOL):
            raise AssetFormatError("prompt embeddings must be unit-norm")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def no_label_index(self) -> int:
        return len(self.classes)


@dataclass
class LabelField:
    """Per-point labels for one frame; label K means `no label`."""

    frame_index: int
    labels: np.ndarray  # (P,) uint16 in [0, K]
    scores: np.ndarray  # (P,) float32, winning accumulated logit
    num_classes: int

    def __post_init__(self) -> None:
        if self.labels.shape != self.scores.shape:
            raise AssetFormatError("labels and scores must have equal length")
        if self.labels.size and int(self.labels.max()) > self.num_classes:
            raise AssetFormatError(
                f"label {int(self.labels.max())} out of range for K={self.num_classes}"
            )


class StubTextEncoder:
    """Deterministic text vectors: any string maps to its fixed unit vector.

    Fixture part names land exactly on the centroids the stub vision side
    clusters around, so fixture prompts match fixture masks by construction.
    """

    mode = "deterministic_stub"

    def __init__(self, dim: int = 8):
        self.dim = dim

    def encode(self, prompt: str) -> np.ndarray:
        return class_vector(prompt, self.dim)


class VocabFileTextEncoder:
    """Text vectors ingested from a vocabulary file keyed by exact string."""

    mode = "ingest_vocab_file"

    def __init__(self, path):
        self.path = str(path)
        self.vectors, self.dim = read_vocab_file(path)

    def encode(self, prompt: str) -> np.ndarray:
        try:
            return self.vectors[prompt]
        except KeyError:
            raise UnknownPromptError(
                f"prompt {prompt!r} not present in vocabulary {self.path}"
            ) from None


def embed_prompts(encoder, prompts: list[str]) -> PromptSet:
    """Encode each prompt string into a unit vector, preserving order."""
    if not prompts:
        raise UnknownPromptError("prompt list is empty")
    cleaned = [p.strip() for p in prompts]
    if any(not p for p in cleaned):
        raise UnknownPromptError("prompts must be non-empty strings")
    if len(set(cleaned)) != len(cleaned):
        raise UnknownPromptError(f"duplicate prompts in {cleaned}")
    rows = []
    for prompt in cleaned:
        vec = np.asarray(encoder.encode(prompt), dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise AssetFormatError(f"prompt {prompt!r} encoded to a zero vector")
        rows.append((vec / norm).astype(np.float32))
    return PromptSet(classes=cleaned, embeddings=np.stack(rows))


def compute_logits(proposals: FrameProposalSet, prompts: PromptSet) -> np.ndarray:
    """Cosine similarity of every mask embedding against every prompt, (L, K)."""
    if proposals.embeddings.shape[0] and proposals.embeddings.shape[1] != prompts.embeddings.shape[1]:
        raise AssetFormatError(
            f"embedding dim {proposals.embeddings.shape[1]} != "
            f"prompt dim {prompts.embeddings.shape[1]}"
        )
    q = proposals.embeddings.astype(np.float64)
    if q.shape[0] == 0:
        return np.zeros((0, prompts.num_classes), dtype=np.float64)
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero rows score 0 against everything
    return (q / norms) @ prompts.embeddings.astype(np.float64).T


def equalize_logits(logits: np.ndarray) -> np.ndarray:
    """Per-column min-max factor applied multiplicatively.

    Column k becomes ((x - min) / (max - min)) * x, which zeroes the column
    minimum and keeps the maximum fixed. Constant columns (including single-row
    inputs) pass through unchanged.
    """
    if logits.shape[0] < 1:
        raise AssetFormatError("equalization needs at least one mask row")
    out = np.asarray(logits, dtype=np.float64).copy()
    mins = out.min(axis=0, keepdims=True)
    maxs = out.max(axis=0, keepdims=True)
    span = maxs - mins
    degenerate = span == 0.0
    span[degenerate] = 1.0
    factor = (out - mins) / span
    factor[np.broadcast_to(degenerate, factor.shape)] = 1.0
    return factor * out


def segment_frame(proposals: FrameProposalSet, logits: np.ndarray, tau: float) -> LabelField:
    """Accumulate mask-weighted logits per point and take the argmax label.

    Y[p][k] sums logits[l][k] over masks l containing point p. Points whose
    best accumulated score falls strictly below tau (including points in no
    mask) get the `no label` class K. Ties break toward the lower class index.
    """
    if logits.shape[0] != proposals.num_proposals:
        raise AssetFormatError(
            f"{logits.shape[0]} logit rows for {proposals.num_proposals} masks"
        )
    k = logits.shape[1]
    membership = proposals.mask_matrix().astype(np.float64)
    accumulated = membership @ np.asarray(logits, dtype=np.float64)  # (P, K)
    if accumulated.shape[1] == 0:
        raise AssetFormatError("segmentation needs at least one class")
    labels = accumulated.argmax(axis=1)
    scores = np.take_along_axis(accumulated, labels[:, None], axis=1)[:, 0]
    labels[scores < tau] = k
    return LabelField(
        frame_index=proposals.frame_index,
        labels=labels.astype(np.uint16),
        scores=scores.astype(np.float32),
        num_classes=k,
    )


def write_vocab_file(path, vectors: dict[str, np.ndarray], dim: int) -> None:
    """Write prompt vectors keyed by UTF-8 string.

    Header: 8-byte magic, u32 dimension, u32 record count. Each record:
    u32 byte length, the UTF-8 bytes, then `dim` little-endian float32 values.
    """
    keys = sorted(vectors)
    with open(path, "wb") as fh:
        fh.write(VOCAB_MAGIC)
        fh.write(struct.pack("<II", dim, len(keys)))
        for key in keys:
            vec = np.asarray(vectors[key], dtype="<f4")
            if vec.shape != (dim,):
                raise AssetFormatError(
                    f"vocabulary vector for {key!r} has shape {vec.shape}, expected ({dim},)"
                )
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def read_vocab_file(path) -> tuple[dict[str, np.ndarray], int]:
    """Read a vocabulary file back into a {prompt: vector} map, as stored."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != VOCAB_MAGIC:
        raise AssetFormatError(f"{path}: not a vocabulary file (bad magic)")
    dim, count = struct.unpack_from("<II", data, 8)
    vectors: dict[str, np.ndarray] = {}
    offset = 16
    for _ in range(count):
        if offset + 4 > len(data):
            raise AssetFormatError(f"{path}: truncated vocabulary record")
        (strlen,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + strlen + 4 * dim > len(data):
            raise AssetFormatError(f"{path}: truncated vocabulary record")
        key = data[offset : offset + strlen].decode("utf-8")
        offset += strlen
        # Stored verbatim; prompt embedding normalizes at encode time.
        vectors[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
    if offset != len(data):
        raise AssetFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return vectors, dim


def write_label_file(path, fields: list[LabelField], classes: list[str]) -> None:
    """Write per-frame label records plus a JSON sidecar naming the classes.

    Binary layout: 8-byte magic, u32 frame count, then per frame u32 P_t
    followed by P_t little-endian u16 labels. The sidecar (same path with a
    .json suffix appended) maps label indices to class strings and records
    the `no label` index K.
    """
    k = len(classes)
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<I", len(fields)))
        for field in fields:
            if field.num_classes != k:
                raise AssetFormatError(
                    f"frame {field.frame_index} has K={field.num_classes}, expected {k}"
                )
            fh.write(struct.pack("<I", field.labels.size))
            fh.write(field.labels.astype("<u2").tobytes())
    sidecar = {
        "classes": list(classes),
        "no_label_index": k,
        "no_label_name": NO_LABEL_NAME,
        "num_frames": len(fields),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_label_file(path) -> tuple[list[np.ndarray], dict]:
    """Read label records and their sidecar; returns (per-frame arrays, sidecar)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:8] != LABEL_MAGIC:
        raise AssetFormatError(f"{path}: not a label file (bad magic)")
    (num_frames,) = struct.unpack_from("<I", data, 8)
    frames: list[np.ndarray] = []
    offset = 12
    for _ in range(num_frames):
        if offset + 4 > len(data):
            raise AssetFormatError(f"{path}: truncated label record")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + 2 * count > len(data):
            raise AssetFormatError(f"{path}: truncated label record")
        frames.append(np.frombuffer(data, dtype="<u2", count=count, offset=offset).copy())
        offset += 2 * count
    if offset != len(data):
        raise AssetFormatError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise AssetFormatError(f"{path}: missing sidecar {path}.json") from None
    return frames, sidecar
