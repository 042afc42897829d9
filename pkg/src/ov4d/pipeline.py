"""End-to-end orchestration: one-time scene building into a prompt-independent
fused asset, and the cheap prompt-query path on top of it.

Building runs render -> tracking -> validation -> embedding -> fusion ->
assembly and persists every frame's (masks, embeddings) pair. Queries then
only encode text, score, equalize, and segment; nothing geometric runs again,
which is what makes interactive prompting fast.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import (
    StubTextEncoder,
    VocabFileTextEncoder,
    compute_logits,
    embed_prompts,
    equalize_logits,
    segment_frame,
)
from .errors import AssetFormatError, BuildError, LoadError, MissingEmbeddingError, Ov4dError
from .fusion import (
    FileEmbeddingProvider,
    FrameProposalSet,
    Mask3D,
    StubEmbeddingProvider,
    assemble_frame,
    build_memory_bank,
    fuse_track_embeddings,
)
from .instrumentation import counters
from .render import SplatConfig
from .scene import load_sequence
from .tracks import ingest_tracks, oracle_track_set
from .validation import ValidationConfig, validate_and_augment

ASSET_MAGIC = b"OV4DFAS\x00"
ASSET_VERSION = 1

TRACKS_MODES = ("oracle", "file")
EMBEDDINGS_MODES = ("deterministic_stub", "ingest_file")
TEXT_MODES = ("deterministic_stub", "ingest_vocab_file")


@dataclass
class PipelineConfig:
    """All knobs of a build plus the query defaults, JSON round-trippable."""

    resolution: tuple[int, int] | None = None
    splat: SplatConfig = field(default_factory=SplatConfig)
    validation_enabled: bool = True
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    fusion_strategy: str = "attention"
    embedding_dim: int = 8
    tau_default: float = 0.2
    tracks_mode: str = "oracle"
    tracks_path: str | None = None
    tracks_granularity: int = 1
    embeddings_mode: str = "deterministic_stub"
    embeddings_path: str | None = None
    text_mode: str = "deterministic_stub"
    text_path: str | None = None
    manifest: str | None = None

    def validate(self) -> None:
        if self.tracks_mode not in TRACKS_MODES:
            raise AssetFormatError(f"tracks mode must be one of {TRACKS_MODES}")
        if self.embeddings_mode not in EMBEDDINGS_MODES:
            raise AssetFormatError(f"embeddings mode must be one of {EMBEDDINGS_MODES}")
        if self.text_mode not in TEXT_MODES:
            raise AssetFormatError(f"text mode must be one of {TEXT_MODES}")
        if self.tracks_mode == "file" and not self.tracks_path:
            raise AssetFormatError("tracks mode 'file' needs a tracks path")
        if self.embeddings_mode == "ingest_file" and not self.embeddings_path:
            raise AssetFormatError("embeddings mode 'ingest_file' needs a path")
        if self.text_mode == "ingest_vocab_file" and not self.text_path:
            raise AssetFormatError("text mode 'ingest_vocab_file' needs a path")
        if self.embedding_dim < 1:
            raise AssetFormatError("embedding_dim must be positive")
        self.validation.validate()

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution) if self.resolution else None,
            "splat": {
                "radius_px": self.splat.splat_radius_px,
                "depth_epsilon": self.splat.depth_epsilon,
            },
            "validation": {
                "enabled": self.validation_enabled,
                "connectivity": self.validation.connectivity,
                "min_component_area_px": self.validation.min_component_area_px,
            },
            "fusion_strategy": self.fusion_strategy,
            "embedding_dim": self.embedding_dim,
            "tau_default": self.tau_default,
            "tracks": {
                "mode": self.tracks_mode,
                "path": self.tracks_path,
                "granularity": self.tracks_granularity,
            },
            "embeddings": {"mode": self.embeddings_mode, "path": self.embeddings_path},
            "text": {"mode": self.text_mode, "path": self.text_path},
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "PipelineConfig":
        def resolve(p):
            if p is None or base_dir is None:
                return p
            return str((Path(base_dir) / p).resolve())

        splat = data.get("splat", {})
        val = data.get("validation", {})
        tracks = data.get("tracks", {})
        emb = data.get("embeddings", {})
        text = data.get("text", {})
        resolution = data.get("resolution")
        cfg = cls(
            resolution=tuple(resolution) if resolution else None,
            splat=SplatConfig(
                splat_radius_px=splat.get("radius_px", 2),
                depth_epsilon=splat.get("depth_epsilon", 1e-4),
            ),
            validation_enabled=bool(val.get("enabled", True)),
            validation=ValidationConfig(
                connectivity=val.get("connectivity", "eight"),
                min_component_area_px=val.get("min_component_area_px"),
            ),
            fusion_strategy=data.get("fusion_strategy", "attention"),
            embedding_dim=int(data.get("embedding_dim", 8)),
            tau_default=float(data.get("tau_default", 0.2)),
            tracks_mode=tracks.get("mode", "oracle"),
            tracks_path=resolve(tracks.get("path")),
            tracks_granularity=int(tracks.get("granularity", 1)),
            embeddings_mode=emb.get("mode", "deterministic_stub"),
            embeddings_path=resolve(emb.get("path")),
            text_mode=text.get("mode", "deterministic_stub"),
            text_path=resolve(text.get("path")),
            manifest=resolve(data.get("manifest")),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_dict(data, base_dir=path.parent)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class FusedAsset:
    """Prompt-independent precompute result: per-frame proposals + config."""

    config: dict
    frames: list[FrameProposalSet]
    timings: dict[str, float]
    content_hash: str = ""

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def embedding_dim(self) -> int:
        return int(self.config["embedding_dim"])


# ---------------------------------------------------------------------------
# varint helpers (LEB128, unsigned) for compact mask index storage


def _pack_varint(value: int) -> bytes:
    if value < 0:
        raise AssetFormatError("varint values must be nonnegative")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _unpack_varint(data: bytes, offset: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        if offset >= len(data):
            raise AssetFormatError("truncated varint")
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7
        if shift > 63:
            raise AssetFormatError("varint too long")


def _frame_block(frame: FrameProposalSet) -> bytes:
    out = bytearray()
    out += struct.pack("<II", frame.point_count, frame.num_proposals)
    for mask in frame.masks:
        idx = np.asarray(mask.point_indices, dtype=np.int64)
        out += struct.pack("<I", mask.track_id)
        out += _pack_varint(idx.size)
        if idx.size:
            out += _pack_varint(int(idx[0]))
            for gap in np.diff(idx):
                out += _pack_varint(int(gap))
    out += frame.embeddings.astype("<f4").tobytes()
    return bytes(out)


def _parse_frame_block(data: bytes, offset: int, t: int, dim: int) -> tuple[FrameProposalSet, int]:
    if offset + 8 > len(data):
        raise AssetFormatError("truncated frame block header")
    point_count, num_masks = struct.unpack_from("<II", data, offset)
    offset += 8
    masks = []
    for _ in range(num_masks):
        if offset + 4 > len(data):
            raise AssetFormatError("truncated mask record")
        (track_id,) = struct.unpack_from("<I", data, offset)
        offset += 4
        count, offset = _unpack_varint(data, offset)
        indices = np.empty(count, dtype=np.int64)
        cursor = 0
        for i in range(count):
            delta, offset = _unpack_varint(data, offset)
            cursor = delta if i == 0 else cursor + delta
            indices[i] = cursor
        masks.append(Mask3D(frame_index=t, point_indices=indices, track_id=track_id))
    emb_bytes = 4 * dim * num_masks
    if offset + emb_bytes > len(data):
        raise AssetFormatError("truncated embedding rows")
    embeddings = (
        np.frombuffer(data, dtype="<f4", count=dim * num_masks, offset=offset)
        .reshape(num_masks, dim)
        .copy()
    )
    offset += emb_bytes
    return (
        FrameProposalSet(
            frame_index=t,
            point_count=point_count,
            masks=masks,
            embeddings=embeddings,
        ),
        offset,
    )


def _config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _asset_payload(asset: FusedAsset) -> tuple[bytes, bytes]:
    """Returns (hashed payload, full file body before the digest trailer)."""
    cfg = _config_bytes(asset.config)
    blocks = b"".join(_frame_block(f) for f in asset.frames)
    hashed = cfg + blocks
    timings = json.dumps(asset.timings, sort_keys=True).encode("utf-8")
    body = (
        ASSET_MAGIC
        + struct.pack("<I", ASSET_VERSION)
        + struct.pack("<I", len(cfg))
        + cfg
        + struct.pack("<I", len(timings))
        + timings
        + struct.pack("<I", len(asset.frames))
        + blocks
    )
    return hashed, body


def asset_content_hash(asset: FusedAsset) -> str:
    hashed, _ = _asset_payload(asset)
    return hashlib.sha256(hashed).hexdigest()


def save_asset(asset: FusedAsset, path) -> str:
    hashed, body = _asset_payload(asset)
    digest = hashlib.sha256(hashed).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)
    asset.content_hash = digest.hex()
    return asset.content_hash


def load_asset(path) -> FusedAsset:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"fused asset not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[: len(ASSET_MAGIC)] != ASSET_MAGIC:
        raise AssetFormatError(f"{path}: not a fused asset file (bad magic)")
    offset = len(ASSET_MAGIC)
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != ASSET_VERSION:
        raise AssetFormatError(f"{path}: unsupported asset version {version}")
    (cfg_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    cfg_bytes = data[offset : offset + cfg_len]
    offset += cfg_len
    (tim_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    timings = json.loads(data[offset : offset + tim_len].decode("utf-8"))
    offset += tim_len
    (num_frames,) = struct.unpack_from("<I", data, offset)
    offset += 4
    config = json.loads(cfg_bytes.decode("utf-8"))
    dim = int(config["embedding_dim"])
    frames = []
    block_start = offset
    for t in range(num_frames):
        frame, offset = _parse_frame_block(data, offset, t, dim)
        frames.append(frame)
    if offset + 32 != len(data):
        raise AssetFormatError(f"{path}: {len(data) - offset} trailing bytes, expected 32")
    stored = data[offset:]
    recomputed = hashlib.sha256(cfg_bytes + data[block_start:offset]).digest()
    if stored != recomputed:
        raise AssetFormatError(f"{path}: content hash mismatch")
    return FusedAsset(
        config=config,
        frames=frames,
        timings=timings,
        content_hash=stored.hex(),
    )


# ---------------------------------------------------------------------------
# build and query


def build_asset(manifest_path, config: PipelineConfig, out_path=None) -> FusedAsset:
    """Run all precompute stages and optionally persist the result.

    Any stage failure is re-raised as a build error naming the stage.
    """
    config.validate()
    timings: dict[str, float] = {}
    total_start = time.perf_counter()

    def run(stage, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except BuildError:
            raise
        except MissingEmbeddingError as exc:
            raise BuildError("embedding", str(exc)) from exc
        except (Ov4dError, OSError, ValueError, KeyError) as exc:
            raise BuildError(stage, str(exc)) from exc
        timings[stage] = time.perf_counter() - start
        return result

    manifest_path = str(Path(manifest_path).resolve())

    def render():
        asset = load_sequence(manifest_path, splat_config=config.splat)
        if config.resolution and tuple(config.resolution) != asset.resolution:
            raise AssetFormatError(
                f"configured resolution {tuple(config.resolution)} != "
                f"scene resolution {asset.resolution}"
            )
        return asset

    asset = run("render", render)

    def tracking():
        if config.tracks_mode == "oracle":
            return oracle_track_set(
                asset,
                granularity=config.tracks_granularity,
                splat_config=config.splat,
            )
        return ingest_tracks(config.tracks_path, asset)

    track_set = run("tracking", tracking)

    if config.validation_enabled:
        track_set = run(
            "validation",
            lambda: validate_and_augment(track_set, asset, config.validation),
        )
    else:
        timings["validation"] = 0.0

    def make_provider():
        if config.embeddings_mode == "deterministic_stub":
            return StubEmbeddingProvider(asset, dim=config.embedding_dim)
        return FileEmbeddingProvider(config.embeddings_path)

    provider = run("embedding", make_provider)

    def fuse():
        fused = {}
        for track in track_set.tracks:
            bank = build_memory_bank(track, asset, provider)
            fused[track.track_id] = fuse_track_embeddings(bank, config.fusion_strategy)
        return fused

    fused = run("fusion", fuse)

    frames = run(
        "assembly",
        lambda: [
            assemble_frame(t, track_set, fused, asset)
            for t in range(asset.num_frames)
        ],
    )

    snapshot = config.to_dict()
    snapshot["manifest"] = manifest_path
    h, w = asset.resolution
    snapshot["derived"] = {
        "num_frames": asset.num_frames,
        "num_views": asset.num_views,
        "resolution": [h, w],
        "point_counts": [f.point_count for f in asset.frames],
    }
    fused_asset = FusedAsset(config=snapshot, frames=frames, timings=timings)
    fused_asset.content_hash = asset_content_hash(fused_asset)
    timings["total"] = time.perf_counter() - total_start
    if out_path is not None:
        run("save", lambda: save_asset(fused_asset, out_path))
    return fused_asset


def make_text_encoder(config: dict):
    if config["text"]["mode"] == "deterministic_stub":
        return StubTextEncoder(dim=int(config["embedding_dim"]))
    return VocabFileTextEncoder(config["text"]["path"])


def query(asset: FusedAsset, prompts: list[str], tau: float | None = None):
    """Label every frame's points for the given prompts.

    Touches only text encoding, logit scoring, equalization, and segmentation;
    returns (per-frame label fields, wall-clock milliseconds).
    """
    counters.increment("query")
    start = time.perf_counter()
    if tau is None:
        tau = float(asset.config["tau_default"])
    encoder = make_text_encoder(asset.config)
    prompt_set = embed_prompts(encoder, prompts)
    fields = []
    for frame in asset.frames:
        logits = compute_logits(frame, prompt_set)
        if frame.num_proposals:
            logits = equalize_logits(logits)
        fields.append(segment_frame(frame, logits, tau))
    query_ms = (time.perf_counter() - start) * 1000.0
    return fields, query_ms
