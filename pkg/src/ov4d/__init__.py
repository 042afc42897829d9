"""Open-vocabulary 4D human-part segmentation over dynamic point clouds.

Precomputes prompt-independent per-frame mask proposals and embeddings from a
multi-view rendering of each frame, then answers text-prompt queries in
milliseconds by scoring those embeddings against encoded prompts.
"""

from .classify import (
    LabelField,
    PromptSet,
    StubTextEncoder,
    VocabFileTextEncoder,
    compute_logits,
    embed_prompts,
    equalize_logits,
    read_label_file,
    segment_frame,
    write_label_file,
)
from .errors import (
    AssetFormatError,
    BehindCameraError,
    BuildError,
    LoadError,
    MissingEmbeddingError,
    OracleUnavailableError,
    Ov4dError,
    SceneValidationError,
    TrackFormatError,
    UnknownPromptError,
)
from .fusion import (
    FileEmbeddingProvider,
    FrameProposalSet,
    Mask3D,
    MemoryBank,
    StubEmbeddingProvider,
    assemble_frame,
    build_memory_bank,
    embed_mask,
    fuse_sequence,
    fuse_track_embeddings,
    memory_attention,
    unproject_mask,
)
from .metrics import EvalResult, confusion, evaluate_labels, metrics
from .pipeline import (
    FusedAsset,
    PipelineConfig,
    build_asset,
    load_asset,
    query,
    save_asset,
)
from .render import SplatConfig, render_view, splat_coverage
from .scene import (
    Camera,
    PointCloudFrame,
    RenderedView,
    SequenceAsset,
    load_sequence,
    read_ply,
    save_sequence,
    write_ply,
)
from .tracks import (
    MaskTrack,
    TrackSet,
    export_tracks,
    ingest_tracks,
    oracle_initial_proposals,
    oracle_propagate,
    oracle_track_set,
    rle_decode,
    rle_encode,
)
from .validation import ValidationConfig, validate_and_augment

__version__ = "0.1.0"
