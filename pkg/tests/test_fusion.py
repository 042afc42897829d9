"""Fusion tests: memory banks, attention, strategies, unprojection, assembly."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ov4d.errors import AssetFormatError, MissingEmbeddingError, TrackFormatError
from ov4d.fusion import (
    FUSION_STRATEGIES,
    FileEmbeddingProvider,
    FrameProposalSet,
    Mask3D,
    MaskEmbedding,
    MemoryBank,
    StubEmbeddingProvider,
    assemble_frame,
    build_memory_bank,
    embed_mask,
    fuse_sequence,
    fuse_track_embeddings,
    memory_attention,
    read_embedding_file,
    unproject_mask,
    write_embedding_file,
)
from ov4d.render import SplatConfig, render_view
from ov4d.scene import Camera, PointCloudFrame, SequenceAsset
from ov4d.tracks import oracle_track_set
from ov4d.stub_vectors import cell_vector, class_vector

from test_tracks import plate_asset


def unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


def bank_of(matrix, track_id=0):
    cells = [(i, 0) for i in range(matrix.shape[0])]
    return MemoryBank(track_id=track_id, cells=cells, matrix=np.asarray(matrix, np.float32))


# ---------------------------------------------------------------------------
# Memory attention


def test_attention_single_row_is_identity():
    rng = np.random.default_rng(0)
    m = unit_rows(rng, 1, 8)
    out = memory_attention(bank_of(m))
    assert np.array_equal(out, m)


def test_attention_identical_rows_stay_put():
    row = unit_rows(np.random.default_rng(1), 1, 8)[0]
    m = np.stack([row, row, row])
    out = memory_attention(bank_of(m))
    assert np.allclose(out, m, atol=1e-7)


def test_attention_orthonormal_pair_mixes_with_known_weights():
    m = np.eye(2, dtype=np.float32)
    out = memory_attention(bank_of(m))
    w_self = math.e / (math.e + 1.0)   # 0.731058...
    w_other = 1.0 / (math.e + 1.0)     # 0.268941...
    expect = np.array([[w_self, w_other], [w_other, w_self]])
    assert np.allclose(out, expect, atol=1e-6)


def test_attention_matches_double_loop_oracle():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        d = int(rng.integers(2, 17))
        m = unit_rows(rng, n, d)
        out = memory_attention(bank_of(m))
        q = m.astype(np.float64)
        for i in range(n):
            logits = [float(q[i] @ q[j]) for j in range(n)]
            mx = max(logits)
            ws = [math.exp(x - mx) for x in logits]
            z = sum(ws)
            ref = np.zeros(d)
            for j in range(n):
                ref += (ws[j] / z) * q[j]
            assert np.allclose(out[i], ref, atol=1e-6)


def test_attention_rows_are_convex_combinations():
    rng = np.random.default_rng(8)
    m = unit_rows(rng, 12, 6)
    out = memory_attention(bank_of(m))
    # convex mixing of unit rows can only shrink the norm
    norms = np.linalg.norm(out.astype(np.float64), axis=1)
    assert np.all(norms <= 1.0 + 1e-6)
    assert np.all(norms > 0.0)


def test_attention_is_permutation_equivariant():
    rng = np.random.default_rng(9)
    m = unit_rows(rng, 10, 8)
    perm = rng.permutation(10)
    out = memory_attention(bank_of(m))
    out_perm = memory_attention(bank_of(m[perm]))
    assert np.allclose(out_perm, out[perm], atol=1e-6)


def test_attention_pulls_outlier_toward_cluster():
    # Five nearly identical rows plus one flipped row: after attention the
    # flipped row moves strictly closer to the cluster mean direction.
    center = class_vector("part_a", 8)
    rows = [cell_vector("part_a", t, 0, 8) for t in range(5)]
    outlier = class_vector("part_b", 8)
    m = np.stack(rows + [outlier]).astype(np.float32)
    out = memory_attention(bank_of(m))
    before = float(outlier @ center)
    after_vec = out[5].astype(np.float64)
    after = float(after_vec @ center / np.linalg.norm(after_vec))
    assert after > before


def test_attention_empty_bank_raises():
    empty = MemoryBank(track_id=3, cells=[], matrix=np.zeros((0, 8), np.float32))
    with pytest.raises(AssetFormatError):
        memory_attention(empty)


# ---------------------------------------------------------------------------
# Fusion strategies


def test_fusion_individual_keeps_rows():
    rng = np.random.default_rng(10)
    m = unit_rows(rng, 4, 8)
    bank = bank_of(m)
    fused = fuse_track_embeddings(bank, "individual")
    assert set(fused) == set(bank.cells)
    for i, cell in enumerate(bank.cells):
        assert np.array_equal(fused[cell], m[i])


def test_fusion_average_mixes_rows():
    m = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    fused = fuse_track_embeddings(bank_of(m), "average")
    for cell in [(0, 0), (1, 0)]:
        assert np.allclose(fused[cell], [0.5, 0.5])


def test_fusion_attention_matches_memory_attention():
    rng = np.random.default_rng(11)
    m = unit_rows(rng, 6, 8)
    bank = bank_of(m)
    fused = fuse_track_embeddings(bank, "attention")
    expect = memory_attention(bank)
    for i, cell in enumerate(bank.cells):
        assert np.array_equal(fused[cell], expect[i])


def test_fusion_unknown_strategy_rejected():
    with pytest.raises(AssetFormatError):
        fuse_track_embeddings(bank_of(np.eye(2, dtype=np.float32)), "majority")
    assert FUSION_STRATEGIES == ("individual", "average", "attention")


def test_fusion_empty_bank_yields_empty_map(fresh_counters):
    empty = MemoryBank(track_id=0, cells=[], matrix=np.zeros((0, 8), np.float32))
    for strategy in FUSION_STRATEGIES:
        assert fuse_track_embeddings(empty, strategy) == {}
    assert fresh_counters.snapshot()["fuse"] == 3


# ---------------------------------------------------------------------------
# Stub and file providers


def test_stub_provider_is_deterministic_and_part_keyed():
    asset = plate_asset()
    provider = StubEmbeddingProvider(asset, dim=8)
    view = asset.view(0, 0)
    labels = asset.frames[0].part_labels
    mask_a = np.zeros(asset.resolution, dtype=bool)
    mask_a[np.isin(view.pixel_to_point, np.nonzero(labels == 0)[0]) & view.silhouette] = True
    mask_b = np.zeros(asset.resolution, dtype=bool)
    mask_b[np.isin(view.pixel_to_point, np.nonzero(labels == 1)[0]) & view.silhouette] = True

    va1 = provider.embed(view, mask_a, 0)
    va2 = provider.embed(view, mask_a, 5)  # track id does not matter to the stub
    vb = provider.embed(view, mask_b, 1)
    assert np.array_equal(va1, va2)
    cos_ab = float(va1 @ vb / (np.linalg.norm(va1) * np.linalg.norm(vb)))
    assert abs(cos_ab) < 0.5
    # same part at another cell: near the same class center
    other = provider.embed(asset.view(1, 0), mask_a, 0)
    cos_aa = float(va1 @ other / (np.linalg.norm(va1) * np.linalg.norm(other)))
    assert cos_aa > 0.9
    assert provider.has(0, 0, 0) is False


def test_stub_provider_background_mask_fallback():
    asset = plate_asset()
    provider = StubEmbeddingProvider(asset, dim=8)
    view = asset.view(0, 0)
    bg = ~view.silhouette
    bg_mask = np.zeros(asset.resolution, dtype=bool)
    bg_mask[np.argwhere(bg)[0][0], np.argwhere(bg)[0][1]] = True
    v1 = provider.embed(view, bg_mask, 0)
    v2 = provider.embed(view, bg_mask, 0)
    assert np.array_equal(v1, v2)
    assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-6)


def test_stub_provider_requires_fixture():
    asset = plate_asset()
    bare_frames = [PointCloudFrame(f.frame_index, f.points, f.colors) for f in asset.frames]
    bare = SequenceAsset(bare_frames, asset.cameras, asset.rendered, part_names=None)
    with pytest.raises(AssetFormatError):
        StubEmbeddingProvider(bare)


def test_embedding_file_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    vectors = {
        (0, 0, 0): rng.standard_normal(8).astype(np.float32),
        (0, 1, 0): rng.standard_normal(8).astype(np.float32),
        (3, 0, 1): rng.standard_normal(8).astype(np.float32),
    }
    path = tmp_path / "emb.bin"
    write_embedding_file(path, vectors, dim=8)
    back, dim = read_embedding_file(path)
    assert dim == 8
    assert set(back) == set(vectors)
    for key in vectors:
        assert np.array_equal(back[key], vectors[key])
    # write(read(f)) reproduces the file byte for byte
    second = tmp_path / "emb2.bin"
    write_embedding_file(second, back, dim=dim)
    assert second.read_bytes() == path.read_bytes()


def test_embedding_file_rejects_corruption(tmp_path):
    path = tmp_path / "emb.bin"
    write_embedding_file(path, {(0, 0, 0): np.ones(4, np.float32)}, dim=4)
    data = bytearray(path.read_bytes())
    bad_magic = tmp_path / "bad_magic.bin"
    bad_magic.write_bytes(b"XXXXXXXX" + bytes(data[8:]))
    with pytest.raises(AssetFormatError):
        read_embedding_file(bad_magic)
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(bytes(data[:-3]))
    with pytest.raises(AssetFormatError):
        read_embedding_file(truncated)
    with pytest.raises(AssetFormatError):
        write_embedding_file(tmp_path / "x.bin", {(0, 0, 0): np.ones(3, np.float32)}, dim=4)


def test_file_provider_lookup_and_missing_key(tmp_path):
    asset = plate_asset()
    vec = np.full(8, 0.5, dtype=np.float32)
    path = tmp_path / "emb.bin"
    write_embedding_file(path, {(0, 0, 0): vec}, dim=8)
    provider = FileEmbeddingProvider(path)
    assert provider.dim == 8
    assert provider.has(0, 0, 0)
    assert not provider.has(1, 0, 0)
    view = asset.view(0, 0)
    got = provider.embed(view, np.zeros(asset.resolution, bool), 0)
    assert np.array_equal(got, vec)
    with pytest.raises(MissingEmbeddingError):
        provider.embed(asset.view(1, 0), np.zeros(asset.resolution, bool), 0)


# ---------------------------------------------------------------------------
# embed_mask / build_memory_bank


def test_embed_mask_normalizes_and_counts(tmp_path, fresh_counters):
    asset = plate_asset()
    # store a deliberately non-unit vector; embed_mask must normalize it
    raw = np.full(8, 2.0, dtype=np.float32)
    path = tmp_path / "emb.bin"
    write_embedding_file(path, {(0, 0, 0): raw}, dim=8)
    provider = FileEmbeddingProvider(path)
    emb = embed_mask(provider, asset.view(0, 0), asset.view(0, 0).silhouette, 0)
    assert np.linalg.norm(emb.vector) == pytest.approx(1.0, abs=1e-6)
    assert (emb.track_id, emb.frame_index, emb.view_index) == (0, 0, 0)
    assert fresh_counters.snapshot()["embed"] == 1
    with pytest.raises(TrackFormatError):
        embed_mask(provider, asset.view(0, 0), np.zeros((3, 3), bool), 0)


def test_mask_embedding_validates_unit_norm():
    bad = MaskEmbedding(vector=np.full(8, 0.5, np.float32) * 3, track_id=0, frame_index=0, view_index=0)
    with pytest.raises(AssetFormatError):
        bad.validate()


def test_memory_bank_rows_follow_nonempty_cells():
    asset = plate_asset()
    ts = oracle_track_set(asset, lose_cells={0: {(1, 0)}})
    provider = StubEmbeddingProvider(asset, dim=8)
    bank0 = build_memory_bank(ts.tracks[0], asset, provider)
    bank1 = build_memory_bank(ts.tracks[1], asset, provider)
    assert bank0.cells == [(0, 0)]       # the zeroed cell contributes no row
    assert bank1.cells == [(0, 0), (1, 0)]
    assert bank0.matrix.shape == (1, 8)
    assert bank1.matrix.shape == (2, 8)
    norms = np.linalg.norm(bank1.matrix, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-5)
    again = build_memory_bank(ts.tracks[1], asset, provider)
    assert np.array_equal(again.matrix, bank1.matrix)


def test_memory_bank_includes_stored_rows_for_empty_cells(tmp_path):
    asset = plate_asset()
    ts = oracle_track_set(asset, lose_cells={0: {(1, 0)}})
    unit = np.zeros(8, np.float32)
    unit[0] = 1.0
    vectors = {
        (0, 0, 0): StubEmbeddingProvider(asset).embed(asset.view(0, 0), ts.tracks[0].cells[(0, 0)], 0).astype(np.float32),
        (0, 1, 0): unit,  # stored vector for the lost cell
    }
    path = tmp_path / "emb.bin"
    write_embedding_file(path, vectors, dim=8)
    bank = build_memory_bank(ts.tracks[0], asset, FileEmbeddingProvider(path))
    assert bank.cells == [(0, 0), (1, 0)]
    assert np.array_equal(bank.matrix[1], unit)


def test_memory_bank_missing_file_key_for_nonempty_cell(tmp_path):
    asset = plate_asset()
    ts = oracle_track_set(asset)
    path = tmp_path / "emb.bin"
    write_embedding_file(path, {(0, 0, 0): np.ones(8, np.float32)}, dim=8)
    with pytest.raises(MissingEmbeddingError):
        build_memory_bank(ts.tracks[0], asset, FileEmbeddingProvider(path))


# ---------------------------------------------------------------------------
# Unprojection


def test_unproject_full_silhouette_gives_all_visible_points():
    asset = plate_asset()
    view = asset.view(0, 0)
    m3 = unproject_mask(view.silhouette, view, track_id=4)
    visible = np.unique(view.pixel_to_point[view.silhouette])
    assert np.array_equal(m3.point_indices, visible)
    assert m3.point_indices.dtype == np.int64
    assert m3.track_id == 4 and m3.frame_index == 0


def test_unproject_empty_mask():
    asset = plate_asset()
    view = asset.view(0, 0)
    m3 = unproject_mask(np.zeros(asset.resolution, bool), view, 0)
    assert m3.point_indices.size == 0


def test_unproject_sees_only_the_front_point():
    cam = Camera(0, (100.0, 100.0), (16.0, 16.0), np.eye(3), np.zeros(3), (32, 32))
    pts = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], dtype=np.float32)
    frame = PointCloudFrame(0, pts, np.full((2, 3), 0.5, np.float32))
    view = render_view(frame, cam, SplatConfig(splat_radius_px=1))
    mask = np.ones((32, 32), dtype=bool)
    m3 = unproject_mask(mask, view, 0)
    assert np.array_equal(m3.point_indices, [0])  # the farther point is occluded


def test_unproject_union_property():
    asset = plate_asset()
    view = asset.view(0, 0)
    rng = np.random.default_rng(13)
    a = rng.random(asset.resolution) < 0.3
    b = rng.random(asset.resolution) < 0.3
    ua = unproject_mask(a, view, 0).point_indices
    ub = unproject_mask(b, view, 0).point_indices
    uab = unproject_mask(a | b, view, 0).point_indices
    assert np.array_equal(uab, np.union1d(ua, ub))
    with pytest.raises(TrackFormatError):
        unproject_mask(np.zeros((3, 3), bool), view, 0)


# ---------------------------------------------------------------------------
# Frame assembly


def two_view_plate_asset():
    base = plate_asset()
    cam1 = Camera(
        view_index=1,
        focal=(50.0, 50.0),
        principal=(32.0, 32.0),
        rotation=np.eye(3),
        translation=np.array([0.0, 0.0, 0.5]),
        resolution=(64, 64),
    )
    cameras = [base.cameras[0], cam1]
    rendered = [
        [render_view(f, cam, SplatConfig()) for cam in cameras] for f in base.frames
    ]
    asset = SequenceAsset(base.frames, cameras, rendered, part_names=base.part_names)
    asset.validate()
    asset.freeze()
    return asset


def test_assemble_frame_orders_by_track_then_view():
    asset = two_view_plate_asset()
    ts = oracle_track_set(asset)
    provider = StubEmbeddingProvider(asset, dim=8)
    frames = fuse_sequence(ts, asset, provider, "individual")
    assert len(frames) == 2
    fp = frames[0]
    assert fp.num_proposals == 4
    assert [m.track_id for m in fp.masks] == [0, 0, 1, 1]
    assert fp.point_count == asset.frames[0].point_count
    assert fp.embeddings.shape == (4, 8)
    mat = fp.mask_matrix()
    assert mat.shape == (50, 4)
    for col, mask3 in enumerate(fp.masks):
        assert np.array_equal(np.nonzero(mat[:, col])[0], mask3.point_indices)


def test_assemble_frame_skips_all_zero_tracks():
    asset = plate_asset()
    ts = oracle_track_set(asset, lose_cells={1: {(0, 0)}})
    provider = StubEmbeddingProvider(asset, dim=8)
    frames = fuse_sequence(ts, asset, provider, "average")
    assert frames[0].num_proposals == 1
    assert [m.track_id for m in frames[0].masks] == [0]
    assert frames[1].num_proposals == 2


def test_assemble_frame_missing_fused_entry_raises():
    asset = plate_asset()
    ts = oracle_track_set(asset)
    with pytest.raises(MissingEmbeddingError):
        assemble_frame(0, ts, {0: {}, 1: {}}, asset)


def test_frame_proposal_set_row_count_checked():
    with pytest.raises(AssetFormatError):
        FrameProposalSet(
            frame_index=0,
            point_count=10,
            masks=[Mask3D(0, np.array([1], np.int64), 0)],
            embeddings=np.zeros((2, 8), np.float32),
        )


def test_fuse_sequence_strategy_changes_embeddings_not_masks():
    asset = plate_asset()
    ts = oracle_track_set(asset)
    provider = StubEmbeddingProvider(asset, dim=8)
    indiv = fuse_sequence(ts, asset, provider, "individual")
    avg = fuse_sequence(ts, asset, provider, "average")
    for fa, fb in zip(indiv, avg):
        assert [m.track_id for m in fa.masks] == [m.track_id for m in fb.masks]
        for ma, mb in zip(fa.masks, fb.masks):
            assert np.array_equal(ma.point_indices, mb.point_indices)
    # averaging changes at least one embedding row (cells differ slightly)
    assert not np.array_equal(indiv[0].embeddings, avg[0].embeddings)
