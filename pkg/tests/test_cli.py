"""Command-line tests: the fixture -> build -> query -> eval chain and errors."""

from __future__ import annotations

import re
import subprocess
import sys

import numpy as np
import pytest

from ov4d.classify import read_label_file
from ov4d.cli import main
from ov4d.pipeline import load_asset, query


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One mini scenario built end to end through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene"
    asset = root / "scene.ov4d"
    assert main(["fixture", "--scenario", "mini", "--out", str(scene)]) == 0
    assert main([
        "build",
        "--manifest", str(scene / "manifest.json"),
        "--config", str(scene / "config.json"),
        "--out", str(asset),
    ]) == 0
    return root


def test_fixture_command_emits_all_files(workdir):
    scene = workdir / "scene"
    for name in (
        "manifest.json", "config.json", "tracks.json", "embeddings.bin",
        "vocab.bin", "gt_labels.bin", "gt_labels.bin.json",
        "gt_silhouettes.json", "fixture.json",
    ):
        assert (scene / name).is_file(), name
    assert (scene / "frames" / "frame_000.ply").is_file()


def test_build_command_output_and_artifact(workdir, capsys):
    scene = workdir / "scene"
    out = workdir / "rebuild.ov4d"
    code = main([
        "build",
        "--manifest", str(scene / "manifest.json"),
        "--config", str(scene / "config.json"),
        "--out", str(out),
    ])
    captured = capsys.readouterr()
    assert code == 0
    assert re.search(r"^render\s+[\d.]+ ms$", captured.out, re.M)
    assert re.search(r"^total\s+[\d.]+ ms$", captured.out, re.M)
    assert re.search(r"^content hash [0-9a-f]{64}$", captured.out, re.M)
    asset = load_asset(out)
    assert asset.num_frames == 2
    # same scene, same config -> same content as the fixture-stage build
    assert asset.content_hash == load_asset(workdir / "scene.ov4d").content_hash


def test_query_command_writes_label_file(workdir, capsys):
    out = workdir / "pred.bin"
    code = main([
        "query",
        "--asset", str(workdir / "scene.ov4d"),
        "--prompts", "part_a, part_b",
        "--out", str(out),
    ])
    captured = capsys.readouterr()
    assert code == 0
    assert "query took" in captured.out
    assert re.search(r"^frame 0: label counts \[\d+, \d+, \d+\]$", captured.out, re.M)
    frames, sidecar = read_label_file(out)
    assert sidecar["classes"] == ["part_a", "part_b"]
    direct_fields, _ = query(load_asset(workdir / "scene.ov4d"), ["part_a", "part_b"])
    for arr, field in zip(frames, direct_fields):
        assert np.array_equal(arr, field.labels)


def _eval_rows(output):
    rows = {}
    for line in output.splitlines():
        m = re.match(r"^(\S+)\s+([\d.]+)\s+([\d.]+)\s+([\d.]+)$", line)
        if m and m.group(1) != "frame":
            rows[m.group(1)] = tuple(float(x) for x in m.groups()[1:])
    return rows


def test_eval_command_reports_perfect_scores(workdir, capsys):
    pred = workdir / "pred.bin"
    if not pred.is_file():
        main([
            "query",
            "--asset", str(workdir / "scene.ov4d"),
            "--prompts", "part_a,part_b",
            "--out", str(pred),
        ])
        capsys.readouterr()
    code = main(["eval", "--pred", str(pred), "--gt", str(workdir / "scene" / "gt_labels.bin")])
    captured = capsys.readouterr()
    assert code == 0
    rows = _eval_rows(captured.out)
    assert set(rows) == {"0", "1", "pooled", "avg"}
    for key, (oa, macc, miou) in rows.items():
        assert oa == pytest.approx(1.0), key
        assert macc == pytest.approx(1.0), key
        assert miou == pytest.approx(1.0), key


def test_eval_aligns_classes_by_name(workdir, capsys):
    pred = workdir / "swapped.bin"
    main([
        "query",
        "--asset", str(workdir / "scene.ov4d"),
        "--prompts", "part_b,part_a",   # reversed prompt order
        "--out", str(pred),
    ])
    capsys.readouterr()
    code = main(["eval", "--pred", str(pred), "--gt", str(workdir / "scene" / "gt_labels.bin")])
    captured = capsys.readouterr()
    assert code == 0
    rows = _eval_rows(captured.out)
    assert rows["pooled"] == pytest.approx((1.0, 1.0, 1.0))


def test_eval_rejects_unalignable_classes(workdir, capsys):
    pred = workdir / "partial.bin"
    main([
        "query",
        "--asset", str(workdir / "scene.ov4d"),
        "--prompts", "part_a,mystery_prompt",
        "--out", str(pred),
    ])
    capsys.readouterr()
    code = main(["eval", "--pred", str(pred), "--gt", str(workdir / "scene" / "gt_labels.bin")])
    captured = capsys.readouterr()
    assert code == 2
    assert "error:" in captured.err
    assert "part_b" in captured.err


def test_cli_reports_domain_errors_with_exit_code_2(workdir, capsys):
    code = main(["query", "--asset", str(workdir / "missing.ov4d"),
                 "--prompts", "a", "--out", str(workdir / "x.bin")])
    captured = capsys.readouterr()
    assert code == 2
    assert captured.err.startswith("error:")
    code = main(["fixture", "--scenario", "not_a_scenario", "--out", str(workdir / "nope")])
    captured = capsys.readouterr()
    assert code == 2
    assert "unknown scenario" in captured.err


def test_serve_rejects_malformed_bind(workdir, capsys):
    code = main(["serve", "--asset", str(workdir / "scene.ov4d"), "--bind", "nonsense"])
    captured = capsys.readouterr()
    assert code == 2
    assert "HOST:PORT" in captured.err


def test_bad_arguments_exit_via_argparse(capsys):
    with pytest.raises(SystemExit):
        main(["no_such_command"])
    capsys.readouterr()
    with pytest.raises(SystemExit):
        main(["build"])  # missing required arguments
    capsys.readouterr()


def test_console_script_is_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "ov4d.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "build" in proc.stdout and "query" in proc.stdout
