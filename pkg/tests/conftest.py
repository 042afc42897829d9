"""Shared fixtures: session-cached scenario directories and built assets."""

from __future__ import annotations

import numpy as np
import pytest

from ov4d.classify import read_label_file
from ov4d.fixtures import generate_scenario
from ov4d.instrumentation import counters
from ov4d.metrics import confusion, metrics
from ov4d.pipeline import PipelineConfig, build_asset


@pytest.fixture(scope="session")
def scenario(tmp_path_factory):
    """scenario(name) -> (directory, metadata); generated once per session."""
    root = tmp_path_factory.mktemp("scenarios")
    cache = {}

    def get(name):
        if name not in cache:
            out = root / name
            meta = generate_scenario(name, out)
            cache[name] = (out, meta)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def loaded(scenario):
    """loaded(name) -> rendered SequenceAsset for a scenario, cached."""
    from ov4d.scene import load_sequence

    cache = {}

    def get(name):
        if name not in cache:
            directory, _ = scenario(name)
            cache[name] = load_sequence(directory / "manifest.json")
        return cache[name]

    return get


@pytest.fixture(scope="session")
def built(scenario):
    """built(name, **config overrides) -> FusedAsset, cached per combination."""
    cache = {}

    def get(name, **overrides):
        key = (name, tuple(sorted(overrides.items())))
        if key not in cache:
            directory, _ = scenario(name)
            config = PipelineConfig.load(directory / "config.json")
            for attr, value in overrides.items():
                setattr(config, attr, value)
            cache[key] = build_asset(directory / "manifest.json", config)
        return cache[key]

    return get


@pytest.fixture()
def fresh_counters():
    counters.reset()
    yield counters
    counters.reset()


def pooled_eval(fields, gt_path, num_classes):
    """Pooled metrics of predicted label fields against a ground-truth file."""
    gt_frames, _ = read_label_file(gt_path)
    assert len(gt_frames) == len(fields)
    total = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    for lf, gt in zip(fields, gt_frames):
        cm = confusion(lf.labels, gt, num_classes)
        total[: cm.shape[0], : cm.shape[1]] += cm
    return metrics(total)
