import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptseg.clicks import BACKGROUND, FOREGROUND, first_click, interact, next_click
from promptseg.geometry import PointCloud, normalize_unit_sphere
from promptseg.model import ModelConfig, PromptSegModel

from helpers import brute_first_click, brute_next_click, random_cloud


def _line(n):
    pts = np.zeros((n, 3), dtype=np.float32)
    pts[:, 0] = np.arange(n)
    return pts


def test_first_click_line_middle():
    gt = np.array([False, True, True, True, False])
    idx, label = first_click(gt, _line(5))
    assert idx == 2 and label == FOREGROUND


def test_first_click_all_foreground_nearest_centroid():
    pts = _line(4)  # centroid x = 1.5; ties broken toward index 1
    idx, label = first_click(np.ones(4, dtype=bool), pts)
    assert idx == 1 and label == FOREGROUND


def test_first_click_empty_foreground():
    with pytest.raises(ValueError):
        first_click(np.zeros(3, dtype=bool), _line(3))


def test_first_click_matches_brute(rng):
    for _ in range(30):
        n = int(rng.integers(5, 100))
        cloud = random_cloud(rng, n)
        gt = rng.random(n) < rng.uniform(0.1, 0.9)
        if not gt.any():
            gt[0] = True
        idx, _ = first_click(gt, cloud.points)
        assert idx == brute_first_click(gt, cloud.points)


def test_next_click_no_false_positives():
    gt = np.array([True, True, False, False])
    pred = np.array([True, False, False, False])
    idx, label = next_click(gt, pred, _line(4))
    assert idx == 1 and label == FOREGROUND


def test_next_click_no_false_negatives():
    gt = np.array([True, False, False, False])
    pred = np.array([True, True, False, False])
    idx, label = next_click(gt, pred, _line(4))
    assert idx == 1 and label == BACKGROUND


def test_next_click_converged_errors():
    gt = np.array([True, False])
    with pytest.raises(ValueError):
        next_click(gt, gt, _line(2))


def test_next_click_matches_brute(rng):
    for _ in range(40):
        n = int(rng.integers(5, 150))
        cloud = random_cloud(rng, n)
        gt = rng.random(n) < 0.5
        pred = rng.random(n) < 0.5
        if np.array_equal(gt, pred):
            pred[0] = ~pred[0]
        got = next_click(gt, pred, cloud.points)
        want = brute_next_click(gt, pred, cloud.points)
        assert got == want


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_next_click_selects_and_corrects_error(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    cloud = random_cloud(rng, n)
    gt = rng.random(n) < 0.5
    pred = rng.random(n) < 0.5
    if np.array_equal(gt, pred):
        pred[0] = ~pred[0]
    idx, label = next_click(gt, pred, cloud.points)
    assert pred[idx] != gt[idx]  # always an error point
    assert label == (FOREGROUND if gt[idx] else BACKGROUND)  # label corrects it


def test_next_click_deterministic(rng):
    cloud = random_cloud(rng, 50)
    gt = np.zeros(50, dtype=bool)
    gt[:20] = True
    pred = np.zeros(50, dtype=bool)
    pred[10:30] = True
    assert next_click(gt, pred, cloud.points) == next_click(gt, pred, cloud.points)


@pytest.fixture(scope="module")
def tiny_model():
    return PromptSegModel(ModelConfig(n_patches=8, patch_size=4, d_patch=16, d_model=16, d_classifier=8, depth=1, heads=2, seed=1))


def test_interact_full_cloud_mask(tiny_model):
    rng = np.random.default_rng(3)
    cloud = normalize_unit_sphere(PointCloud(points=rng.standard_normal((40, 3)).astype(np.float32)))[0]
    ious = interact(tiny_model, cloud, np.ones(40, dtype=bool), k=1)
    assert len(ious) == 1
    assert 0.0 <= ious[0] <= 1.0


def test_interact_returns_k_entries(tiny_model):
    rng = np.random.default_rng(4)
    cloud = normalize_unit_sphere(PointCloud(points=rng.standard_normal((40, 3)).astype(np.float32)))[0]
    gt = np.zeros(40, dtype=bool)
    gt[:15] = True
    ious = interact(tiny_model, cloud, gt, k=4)
    assert len(ious) == 4
    assert all(0.0 <= v <= 1.0 for v in ious)


def test_interact_requires_positive_k(tiny_model):
    cloud = PointCloud(points=np.random.default_rng(0).standard_normal((10, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        interact(tiny_model, cloud, np.ones(10, dtype=bool), k=0)
