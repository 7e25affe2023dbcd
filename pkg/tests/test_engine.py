import numpy as np
import pytest

from promptseg.engine import (
    GtPartOracle,
    PseudoLabelConfig,
    RefineResult,
    generate_pseudo_labels,
    refine_first_view,
    refine_other_view,
    sample_error_prompt,
)
from promptseg.evaluate import mask_iou
from promptseg.geometry import PointCloud
from promptseg.render import default_cameras, project_mask, render_views
from promptseg.synth import Primitive, SynthShapeSpec, build_sample

from helpers import PartEchoModel


@pytest.fixture(scope="module")
def shape():
    spec = SynthShapeSpec(
        primitives=[
            Primitive(kind="sphere", center=(-0.5, 0, 0), size=(0.25, 0.25, 0.25)),
            Primitive(kind="sphere", center=(0.5, 0, 0), size=(0.25, 0.25, 0.25)),
            Primitive(kind="box", center=(0, 0.55, 0), size=(0.2, 0.2, 0.2)),
        ],
        n_points=600,
    )
    return build_sample(spec, np.random.default_rng(0))


@pytest.fixture(scope="module")
def renders(shape):
    return render_views(shape.cloud, default_cameras(), splat_radius=2)


def test_oracle_proposals_match_projections(shape, renders):
    oracle = GtPartOracle(shape.masks[:-1], noise=0.0)
    props = oracle.proposals(0, renders[0])
    assert props  # visible parts produce proposals
    for p in props:
        best = max(mask_iou(p, project_mask(m, renders[0])) for m in shape.masks[:-1])
        assert best == 1.0


def test_oracle_noise_keeps_masks_nonempty(shape, renders):
    oracle = GtPartOracle(shape.masks[:-1], noise=1.0, rng=np.random.default_rng(3))
    for p in oracle.proposals(0, renders[0]):
        assert p.any()


def test_sample_error_prompt_converged(renders):
    valid = renders[0].valid
    m = valid.copy()
    assert sample_error_prompt(m, m, valid, np.random.default_rng(0)) is None


def test_sample_error_prompt_empty_projection(shape, renders):
    valid = renders[0].valid
    prop = project_mask(shape.masks[0], renders[0])
    proj = np.zeros_like(prop)
    (pix, label) = sample_error_prompt(prop, proj, valid, np.random.default_rng(0))
    assert label == 1
    assert prop[pix]


def test_sample_error_prompt_label_correctness(shape, renders):
    rng = np.random.default_rng(7)
    valid = renders[0].valid
    prop = project_mask(shape.masks[0], renders[0])
    proj = project_mask(shape.masks[1], renders[0])
    for _ in range(20):
        (pix, label) = sample_error_prompt(prop, proj, valid, rng)
        is_fp = proj[pix] and not prop[pix]
        assert label == (0 if is_fp else 1)


def test_refine_first_view_oracle_model_one_iteration(shape, renders):
    model = PartEchoModel(shape.masks[:-1])
    session = model.start_session(shape.cloud)
    prop = project_mask(shape.masks[0], renders[0])
    res = refine_first_view(session, prop, renders[0], np.random.default_rng(0), accept_iou=0.9)
    assert res is not None
    assert res.iterations == 1
    assert mask_iou(res.mask, shape.masks[0]) == 1.0


def test_refine_first_view_bounded_calls(shape, renders):
    model = PartEchoModel(shape.masks[:-1])
    session = model.start_session(shape.cloud)
    # proposal that matches no part: the loop must stop after max_iters
    prop = renders[0].valid.copy()
    prop[:, : prop.shape[1] // 2] = False
    model.predict_calls = 0
    res = refine_first_view(session, prop, renders[0], np.random.default_rng(0), accept_iou=0.999, max_iters=5)
    assert model.predict_calls <= 5
    assert res is None or res.iou2d >= 0.999


def test_refine_other_view_echo_keeps_mask(shape, renders):
    model = PartEchoModel(shape.masks[:-1])
    session = model.start_session(shape.cloud)
    mask = shape.masks[0]
    logits = np.where(mask, 8.0, -8.0).astype(np.float32)
    start = RefineResult(mask=mask, logits=logits, iou2d=1.0, iterations=1, score=0.9)

    class EchoProj:
        def proposals(self, vid, render):
            return []

        def candidates(self, vid, render, pixel):
            return [project_mask(mask, render)]

    res = refine_other_view(session, start, 1, renders[1], EchoProj(), np.random.default_rng(0))
    assert res is not None
    assert np.array_equal(res.mask, mask)


def test_refine_other_view_disjoint_discards(shape, renders):
    model = PartEchoModel(shape.masks[:-1])
    session = model.start_session(shape.cloud)
    mask = shape.masks[0]
    logits = np.where(mask, 8.0, -8.0).astype(np.float32)
    start = RefineResult(mask=mask, logits=logits, iou2d=1.0, iterations=1, score=0.9)

    class Disjoint:
        def proposals(self, vid, render):
            return []

        def candidates(self, vid, render, pixel):
            other = project_mask(shape.masks[1], render)
            return [other]

    res = refine_other_view(session, start, 1, renders[1], Disjoint(), np.random.default_rng(0), verify_iou=0.5)
    assert res is None


def test_generate_pseudo_labels_zero_proposals(shape):
    class Silent:
        def proposals(self, vid, render):
            return []

        def candidates(self, vid, render, pixel):
            return []

    model = PartEchoModel(shape.masks[:-1])
    masks, prov = generate_pseudo_labels(model, shape.cloud, Silent(), default_cameras(), np.random.default_rng(0))
    assert masks == []
    assert prov["attempted"] == 0


def test_generate_pseudo_labels_recovers_and_dedupes(shape):
    model = PartEchoModel(shape.masks[:-1])
    oracle = GtPartOracle(shape.masks[:-1], noise=0.0)
    masks, prov = generate_pseudo_labels(
        model, shape.cloud, oracle, default_cameras(), np.random.default_rng(0)
    )
    # every part recovered exactly once despite being proposed in ~6 views
    assert len(masks) == 3
    for part in shape.masks[:-1]:
        assert max(mask_iou(m, part) for m in masks) == 1.0
    assert prov["attempted"] >= 12
    assert prov["kept"] == 3
