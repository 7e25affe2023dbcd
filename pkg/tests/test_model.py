import numpy as np
import pytest

from promptseg import autograd as ag
from promptseg.autograd import Tensor
from promptseg.geometry import PointCloud, farthest_point_sample, knn_group, normalize_unit_sphere
from promptseg.losses import LossWeights, focal_loss, dice_loss, mask_loss
from promptseg.model import ModelConfig, Prediction, PromptSegModel, PromptSet, fourier_pe

from helpers import finite_diff_grad, random_cloud, rel_err

MICRO = dict(n_patches=8, patch_size=4, d_patch=16, d_model=16, d_classifier=8, depth=1, heads=2, seed=3)


@pytest.fixture(scope="module")
def micro_model():
    return PromptSegModel(ModelConfig(**MICRO))


@pytest.fixture(scope="module")
def micro_cloud():
    rng = np.random.default_rng(11)
    pts = rng.standard_normal((32, 3)).astype(np.float32)
    return normalize_unit_sphere(PointCloud(points=pts))[0]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(d_model=16, heads=4, d_classifier=32)
    with pytest.raises(ValueError):
        ModelConfig(d_model=16, heads=4, fourier_bands=3)
    cfg = ModelConfig(**MICRO)
    assert cfg.n_mask_tokens == 4
    assert cfg.fourier_bands == 8


def test_fourier_pe_at_zero():
    bands = np.random.default_rng(0).normal(size=(8, 3))
    out = fourier_pe(np.zeros((2, 3)), bands)
    assert np.allclose(out[:, :8], 0.0)
    assert np.allclose(out[:, 8:], 1.0)


def test_fourier_pe_bounds_and_identity(rng):
    bands = rng.normal(size=(8, 3))
    out = fourier_pe(rng.standard_normal((10, 3)), bands)
    assert (np.abs(out) <= 1.0 + 1e-6).all()
    assert np.abs(out[:, :8] ** 2 + out[:, 8:] ** 2 - 1.0).max() < 1e-6


def test_patch_embed_identical_points(micro_model):
    # all points identical: every patch sees the same re-centered zeros
    cloud = PointCloud(points=np.zeros((16, 3), dtype=np.float32))
    centers = farthest_point_sample(cloud, 4)
    ps = knn_group(cloud, centers, 4)
    with ag.no_grad():
        feats = micro_model.patch_embed(micro_model._patch_inputs(cloud, ps), 4, 4)
    assert np.allclose(feats.data, feats.data[0])


def test_patch_embed_permutation_invariance(micro_model, micro_cloud):
    centers = farthest_point_sample(micro_cloud, 8)
    ps = knn_group(micro_cloud, centers, 4)
    with ag.no_grad():
        a = micro_model.patch_embed(micro_model._patch_inputs(micro_cloud, ps), 8, 4).data
    rng = np.random.default_rng(5)
    shuffled = ps.neighbor_indices.copy()
    for row in shuffled:
        rng.shuffle(row)
    ps_shuf = type(ps)(centers=ps.centers, center_indices=ps.center_indices, neighbor_indices=shuffled)
    with ag.no_grad():
        b = micro_model.patch_embed(micro_model._patch_inputs(micro_cloud, ps_shuf), 8, 4).data
    assert a.tobytes() == b.tobytes()


def test_encode_output_shape(micro_model, micro_cloud):
    with ag.no_grad():
        sess = micro_model.start_session(micro_cloud, assume_normalized=True)
    assert sess.encoding.patch_tokens.shape == (8, 16)


def test_encoding_translation_invariance(micro_model):
    rng = np.random.default_rng(21)
    pts = rng.standard_normal((40, 3)).astype(np.float32)
    with ag.no_grad():
        a = micro_model.start_session(PointCloud(points=pts)).encoding.patch_tokens.data
        b = micro_model.start_session(PointCloud(points=pts + np.float32(3.5))).encoding.patch_tokens.data
    assert np.abs(a - b).max() < 1e-5


def test_prompt_label_embedding_difference(micro_model, micro_cloud):
    coord = micro_cloud.points[:1]
    with ag.no_grad():
        fg = micro_model.encode_prompt_points(PromptSet(points=coord, labels=[1])).data
        bg = micro_model.encode_prompt_points(PromptSet(points=coord, labels=[0])).data
    diff = micro_model.label_embed.data[1] - micro_model.label_embed.data[0]
    assert np.allclose(fg - bg, diff, atol=1e-6)


def test_mask_prompt_determinism(micro_model, micro_cloud):
    centers = farthest_point_sample(micro_cloud, 8)
    ps = knn_group(micro_cloud, centers, 4)
    logits = np.zeros(micro_cloud.n, dtype=np.float32)
    with ag.no_grad():
        a = micro_model.encode_mask_prompt(logits, micro_cloud, ps).data
        b = micro_model.encode_mask_prompt(logits, micro_cloud, ps).data
    assert a.tobytes() == b.tobytes()


def test_mask_prompt_length_check(micro_model, micro_cloud):
    centers = farthest_point_sample(micro_cloud, 8)
    ps = knn_group(micro_cloud, centers, 4)
    with pytest.raises(ValueError):
        micro_model.encode_mask_prompt(np.zeros(7, dtype=np.float32), micro_cloud, ps)


def test_predict_shapes_and_gating(micro_model, micro_cloud):
    sess = micro_model.start_session(micro_cloud, assume_normalized=True)
    one = PromptSet(points=micro_cloud.points[:1], labels=[1])
    with ag.no_grad():
        pred = sess.predict(one)
    assert pred.multimask and pred.mask_logits.shape == (3, 32) and pred.iou_pred.shape == (3,)
    assert ((pred.iou_pred >= 0) & (pred.iou_pred <= 1)).all()

    two = one.extended(micro_cloud.points[2], 0)
    with ag.no_grad():
        pred2 = sess.predict(two)
    assert not pred2.multimask and pred2.mask_logits.shape == (1, 32)

    with pytest.raises(ValueError):
        sess.predict(two, multimask=True)
    masked = PromptSet(points=micro_cloud.points[:1], labels=[1], mask_logits=np.zeros(32))
    with ag.no_grad():
        pred3 = sess.predict(masked)
    assert not pred3.multimask

    with pytest.raises(ValueError):
        sess.predict(PromptSet(points=np.zeros((0, 3)), labels=[]))


def test_predict_bit_identical(micro_model, micro_cloud):
    one = PromptSet(points=micro_cloud.points[:1], labels=[1])
    with ag.no_grad():
        a = micro_model.predict(micro_cloud, one)
        b = micro_model.predict(micro_cloud, one)
    assert a.mask_logits.tobytes() == b.mask_logits.tobytes()
    assert a.iou_pred.tobytes() == b.iou_pred.tobytes()


def test_encoding_cached_across_prompts(micro_model, micro_cloud):
    before = micro_model.encode_calls
    sess = micro_model.start_session(micro_cloud, assume_normalized=True)
    with ag.no_grad():
        for i in range(5):
            sess.predict(PromptSet(points=micro_cloud.points[i : i + 1], labels=[1]))
    assert micro_model.encode_calls == before + 1
    assert sess.encode_count == 1


def test_multi_layer_features(micro_cloud):
    model = PromptSegModel(ModelConfig(**{**MICRO, "depth": 3}))
    one = model.multi_layer_features(micro_cloud, [2])
    assert one.shape == (32, 16)
    three = model.multi_layer_features(micro_cloud, [1, 2, 3])
    assert three.shape == (32, 48)
    with pytest.raises(ValueError):
        model.multi_layer_features(micro_cloud, [4])


def test_multi_layer_center_coincidence(micro_cloud):
    model = PromptSegModel(ModelConfig(**MICRO))
    with ag.no_grad():
        sess = model.start_session(micro_cloud, assume_normalized=True, keep_layer_taps=True)
    feats = model.multi_layer_features(micro_cloud, [1], assume_normalized=True)
    ps = sess.encoding.patch_set
    tap = sess.encoding.layer_taps[0]
    for row, center_idx in enumerate(ps.center_indices):
        assert np.allclose(feats[center_idx], tap[row], atol=1e-6)


def test_checkpoint_roundtrip(tmp_path, micro_model, micro_cloud):
    path = tmp_path / "model.psc"
    micro_model.save(path)
    back = PromptSegModel.load(path)
    one = PromptSet(points=micro_cloud.points[:1], labels=[1])
    with ag.no_grad():
        a = micro_model.predict(micro_cloud, one)
        b = back.predict(micro_cloud, one)
    assert a.mask_logits.tobytes() == b.mask_logits.tobytes()


def test_patch_size_exceeds_cloud(micro_model):
    tiny = PointCloud(points=np.random.default_rng(0).standard_normal((3, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        micro_model.start_session(tiny)


def test_end_to_end_gradcheck():
    # micro model, single-mask focal+dice loss, FD on a sampled parameter subset
    with ag.default_dtype(np.float64):
        model = PromptSegModel(ModelConfig(**MICRO))
        rng = np.random.default_rng(4)
        cloud = normalize_unit_sphere(PointCloud(points=rng.standard_normal((32, 3)).astype(np.float32)))[0]
        gt = np.zeros(32, dtype=bool)
        gt[:13] = True
        weights = LossWeights()
        prompts = PromptSet(points=cloud.points[:1], labels=[1], mask_logits=rng.standard_normal(32))

        def loss_value() -> float:
            sess = model.start_session(cloud, assume_normalized=True)
            pred = sess.predict(prompts)
            return mask_loss(pred.logits_t[0], gt, weights).item()

        sess = model.start_session(cloud, assume_normalized=True)
        pred = sess.predict(prompts)
        loss = mask_loss(pred.logits_t[0], gt, weights)
        for p in model.parameters().values():
            p.grad = None
        loss.backward()

        params = model.parameters()
        flat = [(name, i) for name, p in params.items() for i in range(p.data.size)]
        picks = rng.choice(len(flat), size=max(1, len(flat) // 100), replace=False)
        h = 1e-4  # smaller step end-to-end: deep-graph truncation error dominates at 1e-3
        for pi in picks:
            name, i = flat[pi]
            p = params[name]
            orig = p.data.reshape(-1)[i]
            p.data.reshape(-1)[i] = orig + h
            fp = loss_value()
            p.data.reshape(-1)[i] = orig - h
            fm = loss_value()
            p.data.reshape(-1)[i] = orig
            fd = (fp - fm) / (2 * h)
            an = 0.0 if p.grad is None else p.grad.reshape(-1)[i]
            assert rel_err(np.array(an), np.array(fd), floor=1e-4) < 2e-3, f"{name}[{i}]: fd={fd} an={an}"
