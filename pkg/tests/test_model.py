import numpy as np
import pytest

from labelloop import losses
from labelloop.model import (
    ModelParams,
    clone_selector,
    forward,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from labelloop.selection import inconsistency_mask


def rand_image(seed, size=8):
    return np.random.default_rng(seed).uniform(size=(3, size, size)).astype(np.float32)


def test_zero_heads_give_uniform_probabilities():
    params = ModelParams.initialize(5, seed=0)
    params.heads[0][0].value[...] = 0
    params.heads[0][1].value[...] = 0
    pred = forward(params, rand_image(0))
    np.testing.assert_allclose(pred.probs[0], 0.2, atol=1e-6)


def test_duplicated_heads_identical_probmaps():
    task = ModelParams.initialize(4, seed=1)
    selector = clone_selector(task)
    pred = forward(selector, rand_image(1))
    np.testing.assert_array_equal(pred.probs[0], pred.probs[1])


def test_forward_deterministic():
    params = ModelParams.initialize(5, seed=2)
    image = rand_image(2)
    a = forward(params, image)
    b = forward(params, image)
    np.testing.assert_array_equal(a.probs[0], b.probs[0])


def test_forward_rejects_non_finite_input():
    params = ModelParams.initialize(5, seed=3)
    image = rand_image(3)
    image[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        forward(params, image)


def test_clone_is_exact_and_deep():
    task = ModelParams.initialize(5, seed=4)
    task.heads[0][0].vel[...] = 1.0  # stale optimizer state must not be cloned
    selector = clone_selector(task)

    assert selector.num_heads == 2
    for head in selector.heads:
        np.testing.assert_array_equal(head[0].value, task.heads[0][0].value)
        np.testing.assert_array_equal(head[1].value, task.heads[0][1].value)
        assert not head[0].vel.any()
    for sp, tp in zip(selector.backbone, task.backbone):
        np.testing.assert_array_equal(sp.value, tp.value)

    before = task.heads[0][0].value.copy()
    selector.heads[1][0].value += 5.0
    selector.backbone[0].value += 5.0
    np.testing.assert_array_equal(task.heads[0][0].value, before)


def test_clone_gives_empty_inconsistency_mask():
    task = ModelParams.initialize(5, seed=5)
    selector = clone_selector(task)
    pred = forward(selector, rand_image(5))
    assert not inconsistency_mask(pred.probs[0], pred.probs[1]).any()


def test_clone_requires_single_head():
    selector = ModelParams.initialize(3, seed=6, num_heads=2)
    with pytest.raises(ValueError):
        clone_selector(selector)


def test_sgd_zero_gradient_no_change():
    params = ModelParams.initialize(3, seed=8)
    snapshot = [p.value.copy() for p in params.parameters()]
    params.zero_grads()
    assert sgd_step(params, lr=1.0, momentum=0.0)
    for p, before in zip(params.parameters(), snapshot):
        np.testing.assert_array_equal(p.value, before)


def test_sgd_plain_descent_step():
    params = ModelParams.initialize(3, seed=9)
    p = params.backbone[0]
    p.value.flat[0] = 1.0
    params.zero_grads()
    p.grad.flat[0] = 0.25
    sgd_step(params, lr=1.0, momentum=0.0)
    np.testing.assert_allclose(p.value.flat[0], 0.75)


def test_sgd_ascent_heads_only():
    params = ModelParams.initialize(3, seed=10, num_heads=2)
    backbone_before = [p.value.copy() for p in params.backbone]
    head_w = params.heads[0][0]
    head_w.value.flat[0] = 1.0
    params.zero_grads()
    head_w.grad.flat[0] = 0.25
    for p in params.backbone:
        p.grad[...] = 9.9  # must be ignored by the heads-only ascent
    sgd_step(params, lr=1.0, momentum=0.0, ascent_heads=True)
    np.testing.assert_allclose(head_w.value.flat[0], 1.25)
    for p, before in zip(params.backbone, backbone_before):
        np.testing.assert_array_equal(p.value, before)


def test_sgd_skips_non_finite_gradients():
    params = ModelParams.initialize(3, seed=11)
    snapshot = [p.value.copy() for p in params.parameters()]
    params.zero_grads()
    params.backbone[0].grad.flat[0] = np.inf
    assert not sgd_step(params, lr=0.1, momentum=0.9)
    for p, before in zip(params.parameters(), snapshot):
        np.testing.assert_array_equal(p.value, before)


def test_ascent_step_increases_discrepancy():
    hits = 0
    for seed in range(20):
        selector = ModelParams.initialize(5, seed=100 + seed, num_heads=2)
        image = rand_image(200 + seed, size=16)
        before, _ = losses.loss_discrepancy(selector, image)
        sgd_step(selector, lr=1e-3, momentum=0.0, ascent_heads=True)
        after = losses.discrepancy_value(*forward(selector, image).probs)
        hits += after > before.value
    assert hits == 20


def test_checkpoint_round_trip(tmp_path):
    params = ModelParams.initialize(5, seed=12, num_heads=2)
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.num_classes == 5
    assert loaded.num_heads == 2
    for a, b in zip(params.parameters(), loaded.parameters()):
        assert a.name == b.name
        np.testing.assert_array_equal(a.value, b.value)
        assert b.value.dtype == np.float32


def test_checkpoint_header_is_json(tmp_path):
    import json
    import struct

    params = ModelParams.initialize(3, seed=13)
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + hlen])
    names = [e["name"] for e in header["params"]]
    assert "backbone.conv1.weight" in names
    total = sum(e["nbytes"] for e in header["params"])
    assert len(raw) == 4 + hlen + total
