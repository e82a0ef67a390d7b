import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onenet import reference
from onenet.data import SampleBatch, generate_toy_dataset
from onenet.errors import ConfigError, DataError, DimensionError, TrainingDiverged
from onenet.gradcheck import check_gradients
from onenet.models import ModelConfig, build
from onenet.nn import Parameter
from onenet.tensor import Tensor
from onenet.train import (Adam, TrainConfig, adam_step, class_weights, confusion_matrix, evaluate,
                          lr_at_epoch, scores_from_confusion, train, weighted_cross_entropy,
                          write_history_csv)


# -- loss ---------------------------------------------------------------------------
def test_ce_uniform_logits_all_background_is_ln2():
    logits = Tensor(np.zeros((2, 2, 3, 3)), dtype=np.float64)
    loss = weighted_cross_entropy(logits, np.zeros((2, 3, 3), dtype=np.int64))
    assert loss.item() == pytest.approx(math.log(2), rel=1e-12)


def test_ce_large_margin_goes_to_zero():
    target = np.array([[[0, 1], [2, 1]]])
    z = np.full((1, 3, 2, 2), -50.0)
    np.put_along_axis(z, target[:, None], 50.0, axis=1)
    assert weighted_cross_entropy(Tensor(z), target).item() < 1e-30


@given(st.integers(2, 5), st.integers(0, 2**31))
def test_ce_matches_loop_oracle(K, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, K, 3, 4)) * 3
    target = rng.integers(0, K, size=(2, 3, 4))
    w = class_weights(K)
    got = weighted_cross_entropy(Tensor(z), target, w).item()
    want = reference.weighted_ce_loops(z, target, w)
    assert abs(got - want) / abs(want) < 1e-6


def test_ce_gradient(rng):
    z = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True, dtype=np.float64)
    target = rng.integers(0, 3, size=(2, 2, 2))
    res = check_gradients(lambda: weighted_cross_entropy(z, target, np.array([0.25, 1.0, 2.0])), [z])
    assert res.ok(1e-7), res.worst()


def test_ce_input_errors():
    z = Tensor(np.zeros((1, 2, 2, 2)))
    with pytest.raises(DataError):
        weighted_cross_entropy(z, np.full((1, 2, 2), 2))
    with pytest.raises(DataError):
        weighted_cross_entropy(z, np.full((1, 2, 2), -1))
    with pytest.raises(DimensionError):
        weighted_cross_entropy(z, np.zeros((1, 4, 4), dtype=np.int64))
    with pytest.raises(DataError):
        weighted_cross_entropy(z, np.zeros((1, 2, 2)))


def test_class_weights_default():
    assert class_weights(3).tolist() == [0.25, 1.0, 1.0]


# -- optimiser / schedule -------------------------------------------------------------------
def test_adam_first_step_is_minus_lr():
    p = Parameter(np.array([0.5]), dtype=np.float64)
    state = {}
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    assert p.data[0] == pytest.approx(0.5 - 1e-3, rel=1e-9)
    for _ in range(5):
        adam_step([p], [np.array([1.0])], state, lr=1e-3)
    # constant gradients keep every bias-corrected step at lr
    assert p.data[0] == pytest.approx(0.5 - 6e-3, rel=1e-6)


def test_adam_matches_closed_form_on_varying_gradients():
    p = Parameter(np.zeros(1), dtype=np.float64)
    state, m, v = {}, 0.0, 0.0
    want = 0.0
    for t, g in enumerate([0.3, -1.2, 2.0, 0.1], start=1):
        adam_step([p], [np.array([g])], state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        want -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p.data[0] == pytest.approx(want, rel=1e-12)


def test_adam_zero_gradient_and_shape_errors():
    p = Parameter(np.ones(3), dtype=np.float64)
    adam_step([p], [np.zeros(3)], {}, lr=1.0)
    assert p.data.tolist() == [1.0, 1.0, 1.0]
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(2)], {}, lr=1.0)
    opt = Adam([p])
    opt.step(1.0)  # no gradient yet: skipped
    assert p.data.tolist() == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("epoch,lr", [(0, 1e-4), (49, 1e-4), (50, 1e-5), (69, 1e-5), (70, 1e-6),
                                      (90, 1e-7)])
def test_lr_schedule(epoch, lr):
    assert lr_at_epoch(epoch, TrainConfig()) == pytest.approx(lr, rel=1e-12)


def test_lr_schedule_is_non_increasing():
    cfg = TrainConfig()
    lrs = [lr_at_epoch(e, cfg) for e in range(300)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    for bad in (dict(lr=-1), dict(batch_size=0), dict(lr_decay=0), dict(background_weight=0),
                dict(decay_every=0), dict(epochs=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


# -- metrics -----------------------------------------------------------------------------------
class FixedNet:
    """Stand-in network that returns one-hot logits of a stored prediction."""

    def __init__(self, preds, K):
        self.preds, self.config = iter(preds), ModelConfig(num_classes=K)

    def __call__(self, images, train=False):
        p = next(self.preds)
        z = np.zeros((p.shape[0], self.config.num_classes) + p.shape[1:])
        np.put_along_axis(z, p[:, None], 5.0, axis=1)
        return Tensor(z)


def _batch(masks):
    return SampleBatch(Tensor(np.zeros((masks.shape[0], 3, 2, 2))), masks)


def test_metrics_perfect_and_disjoint():
    t = np.array([[[0, 1], [1, 2]]])
    m = evaluate(FixedNet([t], 3), [_batch(t)])
    assert (m.mean_iou, m.dice, m.pixel_accuracy) == (1.0, 1.0, 1.0)
    wrong = (t + 1) % 3
    m = evaluate(FixedNet([wrong], 3), [_batch(t)])
    assert (m.mean_iou, m.dice, m.pixel_accuracy) == (0.0, 0.0, 0.0)


def test_absent_classes_are_excluded():
    t = np.zeros((1, 2, 2), dtype=np.int64)
    m = evaluate(FixedNet([t], 4), [_batch(t)])
    assert m.mean_iou == 1.0


@given(st.integers(2, 4), st.integers(0, 2**31))
def test_metrics_match_loop_oracle(K, seed):
    rng = np.random.default_rng(seed)
    t, p = rng.integers(0, K, (2, 5, 5)), rng.integers(0, K, (2, 5, 5))
    got = scores_from_confusion(confusion_matrix(p, t, K))
    want = reference.segmentation_scores_loops(p, t, K)
    assert np.allclose(got, want, rtol=1e-12)
    assert all(0 <= v <= 1 for v in got)


def test_evaluate_needs_batches():
    with pytest.raises(DataError):
        evaluate(FixedNet([], 2), [])


# -- training loop --------------------------------------------------------------------------------
def tiny(variant="onenet_ed"):
    return build(ModelConfig(variant=variant, layers=1, base_channels=4, num_classes=3), seed=0)


@pytest.fixture(scope="module")
def toy():
    return generate_toy_dataset(16, 16, 16, 3, seed=0, batch_size=8)


def test_zero_lr_leaves_weights_unchanged(toy):
    net = tiny()
    before = {k: p.data.copy() for k, p in net.named_parameters()}
    res = train(net, TrainConfig(epochs=3, lr=0.0), toy)
    assert all(np.array_equal(before[k], p.data) for k, p in net.named_parameters())
    losses = res.train_losses()
    assert max(losses) - min(losses) < 1e-6 * losses[0]


def test_seeded_rerun_is_bitwise_identical(toy):
    runs = [train(tiny(), TrainConfig(epochs=3, lr=1e-3, seed=4), toy) for _ in range(2)]
    assert runs[0].train_losses() == runs[1].train_losses()
    assert [r.metrics for r in runs[0].history] == [r.metrics for r in runs[1].history]
    a, b = runs[0].best_state, runs[1].best_state
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_best_state_tracks_best_miou(toy):
    res = train(tiny(), TrainConfig(epochs=4, lr=3e-3), toy)
    mious = [r.metrics.mean_iou for r in res.history]
    assert res.best_epoch == int(np.argmax(mious))
    assert res.history[1].lr == 3e-3


def test_divergence_guard(toy):
    net = tiny()
    net.head.bias.data[...] = np.nan
    with pytest.raises(TrainingDiverged):
        train(net, TrainConfig(epochs=1), toy)
    with pytest.raises(DataError):
        train(net, TrainConfig(epochs=1), [])


def test_history_csv(tmp_path, toy):
    res = train(tiny(), TrainConfig(epochs=2, lr=1e-3), toy)
    path = tmp_path / "m.csv"
    write_history_csv(path, res.history)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,ce_loss,miou,dice,pixacc,lr"
    assert len(lines) == 3 and lines[1].startswith("0,")
