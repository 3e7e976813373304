import math

import numpy as np
import pytest

from caswit.losses import (
    VOID, DataError, ce_loss, context_labels, downsample_labels_nn, loss_terms, masked_l1, total_loss,
)
from caswit.tensor import DimensionError, Tensor, UsageError


def _t(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def _margin_logits(labels, k, margin):
    """Logits putting ``margin`` on the true class and 0 elsewhere."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (k,))
    np.put_along_axis(out, np.where(labels == VOID, 0, labels)[..., None], margin, axis=-1)
    return out


# -- cross-entropy ----------------------------------------------------------------


def test_ce_large_margin_is_near_zero(rng):
    labels = rng.integers(0, 5, (6, 6))
    assert ce_loss(_t(_margin_logits(labels, 5, 20.0)), labels).item() < 1e-6


def test_ce_zero_logits_is_log_k(rng):
    labels = rng.integers(0, 7, (3, 5))
    assert ce_loss(_t(np.zeros((3, 5, 7))), labels).item() == pytest.approx(math.log(7), abs=1e-12)


def test_ce_hand_computed_2x2():
    logits = np.array([[[2.0, 0.0], [0.0, 1.0]], [[-1.0, 1.0], [3.0, 3.0]]])
    labels = np.array([[0, 0], [1, 1]])

    def nlp(row, y):
        return -(row[y] - math.log(math.exp(row[0]) + math.exp(row[1])))

    expected = np.mean([nlp(logits[i, j], labels[i, j]) for i in range(2) for j in range(2)])
    assert ce_loss(_t(logits), labels).item() == pytest.approx(expected, abs=1e-12)


def test_ce_shift_invariance(rng):
    logits = rng.normal(size=(2, 4, 4, 3))
    labels = rng.integers(0, 3, (2, 4, 4))
    shifted = logits + rng.normal(size=(2, 4, 4, 1)) * 50
    assert ce_loss(_t(shifted), labels).item() == pytest.approx(ce_loss(_t(logits), labels).item(), abs=1e-6)


def test_ce_void_excluded_from_sum_and_normaliser(rng):
    logits = rng.normal(size=(4, 4, 3))
    labels = rng.integers(0, 3, (4, 4))
    labels[0] = VOID
    full = ce_loss(_t(logits), labels).item()
    assert full == pytest.approx(ce_loss(_t(logits[1:]), labels[1:]).item(), abs=1e-12)
    logits[0] += 100.0  # anything under VOID is irrelevant
    assert ce_loss(_t(logits), labels).item() == pytest.approx(full, abs=1e-12)


def test_ce_rejects_out_of_range_label():
    labels = np.array([[0, 3]])
    with pytest.raises(DataError):
        ce_loss(_t(np.zeros((1, 2, 3))), labels)


def test_ce_shape_mismatch():
    with pytest.raises(DimensionError):
        ce_loss(_t(np.zeros((2, 2, 3))), np.zeros((2, 3), int))


def test_ce_gradient_is_softmax_minus_onehot(rng):
    logits = _t(rng.normal(size=(3, 3, 4)))
    logits.requires_grad = True
    labels = rng.integers(0, 4, (3, 3))
    ce_loss(logits, labels).backward()
    p = np.exp(logits.data) / np.exp(logits.data).sum(-1, keepdims=True)
    onehot = np.eye(4)[labels]
    np.testing.assert_allclose(logits.grad, (p - onehot) / 9, atol=1e-12)


# -- label downsampling ---------------------------------------------------------------


def test_downsample_identity_and_constant(rng):
    lab = rng.integers(0, 4, (8, 8))
    np.testing.assert_array_equal(downsample_labels_nn(lab, 1), lab)
    np.testing.assert_array_equal(downsample_labels_nn(np.full((8, 8), 3), 4), np.full((2, 2), 3))


def test_downsample_checkerboard_top_left():
    board = np.indices((4, 4)).sum(0) % 2
    board[0, 2] = 5  # marks the top-left sample of the second block
    np.testing.assert_array_equal(downsample_labels_nn(board, 2), [[0, 5], [0, 0]])


def test_downsample_indivisible():
    with pytest.raises(DimensionError):
        downsample_labels_nn(np.zeros((6, 6), int), 4)


def test_context_labels_place_footprint_in_centre(rng):
    lab = rng.integers(0, 4, (16, 16))
    ctx = context_labels(lab, (8, 8))
    np.testing.assert_array_equal(ctx[2:6, 2:6], downsample_labels_nn(lab, 4))
    border = np.ones((8, 8), bool)
    border[2:6, 2:6] = False
    assert (ctx[border] == VOID).all()


# -- total loss -------------------------------------------------------------------


def test_total_alpha_zero_equals_hr_ce(rng):
    lhr = _t(rng.normal(size=(1, 8, 8, 3)))
    llr = _t(rng.normal(size=(1, 4, 4, 3)))
    labels = rng.integers(0, 3, (1, 8, 8))
    assert total_loss(lhr, llr, labels, alpha=0.0).item() == ce_loss(lhr, labels).item()


def test_total_perfect_heads(rng):
    labels = rng.integers(0, 3, (1, 8, 8))
    lhr = _t(_margin_logits(labels, 3, 25.0))
    llr = _t(_margin_logits(downsample_labels_nn(labels, 2), 3, 25.0))
    assert total_loss(lhr, llr, labels, alpha=0.5).item() < 1e-6


def test_total_calibrated_margins():
    """For K=2 with logits (m, 0) on the true class, CE = log(1 + e^-m); pick m to hit a target CE."""

    def margin(ce):
        return -math.log(math.exp(ce) - 1)

    labels = np.zeros((1, 4, 4), int)
    lhr = _t(_margin_logits(labels, 2, margin(0.2)))
    llr = _t(_margin_logits(np.zeros((1, 2, 2), int), 2, margin(0.4)))
    total, l_hr, l_lr = loss_terms(lhr, llr, labels, 0.5)
    assert l_hr.item() == pytest.approx(0.2, abs=1e-9)
    assert l_lr.item() == pytest.approx(0.4, abs=1e-9)
    assert total.item() == pytest.approx(0.4, abs=1e-6)


def test_total_rejects_negative_alpha():
    with pytest.raises(ValueError):
        total_loss(_t(np.zeros((2, 2, 2))), None, np.zeros((2, 2), int), alpha=-0.1)


# -- masked L1 ----------------------------------------------------------------------


def test_masked_l1_examples(rng):
    target = rng.random((4, 4, 3))
    mask = rng.random((4, 4)) < 0.5
    mask[0, 0] = True
    assert masked_l1(_t(target), target, mask).item() == 0.0
    assert masked_l1(_t(target + 1), target, mask).item() == pytest.approx(1.0, abs=1e-12)
    one = np.zeros((4, 4), bool)
    one[2, 1] = True
    recon = target.copy()
    recon[2, 1] += [0.3, 0.0, -0.6]
    assert masked_l1(_t(recon), target, one).item() == pytest.approx(0.3, abs=1e-12)


def test_masked_l1_empty_mask():
    with pytest.raises(UsageError):
        masked_l1(_t(np.zeros((2, 2, 3))), np.zeros((2, 2, 3)), np.zeros((2, 2), bool))


def test_masked_l1_ignores_unmasked_pixels(rng):
    target = rng.random((6, 6, 3))
    recon = rng.random((6, 6, 3))
    mask = rng.random((6, 6)) < 0.4
    mask[0, 0] = True
    base = masked_l1(_t(recon), target, mask).item()
    recon2, target2 = recon.copy(), target.copy()
    recon2[~mask] = rng.random(((~mask).sum(), 3)) * 9
    target2[~mask] = -4
    assert masked_l1(_t(recon2), target2, mask).item() == base
