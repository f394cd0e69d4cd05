"""Training loss (CE + soft Dice) and hard evaluation metrics (DSC, IoU)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .tensor import ShapeError, Tensor

DICE_SMOOTH = 1.0


def ce_dice_loss(logits, mask, ce_weight=0.5, dice_weight=0.5,
                 smooth=DICE_SMOOTH):
    """0.5 * pixel-mean cross-entropy + 0.5 * (1 - mean foreground soft Dice).

    ``logits``: Tensor (B, n, H, W); ``mask``: int array (B, H, W).
    Differentiable end to end; soft Dice uses softmax probabilities with
    the smoothing constant in numerator and denominator.
    """
    if isinstance(logits, Tensor):
        lg = logits
    else:
        lg = logits.logits  # SegOutput
    mask = np.asarray(mask)
    B, n, H, W = lg.shape
    if mask.shape != (B, H, W):
        raise ShapeError(f"mask shape {mask.shape} != logits spatial {(B, H, W)}")
    if mask.min() < 0 or mask.max() >= n:
        raise ValueError(f"mask labels must lie in [0, {n}), got max {mask.max()}")

    onehot = np.zeros((B, n, H, W))
    bidx = np.arange(B)[:, None, None]
    hidx = np.arange(H)[None, :, None]
    widx = np.arange(W)[None, None, :]
    onehot[bidx, mask, hidx, widx] = 1.0
    onehot_t = tc.tensor(onehot)

    lp = tc.log_softmax(lg, axis=1)
    ce = tc.affine(tc.sum_(tc.mul(onehot_t, lp)), -1.0 / (B * H * W))

    probs = tc.exp(lp)
    dice_terms = []
    for c in range(1, n):
        p_c = tc.slice_axis(probs, 1, c, c + 1)
        y_c = tc.tensor(onehot[:, c:c + 1])
        inter = tc.sum_(tc.mul(p_c, y_c))
        total = tc.add(tc.sum_(p_c), tc.tensor(float(onehot[:, c].sum())))
        dice_terms.append(
            tc.div(tc.affine(inter, 2.0, smooth), tc.affine(total, 1.0, smooth))
        )
    acc = dice_terms[0]
    for term in dice_terms[1:]:
        acc = tc.add(acc, term)
    dice_loss = tc.affine(acc, -1.0 / len(dice_terms), 1.0)

    return tc.add(tc.affine(ce, ce_weight), tc.affine(dice_loss, dice_weight))


@dataclass
class MetricReport:
    per_class_dsc: list
    per_class_iou: list
    mean_dsc: float
    mean_iou: float
    fg_dsc: float
    fg_iou: float
    counts: list = field(default_factory=list)  # (inter, pred, true, union) per class
    samples: int = 1


def dsc_iou(pred_mask, true_mask, n):
    """Hard per-class Dice and IoU from integer overlap counts.

    Classes absent from both masks score 1 by convention, so per-class
    means stay defined on binary data.
    """
    pred = np.asarray(pred_mask)
    true = np.asarray(true_mask)
    if pred.shape != true.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    dscs, ious, counts = [], [], []
    for c in range(n):
        p = pred == c
        t = true == c
        inter = int(np.count_nonzero(p & t))
        a = int(np.count_nonzero(p))
        b = int(np.count_nonzero(t))
        union = a + b - inter
        dscs.append(2 * inter / (a + b) if a + b else 1.0)
        ious.append(inter / union if union else 1.0)
        counts.append((inter, a, b, union))
    fg_dsc = dscs[1:] or dscs
    fg_iou = ious[1:] or ious
    return MetricReport(
        per_class_dsc=dscs,
        per_class_iou=ious,
        mean_dsc=float(np.mean(dscs)),
        mean_iou=float(np.mean(ious)),
        fg_dsc=float(np.mean(fg_dsc)),
        fg_iou=float(np.mean(fg_iou)),
        counts=counts,
    )


class MetricAccumulator:
    """Mean of per-image per-class scores across a dataset."""

    def __init__(self, n):
        self.n = n
        self.dsc = np.zeros(n)
        self.iou = np.zeros(n)
        self.samples = 0

    def add(self, pred_mask, true_mask):
        rep = dsc_iou(pred_mask, true_mask, self.n)
        self.dsc += rep.per_class_dsc
        self.iou += rep.per_class_iou
        self.samples += 1
        return rep

    def report(self):
        if self.samples == 0:
            raise ValueError("no samples accumulated")
        dscs = list(self.dsc / self.samples)
        ious = list(self.iou / self.samples)
        fg_d = dscs[1:] or dscs
        fg_i = ious[1:] or ious
        return MetricReport(
            per_class_dsc=dscs,
            per_class_iou=ious,
            mean_dsc=float(np.mean(dscs)),
            mean_iou=float(np.mean(ious)),
            fg_dsc=float(np.mean(fg_d)),
            fg_iou=float(np.mean(fg_i)),
            samples=self.samples,
        )
