"""Classification, regression and stroke losses for the prediction network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    l1: float = 1.0  # TA OHEM
    l2: float = 1.0  # TCA cross-entropy
    l3: float = 1.0  # angle regression
    l4: float = 1.0  # stroke MSE
    l5: float = 1.0  # stroke SSIM

    def __post_init__(self):
        # zero is legal: it detaches a term (used to isolate the stroke loss)
        for name in ("l1", "l2", "l3", "l4", "l5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def smooth_l1(x: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    absx = x.abs()
    return torch.where(absx < beta, 0.5 * x * x / beta, absx - 0.5 * beta)


def ohem_ce(logits: torch.Tensor, target: torch.Tensor, neg_ratio: int = 3,
            min_neg: int = 256) -> torch.Tensor:
    """Cross-entropy over all positives plus the hardest negatives (3:1).

    With no positive pixels the min_neg hardest negatives are kept instead.
    """
    if logits.dim() == 3:
        logits, target = logits[None], target[None]
    per_pixel = F.cross_entropy(logits, target.long(), reduction="none")
    pos = target > 0
    neg_losses = per_pixel[~pos]
    n_pos = int(pos.sum())
    k = min(neg_ratio * n_pos if n_pos else min_neg, neg_losses.numel())
    selected = per_pixel[pos].sum()
    if k:
        selected = selected + torch.topk(neg_losses, k).values.sum()
    denom = max(n_pos + k, 1)
    return selected / denom


def masked_ce(logits: torch.Tensor, target: torch.Tensor,
              mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over mask pixels; zero when the mask is empty."""
    if logits.dim() == 3:
        logits, target, mask = logits[None], target[None], mask[None]
    per_pixel = F.cross_entropy(logits, target.long(), reduction="none")
    mask = mask.bool()
    if not bool(mask.any()):
        return per_pixel.sum() * 0.0
    return per_pixel[mask].mean()


def loss_cls(ta_logits: torch.Tensor, tca_logits: torch.Tensor,
             gt_ta: torch.Tensor, gt_tca: torch.Tensor,
             w: LossWeights) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    l_ta = ohem_ce(ta_logits, gt_ta)
    l_tca = masked_ce(tca_logits, gt_tca, gt_ta > 0)
    return w.l1 * l_ta + w.l2 * l_tca, {"ta": l_ta, "tca": l_tca}


def loss_reg(pred_h1: torch.Tensor, pred_h2: torch.Tensor,
             pred_sin: torch.Tensor, pred_cos: torch.Tensor,
             gt_h1: torch.Tensor, gt_h2: torch.Tensor,
             gt_sin: torch.Tensor, gt_cos: torch.Tensor,
             tca_mask: torch.Tensor,
             w: LossWeights) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Angle and height regression averaged over TCA pixels.

    Height terms are weighted by log(gt_height + 1) so tall instances matter
    more; empty TCA yields an exact zero (flagged by the caller via the count).
    """
    mask = tca_mask.bool()
    zero = (pred_h1.sum() + pred_h2.sum() + pred_sin.sum() + pred_cos.sum()) * 0.0
    if not bool(mask.any()):
        parts = {"sin": zero, "cos": zero, "h": zero, "tca_pixels": 0}
        return zero, parts
    l_sin = smooth_l1(pred_sin[mask] - gt_sin[mask]).mean()
    l_cos = smooth_l1(pred_cos[mask] - gt_cos[mask]).mean()
    gt1 = torch.clamp(gt_h1[mask], min=1e-6)
    gt2 = torch.clamp(gt_h2[mask], min=1e-6)
    weight = torch.log(gt1 + gt2 + 1.0)
    terms = weight * (smooth_l1(pred_h1[mask] / gt1 - 1.0)
                      + smooth_l1(pred_h2[mask] / gt2 - 1.0))
    l_h = terms.sum() / (2 * int(mask.sum()))
    total = w.l3 * (l_sin + l_cos) + l_h
    return total, {"sin": l_sin, "cos": l_cos, "h": l_h,
                   "tca_pixels": int(mask.sum())}


def ssim_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """1 - SSIM with global crop statistics (population variance)."""
    mu_p, mu_g = pred.mean(), gt.mean()
    var_p = ((pred - mu_p) ** 2).mean()
    var_g = ((gt - mu_g) ** 2).mean()
    cov = ((pred - mu_p) * (gt - mu_g)).mean()
    ssim = ((2 * mu_p * mu_g + SSIM_C1) * (2 * cov + SSIM_C2)) / \
           ((mu_p ** 2 + mu_g ** 2 + SSIM_C1) * (var_p + var_g + SSIM_C2))
    return 1.0 - ssim


def loss_stroke(pred: torch.Tensor, gt: torch.Tensor,
                w: LossWeights) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    if pred.shape != gt.shape:
        raise ValueError("stroke map shapes differ")
    l_mse = ((pred - gt) ** 2).mean()
    l_ssim = ssim_loss(pred, gt)
    return w.l4 * l_mse + w.l5 * l_ssim, {"mse": l_mse, "ssim": l_ssim}


def loss_sapn(ta_logits, tca_logits, pred_h1, pred_h2, pred_sin, pred_cos,
              gt_ta, gt_tca, gt_h1, gt_h2, gt_sin, gt_cos,
              stroke_pred: Optional[torch.Tensor] = None,
              stroke_gt: Optional[torch.Tensor] = None,
              w: Optional[LossWeights] = None):
    """Total prediction-network loss plus its per-component breakdown."""
    w = w or LossWeights()
    cls_total, parts = loss_cls(ta_logits, tca_logits, gt_ta, gt_tca, w)
    reg_total, reg_parts = loss_reg(pred_h1, pred_h2, pred_sin, pred_cos,
                                    gt_h1, gt_h2, gt_sin, gt_cos,
                                    gt_tca > 0, w)
    parts.update(reg_parts)
    total = cls_total + reg_total
    if stroke_pred is not None and stroke_gt is not None:
        stroke_total, stroke_parts = loss_stroke(stroke_pred, stroke_gt, w)
        parts.update(stroke_parts)
        total = total + stroke_total
    return total, parts
