"""Water-masked training losses.

Arguments follow ``(y_true, y_pred, mask)``.  Tensors are ``[B, T, C, h, w]``
or ``[T, C, h, w]``; the mask is ``[h, w]`` or ``[B, h, w]`` with True on
water.  Every mean runs over water elements only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    a_mae: float = 4.0
    a_lp: float = 1.0
    a_diff: float = 100.0
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.a_mae, self.a_lp, self.a_diff, self.eps) < 0:
            raise ValueError("loss weights must be non-negative")


def _prepare(y_true, y_pred, mask):
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(y_true.shape)} vs {tuple(y_pred.shape)}")
    if y_true.dim() == 4:
        y_true, y_pred = y_true.unsqueeze(0), y_pred.unsqueeze(0)
    if y_true.dim() != 5:
        raise ValueError("expected [B, T, C, h, w] or [T, C, h, w]")
    m = torch.as_tensor(mask, device=y_true.device).bool()
    if m.dim() == 2:
        m = m.expand(y_true.shape[0], *m.shape)
    if m.shape != (y_true.shape[0], *y_true.shape[-2:]):
        raise ValueError(f"mask shape {tuple(m.shape)} does not match data {tuple(y_true.shape)}")
    if not m.any():
        raise ValueError("mask contains no water pixels")
    return y_true, y_pred, m[:, None, None].to(y_true.dtype)


def _masked_mean(values: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    w = weight.expand_as(values)
    return (values * w).sum() / w.sum()


def mae_loss(y_true, y_pred, mask) -> torch.Tensor:
    y, yp, m = _prepare(y_true, y_pred, mask)
    return _masked_mean((y - yp).abs(), m)


def lp_loss(y_true, y_pred, mask, eps: float = 1e-8) -> torch.Tensor:
    """Squared error scaled by the squared norm of each ground-truth frame."""
    y, yp, m = _prepare(y_true, y_pred, mask)
    frame_norm = (y * y * m).sum(dim=(-3, -2, -1), keepdim=True)
    return _masked_mean((y - yp) ** 2 / (frame_norm + eps), m)


def diff_loss(y_true, y_pred, mask) -> torch.Tensor:
    """Squared mismatch of forward differences along x, y and channels."""
    y, yp, m = _prepare(y_true, y_pred, mask)
    if y.shape[-1] < 2 or y.shape[-2] < 2 or y.shape[-3] < 2:
        raise ValueError("diff_loss needs h, w >= 2 and at least two channels")
    e = y - yp
    total = e.new_zeros(())
    for dim in (-1, -2, -3):
        n = e.shape[dim]
        de = e.narrow(dim, 1, n - 1) - e.narrow(dim, 0, n - 1)
        if dim == -3:
            pair = m
        else:
            pair = m.narrow(dim, 1, n - 1) * m.narrow(dim, 0, n - 1)
        w = pair.expand_as(de)
        if w.sum() > 0:
            total = total + (de * de * w).sum() / w.sum()
    return total


def weighted_sum(l_mae, l_lp, l_diff, weights: LossWeights = LossWeights()):
    return weights.a_mae * l_mae + weights.a_lp * l_lp + weights.a_diff * l_diff


def total_loss(y_true, y_pred, mask, weights: LossWeights = LossWeights()):
    """Weighted sum and a per-term breakdown (floats) for logging."""
    terms = {
        "mae": mae_loss(y_true, y_pred, mask),
        "lp": lp_loss(y_true, y_pred, mask, weights.eps),
        "diff": diff_loss(y_true, y_pred, mask),
    }
    total = weighted_sum(terms["mae"], terms["lp"], terms["diff"], weights)
    return total, {k: float(v.detach()) for k, v in terms.items()}
