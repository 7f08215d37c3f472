"""Training objectives.

Batch reductions: cross-entropy, distillation and triplet terms are summed
over the members of a logit/feature group and averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import resample
from .errors import BatchCompositionError, ConfigError, DataError, NumericError, ShapeError

LOSS_TERMS = ("att", "trip", "fkp", "ce_s", "ce_g")


@dataclass(frozen=True)
class LossWeights:
    lambda_att: float = 7.0
    alpha: float = 0.7
    temperature: float = 5.0
    triplet_margin: float = 0.3

    def validate(self) -> None:
        if self.lambda_att < 0:
            raise ConfigError("lambda_att must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.triplet_margin < 0:
            raise ConfigError("triplet_margin must be >= 0")


@dataclass
class ClothMask:
    data: np.ndarray  # exactly epsilon or 1
    resized: np.ndarray  # (h_f, w_f), values in [epsilon, 1]
    epsilon: float


def cloth_irrelevant_mask(parsing_mask: np.ndarray, cloth_codes: Iterable[int], epsilon: float,
                          out_hw: tuple[int, int] | None = None, known_codes: Iterable[int] | None = None,
                          resize_mode: str = "area") -> ClothMask:
    """``epsilon`` where the parsing code is a clothing category, 1 elsewhere; plus its resize to ``out_hw``."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    parsing_mask = np.asarray(parsing_mask)
    if known_codes is not None:
        unknown = set(np.unique(parsing_mask).tolist()) - set(known_codes)
        if unknown:
            raise DataError(f"unknown category codes in parsing mask: {sorted(unknown)}")
    is_cloth = np.isin(parsing_mask, list(cloth_codes))
    data = np.where(is_cloth, epsilon, 1.0)
    if out_hw is None:
        resized = data.copy()
    else:
        resized = resample.resize(data, out_hw[0], out_hw[1], mode=resize_mode)
        np.clip(resized, epsilon, 1.0, out=resized)  # rounding guard only
    return ClothMask(data=data, resized=resized, epsilon=epsilon)


def attention_loss(attention: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all cells, averaged over the batch if one is present."""
    if attention.shape != target.shape:
        raise ShapeError(f"attention {tuple(attention.shape)} vs target {tuple(target.shape)}")
    return ((attention - target) ** 2).mean()


def softmax_with_temperature(z: torch.Tensor, temperature: float) -> torch.Tensor:
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    return torch.softmax(z / temperature, dim=-1)  # max-subtracted internally


def _check_groups(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor]) -> None:
    if len(a) != len(b):
        raise ShapeError(f"logit groups differ in size: {len(a)} vs {len(b)}")
    for i, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ShapeError(f"logit group member {i}: {tuple(x.shape)} vs {tuple(y.shape)}")


def fkp_loss(student_logits: Sequence[torch.Tensor], teacher_logits: Sequence[torch.Tensor],
             temperature: float) -> torch.Tensor:
    """``tau^2 * sum_i KL(S(teacher_i, tau) || S(student_i, tau))``; teacher side is detached."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    _check_groups(student_logits, teacher_logits)
    total = student_logits[0].new_zeros(())
    for s, t in zip(student_logits, teacher_logits):
        log_q = F.log_softmax(s / temperature, dim=-1)
        log_p = F.log_softmax(t.detach() / temperature, dim=-1)
        kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
        total = total + kl.mean()
    return temperature ** 2 * total


def cross_entropy_sum(logits: Sequence[torch.Tensor], labels: torch.Tensor) -> torch.Tensor:
    n_cls = logits[0].shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_cls):
        raise DataError(f"labels must lie in [0, {n_cls}), got range [{int(labels.min())}, {int(labels.max())}]")
    total = logits[0].new_zeros(())
    for z in logits:
        total = total + F.cross_entropy(z, labels)
    return total


class _Sqrt(torch.autograd.Function):
    """Correctly rounded square root; torch's vectorised float64 kernel can be 1 ulp off."""

    @staticmethod
    def forward(ctx, x):
        y = torch.from_numpy(np.sqrt(x.detach().cpu().numpy())).to(x.device)
        ctx.save_for_backward(y)
        return y

    @staticmethod
    def backward(ctx, grad):
        (y,) = ctx.saved_tensors
        return grad / (2 * y)


def pairwise_distance(x: torch.Tensor) -> torch.Tensor:
    """Euclidean distances. Squares accumulate in dimension order, so the sum matches a scalar loop exactly."""
    sq = torch.zeros(x.shape[0], x.shape[0], dtype=x.dtype, device=x.device)
    for k in range(x.shape[1]):
        d = x[:, None, k] - x[None, :, k]
        sq = sq + d * d
    # clamp keeps the gradient finite on the zero diagonal
    return _Sqrt.apply(sq.clamp_min(1e-12))


def check_triplet_batch(labels: torch.Tensor) -> None:
    ids, counts = torch.unique(labels, return_counts=True)
    if len(ids) < 2 or int(counts.max()) < 2:
        raise BatchCompositionError(
            "batch-hard triplet needs >= 2 identities and >= 2 samples of some identity; "
            f"got identities {ids.tolist()} with counts {counts.tolist()}")


def batch_hard_triplet_single(features: torch.Tensor, labels: torch.Tensor, margin: float) -> torch.Tensor:
    """Mean over anchors of ``relu(d(a, hardest pos) - d(a, hardest neg) + margin)``.

    Anchors lacking a positive (or a negative) in the batch are skipped.
    """
    check_triplet_batch(labels)
    d = pairwise_distance(features)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=labels.device)
    pos = same & ~eye
    neg = ~same
    valid = pos.any(dim=1) & neg.any(dim=1)
    hardest_pos = torch.where(pos, d, torch.full_like(d, -math.inf)).amax(dim=1)
    hardest_neg = torch.where(neg, d, torch.full_like(d, math.inf)).amin(dim=1)
    hinge = F.relu(hardest_pos[valid] - hardest_neg[valid] + margin)
    return hinge.mean()


def batch_hard_triplet(features: Sequence[torch.Tensor], labels: torch.Tensor, margin: float) -> torch.Tensor:
    total = features[0].new_zeros(())
    for f in features:
        total = total + batch_hard_triplet_single(f, labels, margin)
    return total


def total_loss(parts: Mapping[str, torch.Tensor | float], weights: LossWeights) -> torch.Tensor:
    """``lambda*att + trip + (alpha*fkp + (1-alpha)*ce_s) + ce_g``; missing terms count as 0."""
    weights.validate()
    for name in parts:
        if name not in LOSS_TERMS:
            raise ConfigError(f"unknown loss term {name!r}")
    for name, value in parts.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericError(f"loss term {name!r} is not finite ({v})")

    def get(name):
        return parts.get(name, 0.0)

    a = weights.alpha
    return (weights.lambda_att * get("att") + get("trip")
            + (a * get("fkp") + (1.0 - a) * get("ce_s")) + get("ce_g"))
