"""Training objectives: frame alignment, cosine matching loss, margin classifier.

The matching path pools the student frame map down to the teacher's frame
count with adaptive max-pooling (bin i spans student frames
[floor(i*Tx/T), floor((i+1)*Tx/T))), optionally bridges the channel
dimension with a trainable affine map, and penalizes one minus the mean
per-frame cosine similarity. The classifier is an additive angular margin
softmax over length-normalized embeddings and class weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)


@dataclass
class AamConfig:
    """Additive angular margin softmax settings (margin in radians)."""

    num_classes: int
    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ValueError("margin must be in [0, pi/2)")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")


def align(
    frames: torch.Tensor, target_len: int, projection: nn.Module | None = None
) -> torch.Tensor:
    """Max-pool the time axis of a frame map down to target_len frames.

    frames: [Tx, D] or [B, Tx, D] with Tx >= target_len >= 1. Bin i takes the
    elementwise max over student frames [floor(i*Tx/L), floor((i+1)*Tx/L)).
    When a projection module is given it is applied after pooling (this is
    the trainable bridge to the teacher dimension).
    """
    single = frames.dim() == 2
    x = frames.unsqueeze(0) if single else frames
    if x.dim() != 3:
        raise ValueError("frame map must be [Tx, D] or [B, Tx, D]")
    t_x = x.shape[1]
    if target_len < 1:
        raise ValueError("target length must be >= 1")
    if t_x < target_len:
        raise ValueError(
            f"student frame map ({t_x} frames) is shorter than the teacher ({target_len})"
        )
    pooled = []
    for i in range(target_len):
        lo = (i * t_x) // target_len
        hi = ((i + 1) * t_x) // target_len
        pooled.append(x[:, lo:hi].amax(dim=1))
    z = torch.stack(pooled, dim=1)
    if projection is not None:
        z = projection(z)
    return z[0] if single else z


def speech_loss(aligned: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """One minus the mean per-frame cosine similarity, averaged over utterances.

    aligned and teacher must have identical shape, [T, D] or [B, T, D].
    Frames where either side has zero norm are skipped and the per-utterance
    mean renormalized over the remaining frames; utterances with no usable
    frame are dropped from the batch mean. Skips are logged.
    """
    single = aligned.dim() == 2
    z = aligned.unsqueeze(0) if single else aligned
    v = teacher.unsqueeze(0) if single else teacher
    if z.shape != v.shape:
        raise ValueError(f"shape mismatch: aligned {tuple(z.shape)} vs teacher {tuple(v.shape)}")
    z_norm = z.norm(dim=-1)
    v_norm = v.norm(dim=-1)
    keep = (z_norm > 0) & (v_norm > 0)
    n_skipped = int((~keep).sum())
    if n_skipped:
        log.warning("speech loss skipped %d zero-norm frame(s)", n_skipped)
    denom = torch.where(keep, z_norm * v_norm, torch.ones_like(z_norm))
    cos = torch.where(keep, (z * v).sum(dim=-1) / denom, torch.zeros_like(z_norm))
    kept = keep.sum(dim=-1)
    usable = kept > 0
    if not usable.any():
        log.warning("speech loss: every frame was skipped; returning 0")
        return z.sum() * 0.0
    per_utt = 1.0 - cos.sum(dim=-1) / kept.clamp(min=1)
    return per_utt[usable].mean()


def aam_softmax_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    class_weights: torch.Tensor,
    cfg: AamConfig,
) -> torch.Tensor:
    """Additive angular margin softmax loss over a batch of embeddings.

    Cosine logits between length-normalized embeddings and class weights;
    the target class logit uses cos(theta + m) computed as
    cos(theta)cos(m) - sin(theta)sin(m), falling back to cos(theta) - m*sin(m)
    where cos(theta) <= cos(pi - m) to keep the logit monotonic in theta.
    """
    if embeddings.dim() != 2 or class_weights.dim() != 2:
        raise ValueError("embeddings and class weights must be 2-D")
    if class_weights.shape[0] != cfg.num_classes:
        raise ValueError("class weight rows must match cfg.num_classes")
    if embeddings.shape[1] != class_weights.shape[1]:
        raise ValueError("embedding and class weight dimensions differ")
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise ValueError("labels out of range")
    e_norm = embeddings.norm(dim=1, keepdim=True)
    w_norm = class_weights.norm(dim=1, keepdim=True)
    if (e_norm == 0).any():
        raise ValueError("zero-norm embedding: cosine undefined")
    if (w_norm == 0).any():
        raise ValueError("zero-norm class weight: cosine undefined")
    cosine = ((embeddings / e_norm) @ (class_weights / w_norm).t()).clamp(-1.0, 1.0)
    cos_m = math.cos(cfg.margin)
    sin_m = math.sin(cfg.margin)
    sine = torch.sqrt((1.0 - cosine.pow(2)).clamp(min=0.0))
    phi = cosine * cos_m - sine * sin_m
    phi = torch.where(cosine > math.cos(math.pi - cfg.margin), phi, cosine - cfg.margin * sin_m)
    one_hot = F.one_hot(labels, cfg.num_classes).bool()
    logits = cfg.scale * torch.where(one_hot, phi, cosine)
    return F.cross_entropy(logits, labels)


def total_loss(speaker_loss, speech_loss_value, weight: float):
    """Combined objective: speaker_loss + weight * speech_loss_value."""
    if weight < 0 or not math.isfinite(weight):
        raise ValueError("loss weight must be finite and >= 0")
    return speaker_loss + weight * speech_loss_value
