"""Joint training loop: fixed-length crops, mini-batch updates combining the
margin classifier loss with the weighted phonetic matching loss, a step
learning-rate schedule, and checkpointing.

Reported step metrics always satisfy l_total == l_speaker + weight * l_speech
exactly in double precision; the per-epoch CSV keeps the same identity by
recombining the epoch means. With phonetic_weight == 0 the teacher branch is
not built at all (no projection parameters, no teacher reads), so a zero-weight
run is bit-identical to a run configured without any teacher source.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .audio import AugmentPolicy, Waveform, augment, compute_fbank, load_waveform
from .backbones import EncoderConfig, build_encoder
from .losses import AamConfig, aam_softmax_loss, align, speech_loss
from .manifest import UttRecord, read_manifest, speaker_label_map
from .teacher import TeacherSource, load_teacher, slice_for_crop

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

# Disjoint seed streams derived from TrainConfig.seed.
_SEED_CLASS_WEIGHTS = 1
_SEED_PROJECTION = 2
_SEED_BATCH_ORDER = 3
_SEED_CROPS = 4
_SEED_AUGMENT = 5


@dataclass
class TrainConfig:
    lr: float = 0.001
    scheduler: str = "step"
    step_epochs: int = 10
    gamma: float = 0.5
    epochs: int = 80
    batch_size: int = 100
    crop_seconds: float = 2.0
    phonetic_weight: float = 0.1
    aam_margin: float = 0.2
    aam_scale: float = 30.0
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.scheduler != "step":
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.step_epochs < 1:
            raise ValueError("step_epochs must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.crop_seconds <= 0:
            raise ValueError("crop_seconds must be positive")
        if self.phonetic_weight < 0 or not np.isfinite(self.phonetic_weight):
            raise ValueError("phonetic_weight must be finite and >= 0")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class StepMetrics:
    step: int
    epoch: int
    lr: float
    l_speaker: float
    l_speech: float
    l_total: float
    grad_norm: float


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    l_speaker: float
    l_speech: float
    l_total: float


class JointModel(nn.Module):
    """Speaker encoder plus margin-classifier weights and, when a teacher is
    in play, the affine projection bridging the tap dimension to the teacher
    dimension. All trainable state of a run lives here; teacher features are
    plain data and never appear in the parameter registry."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        num_classes: int,
        teacher_dim: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.encoder_cfg = encoder_cfg
        self.num_classes = num_classes
        self.teacher_dim = teacher_dim
        self.encoder = build_encoder(encoder_cfg, seed=seed)
        gen = torch.Generator().manual_seed(seed + _SEED_CLASS_WEIGHTS)
        w = torch.randn(num_classes, encoder_cfg.embed_dim, generator=gen)
        w = w / w.norm(dim=1, keepdim=True)
        self.class_weights = nn.Parameter(w)
        if teacher_dim is not None:
            tap_dim = self.encoder.tap_dim(encoder_cfg.tap_layer)
            with torch.random.fork_rng():
                torch.manual_seed(seed + _SEED_PROJECTION)
                self.projection = nn.Linear(tap_dim, teacher_dim)
        else:
            self.projection = None

    def forward(self, feats: torch.Tensor, tap_layer: int | None = None):
        return self.encoder(feats, tap_layer=tap_layer)

    def parameter_registry(self) -> dict[str, nn.Parameter]:
        return dict(self.named_parameters())


def sample_crop(w: Waveform, crop_seconds: float, seed) -> tuple[Waveform, int]:
    """Fixed-length crop with a seeded offset; returns (crop, offset_samples).

    Offsets are quantized to the teacher hop (320 samples) so file-backed
    teacher rows line up with the crop. Utterances shorter than the crop are
    wrap-around padded.
    """
    if crop_seconds <= 0:
        raise ValueError("crop_seconds must be positive")
    n_out = int(round(crop_seconds * w.sample_rate))
    rng = np.random.default_rng(seed)
    n = len(w)
    if n >= n_out:
        offset = (int(rng.integers(0, n - n_out + 1)) // 320) * 320
        return Waveform(w.samples[offset : offset + n_out].copy()), offset
    offset = (int(rng.integers(0, n)) // 320) * 320
    idx = (offset + np.arange(n_out)) % n
    return Waveform(w.samples[idx]), offset


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr * gamma ** floor(epoch / step_epochs)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.gamma ** (epoch // cfg.step_epochs)


def train_step(
    model: JointModel,
    optimizer: torch.optim.Optimizer,
    feats: torch.Tensor,
    labels: torch.Tensor,
    teacher_batch: torch.Tensor | None,
    cfg: TrainConfig,
) -> StepMetrics:
    """One optimizer update; returns exact loss decomposition and grad norm."""
    aam = AamConfig(model.num_classes, margin=cfg.aam_margin, scale=cfg.aam_scale)
    model.train()
    optimizer.zero_grad()
    frame_map, emb = model(feats)
    l_speaker_t = aam_softmax_loss(emb, labels, model.class_weights, aam)
    if teacher_batch is not None:
        if model.projection is None and frame_map.shape[-1] != teacher_batch.shape[-1]:
            raise ValueError("teacher batch given but model has no projection to its dim")
        aligned = align(frame_map, teacher_batch.shape[1], model.projection)
        l_speech_t = speech_loss(aligned, teacher_batch)
        total_t = l_speaker_t + cfg.phonetic_weight * l_speech_t
        l_speech = float(l_speech_t.item())
    else:
        if cfg.phonetic_weight > 0:
            raise ValueError("phonetic_weight > 0 but no teacher batch supplied")
        total_t = l_speaker_t
        l_speech = 0.0
    if not torch.isfinite(total_t):
        raise RuntimeError(
            f"non-finite loss (speaker={l_speaker_t.item()}, speech={l_speech}); aborting"
        )
    total_t.backward()
    grad_norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip))
    if grad_norm > cfg.grad_clip:
        log.debug("gradient norm %.3f clipped to %.1f", grad_norm, cfg.grad_clip)
    optimizer.step()
    l_speaker = float(l_speaker_t.item())
    return StepMetrics(
        step=-1,
        epoch=-1,
        lr=optimizer.param_groups[0]["lr"],
        l_speaker=l_speaker,
        l_speech=l_speech,
        l_total=l_speaker + cfg.phonetic_weight * l_speech,
        grad_norm=grad_norm,
    )


@dataclass
class TrainResult:
    model: JointModel
    label_map: dict[str, int]
    epoch_metrics: list[EpochMetrics]
    step_metrics: list[StepMetrics]
    checkpoint_path: Path | None = None


def _teacher_for_crop(
    source: TeacherSource, row: UttRecord, crop: Waveform, offset: int
) -> np.ndarray:
    if source.kind == "synthetic":
        return load_teacher(source, row.utt_id, waveform=crop).vectors
    full = load_teacher(source, row.utt_id)
    if full.dim != source.dim:
        raise ValueError(f"teacher dim mismatch for {row.utt_id}")
    return slice_for_crop(full.vectors, offset, len(crop))


def _build_batch(
    rows: list[UttRecord],
    indices: np.ndarray,
    epoch: int,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig,
    label_map: dict[str, int],
    teacher_source: TeacherSource | None,
    augment_policy: AugmentPolicy | None,
):
    feats, labels, teachers = [], [], []
    for idx in indices:
        row = rows[int(idx)]
        w = load_waveform(row.path)
        crop, offset = sample_crop(w, cfg.crop_seconds, seed=[cfg.seed, _SEED_CROPS, epoch, int(idx)])
        if augment_policy is not None:
            per_utt = replace(
                augment_policy,
                seed=int(np.random.default_rng([cfg.seed, _SEED_AUGMENT, epoch, int(idx)]).integers(2**31)),
            )
            crop = augment(crop, per_utt)
        feats.append(compute_fbank(crop, encoder_cfg.num_mels))
        labels.append(label_map[row.speaker_id])
        if teacher_source is not None:
            teachers.append(_teacher_for_crop(teacher_source, row, crop, offset))
    feats_t = torch.as_tensor(np.stack(feats), dtype=torch.float32)
    labels_t = torch.as_tensor(labels, dtype=torch.int64)
    teacher_t = (
        torch.as_tensor(np.stack(teachers), dtype=torch.float32) if teachers else None
    )
    return feats_t, labels_t, teacher_t


def fit(
    manifest: str | Path | list[UttRecord],
    teacher_source: TeacherSource | None,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig,
    out_dir: str | Path | None = None,
    augment_policy: AugmentPolicy | None = None,
) -> TrainResult:
    """Train on a manifest; writes checkpoint + metric CSVs when out_dir is given.

    The teacher branch is active only when phonetic_weight > 0 AND a teacher
    source is configured; a zero weight ignores any configured source.
    """
    rows = manifest if isinstance(manifest, list) else read_manifest(manifest)
    if not rows:
        raise ValueError("empty training manifest")
    label_map = speaker_label_map(rows)
    use_teacher = cfg.phonetic_weight > 0 and teacher_source is not None
    if cfg.phonetic_weight > 0 and teacher_source is None:
        raise ValueError("phonetic_weight > 0 requires a teacher source")
    teacher_dim = teacher_source.dim if use_teacher else None
    model = JointModel(encoder_cfg, len(label_map), teacher_dim=teacher_dim, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    order_rng = np.random.default_rng([cfg.seed, _SEED_BATCH_ORDER])
    step_rows: list[StepMetrics] = []
    epoch_rows: list[EpochMetrics] = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        perm = order_rng.permutation(len(rows))
        spk_losses, speech_losses = [], []
        for start in range(0, len(rows), cfg.batch_size):
            chunk = perm[start : start + cfg.batch_size]
            feats, labels, teacher_t = _build_batch(
                rows, chunk, epoch, cfg, encoder_cfg, label_map,
                teacher_source if use_teacher else None, augment_policy,
            )
            metrics = train_step(model, optimizer, feats, labels, teacher_t, cfg)
            metrics.step = step
            metrics.epoch = epoch
            step_rows.append(metrics)
            spk_losses.append(metrics.l_speaker)
            speech_losses.append(metrics.l_speech)
            step += 1
        mean_spk = float(np.mean(spk_losses))
        mean_speech = float(np.mean(speech_losses))
        epoch_rows.append(
            EpochMetrics(
                epoch=epoch,
                lr=lr,
                l_speaker=mean_spk,
                l_speech=mean_speech,
                l_total=mean_spk + cfg.phonetic_weight * mean_speech,
            )
        )
        log.info(
            "epoch %d: lr=%.2e l_speaker=%.4f l_speech=%.4f",
            epoch, lr, mean_spk, mean_speech,
        )
    result = TrainResult(model, label_map, epoch_rows, step_rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out_dir / "checkpoint.pt"
        save_checkpoint(result.checkpoint_path, model, optimizer, cfg, epoch=cfg.epochs - 1)
        write_metrics_csv(out_dir / "metrics.csv", epoch_rows)
        write_steps_csv(out_dir / "steps.csv", step_rows)
    return result


def write_metrics_csv(path: str | Path, rows: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "l_speaker", "l_speech", "l_total"])
        for r in rows:
            writer.writerow([r.epoch, repr(r.lr), repr(r.l_speaker), repr(r.l_speech), repr(r.l_total)])


def write_steps_csv(path: str | Path, rows: list[StepMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "lr", "l_speaker", "l_speech", "l_total", "grad_norm"])
        for r in rows:
            writer.writerow(
                [r.step, r.epoch, repr(r.lr), repr(r.l_speaker), repr(r.l_speech),
                 repr(r.l_total), repr(r.grad_norm)]
            )


def save_checkpoint(
    path: str | Path,
    model: JointModel,
    optimizer: torch.optim.Optimizer | None,
    cfg: TrainConfig,
    epoch: int,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "encoder_cfg": asdict(model.encoder_cfg),
        "train_cfg": asdict(cfg),
        "num_classes": model.num_classes,
        "teacher_dim": model.teacher_dim,
        "epoch": epoch,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)


@dataclass
class Checkpoint:
    encoder_cfg: EncoderConfig
    train_cfg: TrainConfig
    num_classes: int
    teacher_dim: int | None
    epoch: int
    model_state: dict
    optimizer_state: dict | None

    def build_model(self) -> JointModel:
        model = JointModel(
            self.encoder_cfg, self.num_classes, teacher_dim=self.teacher_dim, seed=0
        )
        model.load_state_dict(self.model_state, strict=True)
        model.eval()
        return model


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format")
    return Checkpoint(
        encoder_cfg=EncoderConfig(**payload["encoder_cfg"]),
        train_cfg=TrainConfig(**payload["train_cfg"]),
        num_classes=payload["num_classes"],
        teacher_dim=payload["teacher_dim"],
        epoch=payload["epoch"],
        model_state=payload["model_state"],
        optimizer_state=payload["optimizer_state"],
    )
