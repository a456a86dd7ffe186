"""Target assignment, losses, learning-rate schedule and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from talkit import _accel
from talkit.core import ActionInstance, EmptySegmentError, Segment, VideoRecord, clip_segment
from talkit.model import ActionLocalizer, ModelConfig, pad_batch

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 2
    base_lr: float = 1e-4
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    center_sampling_radius: float = 1.5
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs {self.warmup_epochs} must be in [0, epochs={self.epochs})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ targets


@dataclass(frozen=True)
class PyramidGeometry:
    strides: tuple[int, ...]
    lengths: tuple[int, ...]
    regression_ranges: tuple[tuple[float, float], ...]

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "PyramidGeometry":
        return cls(tuple(cfg.level_strides()), tuple(cfg.level_lengths()), tuple(cfg.regression_ranges))

    def point_arrays(self):
        """Concatenated per-point (center, stride, range_lo, range_hi, level)."""
        centers, strides, lo, hi, level = [], [], [], [], []
        for lvl, (s, n, (r0, r1)) in enumerate(zip(self.strides, self.lengths, self.regression_ranges)):
            centers.append(np.arange(n, dtype=np.float64) * s)
            strides.append(np.full(n, float(s)))
            lo.append(np.full(n, r0))
            hi.append(np.full(n, r1))
            level.append(np.full(n, lvl, dtype=np.int64))
        return tuple(np.concatenate(a) for a in (centers, strides, lo, hi, level))


@dataclass
class PointTargets:
    """Targets for every pyramid point, levels concatenated finest first.

    ``regression`` holds (c - t_s, t_e - c) in finest-grid steps and is zero
    on negatives. ``unassignable`` lists instance indices no point took.
    """

    cls: np.ndarray  # P x C in {0, 1}
    regression: np.ndarray  # P x 2
    positive: np.ndarray  # P bool
    instance: np.ndarray  # P, winning instance index or -1
    unassignable: list[int] = field(default_factory=list)

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def assign_grid_targets(
    starts: np.ndarray,
    ends: np.ndarray,
    labels: np.ndarray,
    geometry: PyramidGeometry,
    num_classes: int,
    center_radius: float = 1.5,
) -> PointTargets:
    """Assignment on instances already expressed in finest-grid units."""
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    centers, strides, lo, hi, _ = geometry.point_arrays()
    winner = _accel.assign_kernel(centers, strides, lo, hi, float(center_radius), starts, ends)
    winner = np.asarray(winner)
    pos = winner >= 0
    cls = np.zeros((len(centers), num_classes), dtype=np.float32)
    reg = np.zeros((len(centers), 2), dtype=np.float64)
    if pos.any():
        w = winner[pos]
        cls[np.nonzero(pos)[0], labels[w]] = 1.0
        reg[pos, 0] = centers[pos] - starts[w]
        reg[pos, 1] = ends[w] - centers[pos]
    taken = set(winner[pos].tolist())
    unassignable = [k for k in range(len(starts)) if k not in taken]
    return PointTargets(cls, reg, pos, winner, unassignable)


def assign_targets(
    video: VideoRecord,
    geometry: PyramidGeometry,
    num_classes: int,
    seconds_per_step: float,
    center_radius: float = 1.5,
) -> PointTargets:
    inst = video.instances
    starts = np.array([i.segment.start for i in inst], dtype=np.float64) / seconds_per_step
    ends = np.array([i.segment.end for i in inst], dtype=np.float64) / seconds_per_step
    labels = np.array([i.label_id for i in inst], dtype=np.int64)
    targets = assign_grid_targets(starts, ends, labels, geometry, num_classes, center_radius)
    if targets.unassignable:
        logger.debug("video %s: %d unassignable instances", video.video_id, len(targets.unassignable))
    return targets


# --------------------------------------------------------------------- loss


def sigmoid_focal_loss(logits, targets, alpha=0.25, gamma=2.0):
    """Elementwise focal loss; alpha weights positives, 1 - alpha negatives."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    loss = ce * (1 - p_t) ** gamma
    if alpha >= 0:
        loss = (alpha * targets + (1 - alpha) * (1 - targets)) * loss
    return loss


def iou_loss_1d(pred, target):
    """1 - tIoU of intervals given as (left, right) distances from a shared point."""
    inter = torch.minimum(pred[:, 0], target[:, 0]) + torch.minimum(pred[:, 1], target[:, 1])
    union = torch.maximum(pred[:, 0], target[:, 0]) + torch.maximum(pred[:, 1], target[:, 1])
    return 1.0 - inter / union.clamp(min=torch.finfo(pred.dtype).eps)


def compute_loss(logits, offsets, masks, strides, targets: Sequence[PointTargets], cfg: TrainConfig):
    """Focal classification + 1-D IoU regression, both over max(1, #positives).

    ``logits``/``offsets``/``masks`` are per-level model outputs; targets are
    per video with levels concatenated in the same order.
    """
    logits = torch.cat(logits, dim=1)
    offsets = torch.cat(offsets, dim=1)
    valid = torch.cat(masks, dim=1)
    dtype = logits.dtype
    point_stride = torch.cat(
        [torch.full((m.shape[1],), float(s), dtype=dtype) for m, s in zip(masks, strides)]
    )
    cls_t = torch.as_tensor(np.stack([t.cls for t in targets]), dtype=dtype)
    reg_t = torch.as_tensor(np.stack([t.regression for t in targets]), dtype=dtype)
    pos = torch.as_tensor(np.stack([t.positive for t in targets])) & valid
    if not bool(valid.any()):
        raise TrainingError("empty batch: no valid points")
    num_pos = int(pos.sum())
    norm = max(1, num_pos)
    cls_loss = sigmoid_focal_loss(logits[valid], cls_t[valid], cfg.focal_alpha, cfg.focal_gamma).sum() / norm
    if num_pos:
        pred = offsets[pos] * point_stride.expand_as(pos)[pos][:, None]
        reg_loss = iou_loss_1d(pred, reg_t[pos]).sum() / norm
    else:
        reg_loss = logits.new_zeros(())
    return cls_loss + reg_loss, {"cls": float(cls_loss.detach()), "reg": float(reg_loss.detach()), "num_pos": num_pos}


# ----------------------------------------------------------------- schedule


def warmup_steps_for(total_steps: int, cfg: TrainConfig) -> int:
    return total_steps * cfg.warmup_epochs // cfg.epochs


def _warmup_lr(step: float, warmup: int, base_lr: float) -> float:
    return base_lr * step / warmup


def _cosine_lr(step: float, warmup: int, total_steps: int, base_lr: float) -> float:
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up from 0 to base_lr, then cosine annealing toward 0."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = warmup_steps_for(total_steps, cfg)
    if step < warmup:
        return _warmup_lr(step, warmup, cfg.base_lr)
    return _cosine_lr(step, warmup, total_steps, cfg.base_lr)


# --------------------------------------------------------------------- data


@dataclass
class VideoSample:
    """One training/inference item: fused-order raw features on the reference grid."""

    video: VideoRecord
    features: np.ndarray  # T x sum(source dims)
    seconds_per_step: float


def crop_sample(sample: VideoSample, max_len: int, rng: np.random.Generator) -> VideoSample:
    """Random max_len window containing at least one whole-or-partial instance."""
    t = sample.features.shape[0]
    if t <= max_len:
        return sample
    dt = sample.seconds_per_step
    insts = sample.video.instances
    if insts:
        inst = insts[rng.integers(len(insts))]
        s_idx = math.floor(inst.segment.start / dt)
        e_idx = math.ceil(inst.segment.end / dt)
        lo, hi = max(0, e_idx - max_len), min(t - max_len, s_idx)
        if hi < lo:  # instance longer than the window: any overlapping window
            lo, hi = max(0, s_idx - max_len + 1), min(t - max_len, e_idx - 1)
        start = int(rng.integers(lo, max(lo, hi) + 1))
    else:
        start = int(rng.integers(0, t - max_len + 1))
    offset = start * dt
    duration = max_len * dt
    kept = []
    for inst in insts:
        if inst.segment.end - offset <= 0:
            continue
        try:
            seg = clip_segment(Segment(inst.segment.start - offset, inst.segment.end - offset), duration)
        except EmptySegmentError:
            continue
        kept.append(ActionInstance(inst.label_id, seg))
    video = VideoRecord(sample.video.video_id, duration, tuple(kept))
    return VideoSample(video, sample.features[start : start + max_len], dt)


# --------------------------------------------------------------------- loop


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    checkpoint: str | None = None


def _param_groups(model, weight_decay):
    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


def train(
    dataset: Sequence[VideoSample],
    model: ActionLocalizer,
    cfg: TrainConfig,
    out_dir=None,
    log_path=None,
    checkpoint_meta: dict | None = None,
    dtype=torch.float32,
) -> list[EpochRecord]:
    """Train in place; writes one checkpoint per epoch when ``out_dir`` is set."""
    from talkit.checkpoint import save_checkpoint

    if not dataset:
        raise TrainingError("empty dataset")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    mcfg = model.cfg
    geometry = PyramidGeometry.from_config(mcfg)
    strides = mcfg.level_strides()
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = torch.optim.AdamW(_param_groups(model, cfg.weight_decay), lr=cfg.base_lr)
    cached = {}
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    records = []
    step = 0
    model.train()
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(len(dataset))
            losses = []
            for b in range(steps_per_epoch):
                idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                samples, targets = [], []
                for i in idx:
                    s = dataset[i]
                    if s.features.shape[0] > mcfg.max_seq_len:
                        s = crop_sample(s, mcfg.max_seq_len, rng)
                        t = assign_targets(s.video, geometry, mcfg.num_classes, s.seconds_per_step, cfg.center_sampling_radius)
                    else:
                        if i not in cached:
                            cached[i] = assign_targets(s.video, geometry, mcfg.num_classes, s.seconds_per_step, cfg.center_sampling_radius)
                        t = cached[i]
                    samples.append(s)
                    targets.append(t)
                x, mask = pad_batch([s.features for s in samples], mcfg.max_seq_len, dtype=dtype)
                lr = lr_at(step, total_steps, cfg)
                for g in optimizer.param_groups:
                    g["lr"] = lr
                logits, offsets, masks = model(x, mask)
                loss, parts = compute_loss(logits, offsets, masks, strides, targets, cfg)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} step {step}: cls={parts['cls']} reg={parts['reg']} "
                        f"lr={lr:.3g} videos={[s.video.video_id for s in samples]}"
                    )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                losses.append(float(loss.detach()))
                if log_fh:
                    log_fh.write(json.dumps({"epoch": epoch, "step": step, "lr": lr, "loss": losses[-1], **parts}) + "\n")
                step += 1
            record = EpochRecord(epoch, float(np.mean(losses)))
            if out_dir is not None:
                path = Path(out_dir) / f"epoch_{epoch:03d}.ckpt"
                meta = dict(checkpoint_meta or {})
                meta.update(epoch=epoch, seed=cfg.seed, mean_loss=record.mean_loss)
                save_checkpoint(path, model, meta)
                record.checkpoint = str(path)
            logger.info("epoch %d: mean loss %.4f", epoch, record.mean_loss)
            records.append(record)
    finally:
        if log_fh:
            log_fh.close()
        model.eval()
    return records
