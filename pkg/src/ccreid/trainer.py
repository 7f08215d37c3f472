"""Teacher pretraining and joint training.

Metrics logs are JSON lines, one record per optimisation step, with keys in
the order ``step, att, trip, fkp, ce_s, ce_g, total``. Terms that are not
active in a configuration are logged as ``0.0``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import TrainConfig
from .errors import BatchCompositionError, ConfigError, DataError
from .losses import (LOSS_TERMS, attention_loss, batch_hard_triplet, cloth_irrelevant_mask, cross_entropy_sum,
                     fkp_loss, total_loss)
from .nets import FaceNet, GlobalStream, NetConfig, check_alignment, freeze_teacher
from .synth import DatasetManifest, SampleRecord, load_manifest, load_sample

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step",) + LOSS_TERMS + ("total",)


def setup_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


# --------------------------------------------------------------------------- data


@dataclass
class TensorData:
    """All samples of one split stacked into tensors; faceless rows hold zero faces."""

    records: list[SampleRecord]
    images: torch.Tensor  # (N, 3, H, W)
    masks: torch.Tensor  # (N, H, W) parsing codes
    att_targets: torch.Tensor  # (N, 1, H/4, W/4) resized cloth-irrelevant masks
    faces_clean: torch.Tensor  # (N, 3, fh, fw)
    faces_degraded: torch.Tensor
    has_face: torch.Tensor  # (N,) bool
    identities: torch.Tensor  # (N,) raw identity ids
    clothing: torch.Tensor

    def __len__(self) -> int:
        return len(self.records)


def load_tensors(root: str | os.PathLike, manifest: DatasetManifest, records: Sequence[SampleRecord],
                 epsilon: float = 0.1, mask_resize: str = "area") -> TensorData:
    h, w = manifest.image_dims
    fh, fw = manifest.face_dims
    cloth = manifest.cloth_codes
    known = [c.code for c in manifest.category_table]
    imgs, masks, targets, fc, fd, has = [], [], [], [], [], []
    for rec in records:
        s = load_sample(root, rec)
        imgs.append(s.image.transpose(2, 0, 1))
        masks.append(s.parsing_mask)
        targets.append(cloth_irrelevant_mask(s.parsing_mask, cloth, epsilon, (h // 4, w // 4),
                                             known_codes=known, resize_mode=mask_resize).resized)
        has.append(s.face_clean is not None)
        fc.append(s.face_clean.transpose(2, 0, 1) if has[-1] else np.zeros((3, fh, fw)))
        fd.append(s.face_degraded.transpose(2, 0, 1) if has[-1] else np.zeros((3, fh, fw)))

    def stack(xs, dtype=torch.float32):
        return torch.as_tensor(np.stack(xs), dtype=dtype) if xs else torch.zeros(0, dtype=dtype)

    return TensorData(
        records=list(records),
        images=stack(imgs),
        masks=stack(masks, torch.int64),
        att_targets=stack(targets).unsqueeze(1),
        faces_clean=stack(fc),
        faces_degraded=stack(fd),
        has_face=torch.as_tensor(has, dtype=torch.bool),
        identities=torch.as_tensor([r.identity_id for r in records], dtype=torch.int64),
        clothing=torch.as_tensor([r.clothing_id for r in records], dtype=torch.int64),
    )


def label_map(records: Sequence[SampleRecord]) -> dict[int, int]:
    """Contiguous classifier labels for the training identities."""
    return {pid: i for i, pid in enumerate(sorted({r.identity_id for r in records}))}


# --------------------------------------------------------------------------- sampling


class PKSampler:
    """Epoch-based P x K identity sampler.

    Each epoch shuffles every identity's samples, pads them (with repeats of the
    same identity) to a multiple of K and cuts K-chunks. Batches then take one
    chunk from each of the P identities with the most chunks left, so every
    sample appears at least once per epoch. Identities that run out early are
    topped up with fresh random chunks. Everything is a function of
    ``(seed, epoch)``.
    """

    def __init__(self, labels: Sequence[int], P: int, K: int, seed: int):
        if P < 2 or K < 2:
            raise BatchCompositionError(f"P and K must both be >= 2, got P={P}, K={K}")
        by_id: dict[int, list[int]] = {}
        for i, y in enumerate(labels):
            by_id.setdefault(int(y), []).append(i)
        self.by_id = {k: v for k, v in sorted(by_id.items()) if len(v) >= K}
        if len(self.by_id) < P:
            raise BatchCompositionError(
                f"need {P} identities with >= {K} samples, have {len(self.by_id)}")
        self.P, self.K, self.seed = P, K, seed
        self._epochs: list[list[list[int]]] = []

    def _build_epoch(self, epoch: int) -> list[list[int]]:
        rng = np.random.default_rng([self.seed, epoch])
        chunks: dict[int, list[list[int]]] = {}
        for pid, idx in self.by_id.items():
            order = list(rng.permutation(idx))
            pad = (-len(order)) % self.K
            if pad:
                order += list(rng.choice(idx, size=pad, replace=False))
            chunks[pid] = [[int(i) for i in order[j:j + self.K]] for j in range(0, len(order), self.K)]
        priority = {pid: float(u) for pid, u in zip(self.by_id, rng.uniform(size=len(self.by_id)))}
        batches = []
        while any(chunks.values()):
            ranked = sorted(self.by_id, key=lambda p: (-len(chunks[p]), priority[p]))
            batch = []
            for pid in ranked[:self.P]:
                if chunks[pid]:
                    batch.extend(chunks[pid].pop())
                else:
                    batch.extend(int(i) for i in rng.choice(self.by_id[pid], size=self.K, replace=False))
            batches.append(batch)
        return batches

    def epoch(self, epoch: int) -> list[list[int]]:
        while len(self._epochs) <= epoch:
            self._epochs.append(self._build_epoch(len(self._epochs)))
        return self._epochs[epoch]

    def batches_per_epoch(self) -> int:
        return len(self.epoch(0))

    def batch(self, step: int) -> list[int]:
        e = 0
        while step >= len(self.epoch(e)):
            step -= len(self.epoch(e))
            e += 1
        return self.epoch(e)[step]


@lru_cache(maxsize=32)
def _cached_sampler(labels: tuple[int, ...], P: int, K: int, seed: int) -> PKSampler:
    return PKSampler(labels, P, K, seed)


def sample_batch(manifest: DatasetManifest, P: int, K: int, seed: int, step: int,
                 split: str = "train") -> list[SampleRecord]:
    """The P*K records of batch ``step``; deterministic in ``(seed, step)``."""
    records = manifest.by_split(split)
    sampler = _cached_sampler(tuple(r.identity_id for r in records), P, K, seed)
    return [records[i] for i in sampler.batch(step)]


# --------------------------------------------------------------------------- models


def _net_config(cfg: TrainConfig, dims, num_ids: int) -> NetConfig:
    return NetConfig(input_dims=tuple(dims), num_identities=num_ids, channels=cfg.channels,
                     head_channels=cfg.head_channels, embed_dim=cfg.embed_dim)


def _seeded(seed: int, salt: int) -> None:
    torch.manual_seed(seed * 1009 + salt)


def _optimizer(cfg: TrainConfig, params) -> torch.optim.Optimizer:
    params = list(params)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(params, lr=cfg.lr, momentum=0.9, weight_decay=cfg.weight_decay)


def param_digest(module: torch.nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class MetricsLog:
    def __init__(self, path: str | os.PathLike | None = None):
        self.records: list[dict[str, float]] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, step: int, parts: dict[str, float], total: float) -> None:
        rec = {"step": step, **{k: float(parts.get(k, 0.0)) for k in LOSS_TERMS}, "total": float(total)}
        self.records.append(rec)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")


def read_metrics(path: str | os.PathLike) -> list[dict[str, float]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# --------------------------------------------------------------------------- teacher


@dataclass
class TeacherResult:
    checkpoint: ckpt.Checkpoint
    teacher: FaceNet
    losses: list[float]


def pretrain_teacher(root: str | os.PathLike, cfg: TrainConfig, manifest: DatasetManifest | None = None,
                     metrics_path: str | os.PathLike | None = None) -> TeacherResult:
    """Train the teacher on clean faces with cross-entropy + batch-hard triplet."""
    cfg.validate()
    setup_determinism()
    manifest = manifest or load_manifest(root)
    train = [r for r in manifest.by_split("train") if r.has_face]
    if not train:
        raise DataError("no face-bearing training samples; cannot pretrain the teacher")
    lmap = label_map(manifest.by_split("train"))
    data = load_tensors(root, manifest, train, cfg.epsilon, cfg.mask_resize)
    labels = torch.as_tensor([lmap[r.identity_id] for r in train])
    sampler = PKSampler(labels.tolist(), cfg.P, cfg.K, cfg.seed * 7 + 1)

    _seeded(cfg.seed, 2)
    teacher = FaceNet(_net_config(cfg, manifest.face_dims, len(lmap)), role="teacher")
    opt = _optimizer(cfg, teacher.parameters())
    metrics = MetricsLog(metrics_path)
    losses = []
    teacher.train()
    for step in range(cfg.teacher_steps):
        idx = torch.as_tensor(sampler.batch(step))
        y = labels[idx]
        groups = teacher(data.faces_clean[idx])
        parts = {"ce_s": cross_entropy_sum(groups.logits, y),
                 "trip": batch_hard_triplet(groups.features, y, cfg.triplet_margin)}
        # teacher objective is plain ce + triplet: alpha = 0 routes ce_s with weight 1
        weights = replace(cfg.loss_weights(), alpha=0.0, lambda_att=0.0)
        loss = total_loss(parts, weights)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        values = {k: float(v.detach()) for k, v in parts.items()}
        total = float(total_loss(values, weights))
        metrics.append(step, values, total)
        losses.append(total)
    teacher.eval()
    teacher.trained = True

    meta = {
        "kind": "teacher",
        "step": cfg.teacher_steps,
        "dataset_seed": manifest.dataset_seed,
        "config": cfg.to_dict(),
        "face_net": _netcfg_dict(teacher.cfg),
        "label_map": {str(k): v for k, v in lmap.items()},
    }
    return TeacherResult(ckpt.Checkpoint(ckpt.module_tensors(teacher, "teacher"), meta), teacher, losses)


def _netcfg_dict(n: NetConfig) -> dict:
    return {"input_dims": list(n.input_dims), "num_identities": n.num_identities, "channels": n.channels,
            "head_channels": n.head_channels, "embed_dim": n.embed_dim}


def _netcfg(d: dict) -> NetConfig:
    return NetConfig(**{**d, "input_dims": tuple(d["input_dims"])})


def load_teacher(source: ckpt.Checkpoint | str | os.PathLike) -> FaceNet:
    c = source if isinstance(source, ckpt.Checkpoint) else ckpt.load(source)
    if c.metadata.get("kind") != "teacher":
        raise ConfigError("checkpoint is not a teacher checkpoint")
    teacher = FaceNet(_netcfg(c.metadata["face_net"]), role="teacher")
    teacher.load_state_dict(c.state_dict("teacher"))
    teacher.trained = True
    return freeze_teacher(teacher)


# --------------------------------------------------------------------------- joint


@dataclass
class JointResult:
    checkpoint: ckpt.Checkpoint
    global_model: GlobalStream | None
    face_model: FaceNet | None
    metrics: list[dict[str, float]]
    teacher_digest_before: str | None = None
    teacher_digest_after: str | None = None


def joint_step_parts(cfg: TrainConfig, data: TensorData, idx: torch.Tensor, y: torch.Tensor,
                     global_model: GlobalStream | None, student: FaceNet | None,
                     teacher: FaceNet | None) -> dict[str, torch.Tensor]:
    """Loss terms for one batch. Face terms use the face-bearing rows only."""
    parts: dict[str, torch.Tensor] = {}
    trip = None
    if global_model is not None:
        groups, att = global_model(data.images[idx])
        parts["ce_g"] = cross_entropy_sum(groups.logits, y)
        trip = batch_hard_triplet(groups.features, y, cfg.triplet_margin)
        if cfg.use_att_loss:
            parts["att"] = attention_loss(att, data.att_targets[idx])
    if student is not None:
        sub = data.has_face[idx]
        if bool(sub.any()):
            fidx, fy = idx[sub], y[sub]
            s_groups = student(data.faces_degraded[fidx])
            parts["ce_s"] = cross_entropy_sum(s_groups.logits, fy)
            if _triplet_ok(fy):
                t = batch_hard_triplet(s_groups.features, fy, cfg.triplet_margin)
                trip = t if trip is None else trip + t
            if cfg.face_variant == "student_distilled":
                with torch.no_grad():
                    t_groups = teacher(data.faces_clean[fidx])
                parts["fkp"] = fkp_loss(s_groups.logits, t_groups.logits, cfg.temperature)
    if trip is not None:
        parts["trip"] = trip
    return parts


def _triplet_ok(y: torch.Tensor) -> bool:
    _, counts = torch.unique(y, return_counts=True)
    return len(counts) >= 2 and int(counts.max()) >= 2


def train_joint(root: str | os.PathLike, cfg: TrainConfig, teacher_source=None,
                manifest: DatasetManifest | None = None, metrics_path: str | os.PathLike | None = None,
                probe: Callable[[int, GlobalStream | None, FaceNet | None], None] | None = None) -> JointResult:
    """Optimise the total loss over the global stream and (unless it is the teacher) the face net.

    ``teacher_source`` is a checkpoint or path; it falls back to
    ``cfg.teacher_checkpoint`` and is required for the distilled and teacher
    face variants. ``probe(step, global_model, face_model)`` is called before
    the first and after the last step.
    """
    cfg.validate()
    setup_determinism()
    manifest = manifest or load_manifest(root)
    train = manifest.by_split("train")
    lmap = label_map(train)
    num_ids = len(lmap)

    teacher = None
    if cfg.needs_teacher:
        teacher_source = teacher_source if teacher_source is not None else cfg.teacher_checkpoint
        if teacher_source is None:
            raise ConfigError(f"face_variant {cfg.face_variant!r} needs a teacher checkpoint")
        teacher = load_teacher(teacher_source)
        if teacher.cfg.num_identities != num_ids or tuple(teacher.cfg.input_dims) != tuple(manifest.face_dims):
            raise ConfigError(
                f"teacher ({teacher.cfg.num_identities} ids, faces {teacher.cfg.input_dims}) incompatible with "
                f"dataset ({num_ids} ids, faces {tuple(manifest.face_dims)})")

    global_model = None
    if cfg.use_global_stream:
        _seeded(cfg.seed, 0)
        global_model = GlobalStream(_net_config(cfg, manifest.image_dims, num_ids), use_cam=cfg.use_cam)
    student = None
    if cfg.use_face_stream and cfg.face_variant != "teacher":
        _seeded(cfg.seed, 1)
        student = FaceNet(_net_config(cfg, manifest.face_dims, num_ids), role="student")
        if teacher is not None:
            check_alignment(teacher, student)
    face_model = teacher if cfg.face_variant == "teacher" and cfg.use_face_stream else student

    # face-only runs sample batches from face-bearing images
    pool = train if global_model is not None else [r for r in train if r.has_face]
    if not pool:
        raise DataError("no usable training samples")
    data = load_tensors(root, manifest, pool, cfg.epsilon, cfg.mask_resize)
    labels = torch.as_tensor([lmap[r.identity_id] for r in pool])
    sampler = PKSampler(labels.tolist(), cfg.P, cfg.K, cfg.seed)

    trainable = [m for m in (global_model, student) if m is not None]
    params = [p for m in trainable for p in m.parameters()]
    digest_before = param_digest(teacher) if teacher is not None else None
    metrics = MetricsLog(metrics_path)
    weights = cfg.loss_weights()
    steps = cfg.steps if params else 0
    if probe is not None:
        probe(0, global_model, face_model)
    if params:
        opt = _optimizer(cfg, params)
        for m in trainable:
            m.train()
        for step in range(steps):
            idx = torch.as_tensor(sampler.batch(step))
            y = labels[idx]
            parts = joint_step_parts(cfg, data, idx, y, global_model, student, teacher)
            loss = total_loss(parts, weights)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            values = {k: float(v.detach()) for k, v in parts.items()}
            metrics.append(step, values, float(total_loss(values, weights)))
    for m in trainable:
        m.eval()
    if probe is not None:
        probe(steps, global_model, face_model)

    tensors = {}
    meta = {
        "kind": "joint",
        "step": steps,
        "dataset_seed": manifest.dataset_seed,
        "config": cfg.to_dict(),
        "label_map": {str(k): v for k, v in lmap.items()},
        "global_net": None,
        "face_net": None,
        "teacher_digest": digest_before,
    }
    if global_model is not None:
        tensors.update(ckpt.module_tensors(global_model, "global"))
        meta["global_net"] = _netcfg_dict(global_model.cfg)
        meta["use_cam"] = global_model.use_cam
    if face_model is not None:
        tensors.update(ckpt.module_tensors(face_model, "face"))
        meta["face_net"] = _netcfg_dict(face_model.cfg)
    return JointResult(
        checkpoint=ckpt.Checkpoint(tensors, meta),
        global_model=global_model,
        face_model=face_model,
        metrics=metrics.records,
        teacher_digest_before=digest_before,
        teacher_digest_after=param_digest(teacher) if teacher is not None else None,
    )


def load_joint(source: ckpt.Checkpoint | str | os.PathLike) -> tuple[GlobalStream | None, FaceNet | None, dict]:
    c = source if isinstance(source, ckpt.Checkpoint) else ckpt.load(source)
    if c.metadata.get("kind") != "joint":
        raise ConfigError("checkpoint is not a joint checkpoint")
    meta = c.metadata
    global_model = face_model = None
    if meta.get("global_net"):
        global_model = GlobalStream(_netcfg(meta["global_net"]), use_cam=meta.get("use_cam", True))
        global_model.load_state_dict(c.state_dict("global"))
        global_model.eval()
    if meta.get("face_net"):
        face_model = FaceNet(_netcfg(meta["face_net"]), role="student")
        face_model.load_state_dict(c.state_dict("face"))
        face_model.trained = True
        face_model.eval()
    return global_model, face_model, meta


def mean_attention_by_region(global_model: GlobalStream, data: TensorData,
                             cloth_codes) -> tuple[float, float]:
    """Mean attention over ground-truth (cloth, non-cloth) pixels.

    The attention map is upsampled to image resolution by repetition, so each
    pixel reads the attention of the feature cell it falls in.
    """
    with torch.no_grad():
        att = global_model.attention(data.images)[:, 0]
    sy = data.masks.shape[1] // att.shape[1]
    sx = data.masks.shape[2] // att.shape[2]
    att = att.repeat_interleave(sy, dim=1).repeat_interleave(sx, dim=2)
    cloth = torch.isin(data.masks, torch.as_tensor(sorted(cloth_codes)))
    return float(att[cloth].mean()), float(att[~cloth].mean())


def distillation_kl(teacher: FaceNet, student: FaceNet, data: TensorData, temperature: float,
                    max_rows: int = 64) -> float:
    """Mean KL(teacher || student) at ``temperature`` over the first face-bearing rows of ``data``.

    Averaged over samples and logit groups, without the ``tau^2`` factor.
    Both nets are run in eval mode; the student's mode is restored afterwards.
    """
    rows = torch.nonzero(data.has_face).flatten()[:max_rows]
    if len(rows) == 0:
        raise DataError("probe set has no face-bearing samples")
    was_training = student.training
    student.eval()
    with torch.no_grad():
        t = teacher(data.faces_clean[rows]).logits
        s = student(data.faces_degraded[rows]).logits
        kl = fkp_loss(s, t, temperature) / (temperature ** 2 * len(t))
    student.train(was_training)
    return float(kl)
