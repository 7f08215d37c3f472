"""Global stream and face networks.

Tensors are NCHW. A "feature map" is ``(N, c_f, h_f, w_f)``; an attention map
is ``(N, 1, h_f, w_f)`` and broadcasts across channels.

The backbone is a small stand-in for a truncated OSNet: three conv blocks,
two of them strided, so ``h_f = H/4`` and ``w_f = W/4``. The head is a
four-branch stand-in for a multi-branch network (global, upper part, lower
part, channel split). Each branch yields one pre-classifier feature and one
logit vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError, StateError

NUM_BRANCHES = 4


@dataclass
class EmbeddingGroups:
    logits: list[torch.Tensor]  # each (N, num_identities)
    features: list[torch.Tensor]  # each (N, embed_dim)

    def concat_features(self) -> torch.Tensor:
        return torch.cat(self.features, dim=1)


@dataclass(frozen=True)
class NetConfig:
    input_dims: tuple[int, int]
    num_identities: int
    channels: int = 32
    head_channels: int = 64
    embed_dim: int = 64

    def validate(self) -> None:
        h, w = self.input_dims
        if h % 4 or w % 4 or h < 8 or w < 8:
            raise ConfigError(f"input dims {self.input_dims} must be multiples of 4 and >= 8")
        if self.embed_dim % 2 or self.head_channels % 2:
            raise ConfigError("embed_dim and head_channels must be even (channel branch splits them)")
        if self.num_identities < 2:
            raise ConfigError("num_identities must be >= 2")


def _block(c_in: int, c_out: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=False),
    )


class Backbone(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.input_dims = tuple(cfg.input_dims)
        c = cfg.channels
        self.layers = nn.Sequential(_block(3, c // 2, 1), _block(c // 2, c, 2), _block(c, c, 2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != self.input_dims:
            raise ShapeError(f"expected (N, 3, {self.input_dims[0]}, {self.input_dims[1]}), got {tuple(x.shape)}")
        return self.layers(x - 0.5)


def backbone_forward(image: torch.Tensor, backbone: Backbone) -> torch.Tensor:
    return backbone(image)


def cam_forward(feature_map: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Sigmoid of a point-wise (1x1) convolution to a single channel.

    ``weight`` holds one scalar per input channel (any shape with ``c_f``
    elements); ``bias`` is a scalar.
    """
    c = feature_map.shape[1]
    if weight.numel() != c:
        raise ShapeError(f"attention filter has {weight.numel()} taps, feature map has {c} channels")
    logits = torch.einsum("nchw,c->nhw", feature_map, weight.reshape(c)) + bias.reshape(())
    return torch.sigmoid(logits).unsqueeze(1)


def apply_attention(feature_map: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
    if feature_map.shape[-2:] != attention.shape[-2:] or attention.shape[1] != 1:
        raise ShapeError(f"attention {tuple(attention.shape)} does not fit feature map {tuple(feature_map.shape)}")
    return feature_map * attention


class CAM(nn.Module):
    """Point-wise conv + sigmoid. Bias starts at +1 so early attention passes features through (~0.73)."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(channels) * 0.01)
        self.bias = nn.Parameter(torch.ones(()))

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        return cam_forward(feature_map, self.weight, self.bias)


class MultiBranchHead(nn.Module):
    """Global / upper-part / lower-part / channel-split branches.

    Each branch owns a bias-free 1x1 conv + LeakyReLU. The part branches split
    the map into horizontal halves before their conv, so a half that is zero
    pools to exactly zero, and a zero map yields zero features.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        c, e = cfg.head_channels, cfg.embed_dim

        def conv():
            return nn.Sequential(nn.Conv2d(cfg.channels, c, 1, bias=False), nn.LeakyReLU(0.1))

        self.convs = nn.ModuleList([conv() for _ in range(NUM_BRANCHES)])
        self.embed_global = nn.Linear(c, e, bias=False)
        self.embed_upper = nn.Linear(c, e, bias=False)
        self.embed_lower = nn.Linear(c, e, bias=False)
        self.embed_chan = nn.ModuleList([nn.Linear(c // 2, e // 2, bias=False) for _ in range(2)])
        self.classifiers = nn.ModuleList([nn.Linear(e, cfg.num_identities) for _ in range(NUM_BRANCHES)])
        # default init leaves the bias-free path with tiny features and a stalled classifier
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)) and m not in self.classifiers:
                nn.init.kaiming_normal_(m.weight, a=0.1, nonlinearity="leaky_relu")

    def pooled(self, feature_map: torch.Tensor) -> list[torch.Tensor]:
        """Branch inputs before the embedding projections: global, upper, lower, channel halves."""
        half = feature_map.shape[2] // 2
        g = self.convs[0](feature_map).mean(dim=(2, 3))
        up = self.convs[1](feature_map[:, :, :half]).mean(dim=(2, 3))
        low = self.convs[2](feature_map[:, :, half:]).mean(dim=(2, 3))
        ch = self.convs[3](feature_map).mean(dim=(2, 3))
        c = ch.shape[1] // 2
        return [g, up, low, ch[:, :c], ch[:, c:]]

    def forward(self, feature_map: torch.Tensor) -> EmbeddingGroups:
        g, up, low, c0, c1 = self.pooled(feature_map)
        feats = [
            self.embed_global(g),
            self.embed_upper(up),
            self.embed_lower(low),
            torch.cat([self.embed_chan[0](c0), self.embed_chan[1](c1)], dim=1),
        ]
        logits = [clf(f) for clf, f in zip(self.classifiers, feats)]
        return EmbeddingGroups(logits=logits, features=feats)


def mbn_forward(attended: torch.Tensor, head: MultiBranchHead) -> EmbeddingGroups:
    return head(attended)


class GlobalStream(nn.Module):
    """Backbone -> (optional) attention -> multi-branch head.

    With ``use_cam`` the head only ever sees the attended map.
    """

    def __init__(self, cfg: NetConfig, use_cam: bool = True):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.cam = CAM(cfg.channels) if use_cam else None
        self.head = MultiBranchHead(cfg)

    @property
    def use_cam(self) -> bool:
        return self.cam is not None

    def attention(self, images: torch.Tensor) -> torch.Tensor | None:
        if self.cam is None:
            return None
        return self.cam(self.backbone(images))

    def forward(self, images: torch.Tensor) -> tuple[EmbeddingGroups, torch.Tensor | None]:
        fmap = self.backbone(images)
        if self.cam is None:
            return self.head(fmap), None
        att = self.cam(fmap)
        return self.head(apply_attention(fmap, att)), att


class FaceNet(nn.Module):
    """Backbone + multi-branch head on face crops. Teacher and student share this class."""

    def __init__(self, cfg: NetConfig, role: str):
        super().__init__()
        if role not in ("teacher", "student"):
            raise ConfigError(f"face net role must be teacher or student, got {role!r}")
        cfg.validate()
        self.cfg = cfg
        self.role = role
        self.backbone = Backbone(cfg)
        self.head = MultiBranchHead(cfg)
        self.frozen = False
        self.trained = False

    def forward(self, faces: torch.Tensor) -> EmbeddingGroups:
        return self.head(self.backbone(faces))


def teacher_forward(teacher: FaceNet, face_clean: torch.Tensor) -> EmbeddingGroups:
    if teacher.frozen:
        with torch.no_grad():
            return teacher(face_clean)
    return teacher(face_clean)


def student_forward(student: FaceNet, face_degraded: torch.Tensor) -> EmbeddingGroups:
    return student(face_degraded)


def freeze_teacher(teacher: FaceNet) -> FaceNet:
    if not teacher.trained:
        raise StateError("teacher has not been pretrained or loaded; refusing to freeze")
    for p in teacher.parameters():
        p.requires_grad_(False)
        p.grad = None
    teacher.eval()
    teacher.frozen = True
    return teacher


def check_alignment(teacher: FaceNet, student: FaceNet) -> None:
    """Per-index logit shapes must agree for the distillation sum to be defined."""
    t, s = teacher.cfg, student.cfg
    if t.num_identities != s.num_identities or t.input_dims != s.input_dims:
        raise ConfigError(
            f"teacher ({t.num_identities} ids, {t.input_dims}) and student "
            f"({s.num_identities} ids, {s.input_dims}) are not aligned")
    if len(teacher.head.classifiers) != len(student.head.classifiers):
        raise ConfigError("teacher and student have different numbers of logit groups")
