"""Procedural cloth-changing re-ID dataset with ground-truth parsing and faces.

Each identity owns a body silhouette and a face texture; each outfit owns the
colours and pattern of the upper and lower clothes. A rendered sample places
the body at a small random offset, paints clothes with the outfit texture,
writes the generating category of every pixel into the parsing mask, and
pastes a half-resolution copy of the clean face crop into the head. The
parsing mask stands in for a human parser, ``face_box`` for a face detector and
the clean crop for a face restoration network.

On-disk layout under ``root``::

    images/<id>_<outfit>_<k>.png          RGB, uint8
    masks/<id>_<outfit>_<k>.png           single channel, category code per pixel
    faces/clean/<id>_<outfit>_<k>.png     only for face-bearing samples
    faces/degraded/<id>_<outfit>_<k>.png
    manifest.json
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import resample
from .errors import ConfigError, DataError, ProtocolError, ReIDIOError

BACKGROUND, HEAD, ARM, LEG, UPPER_CLOTHES, LOWER_CLOTHES = range(6)


@dataclass(frozen=True)
class Category:
    code: int
    name: str
    is_cloth_related: bool


CATEGORY_TABLE: tuple[Category, ...] = (
    Category(BACKGROUND, "background", False),
    Category(HEAD, "head", False),
    Category(ARM, "arm", False),
    Category(LEG, "leg", False),
    Category(UPPER_CLOTHES, "upper-clothes", True),
    Category(LOWER_CLOTHES, "lower-clothes", True),
)

SPLITS = ("train", "query", "gallery")
PROTOCOLS = ("cross_clothes", "same_clothes")

# rng stream tags, kept distinct so adding a stream never shifts another
_FACE, _BODY, _OUTFIT, _SAMPLE, _DEGRADE, _FACELESS, _WARDROBE = range(7)


@dataclass
class GenConfig:
    seed: int = 0
    num_identities: int = 20
    outfits_per_identity: int = 3
    samples_per_outfit: int = 6
    image_dims: tuple[int, int] = (64, 32)
    face_dims: tuple[int, int] = (16, 16)
    faceless_fraction: float = 0.1
    # identities [0, num_train_identities) train, the rest are query/gallery
    num_train_identities: int | None = None
    downscale_factor: int = 4
    noise_std: float = 0.1
    # None: every outfit is unique; otherwise outfits are drawn from a pool shared by all identities
    wardrobe_size: int | None = None

    def validate(self) -> None:
        if self.num_identities < 2:
            raise ConfigError("num_identities must be >= 2")
        if self.outfits_per_identity < 2:
            raise ConfigError("outfits_per_identity must be >= 2")
        if self.samples_per_outfit < 1:
            raise ConfigError("samples_per_outfit must be >= 1")
        for name in ("image_dims", "face_dims"):
            dims = getattr(self, name)
            if len(dims) != 2 or min(dims) <= 0:
                raise ConfigError(f"{name} must be two positive integers, got {dims}")
        h, w = self.image_dims
        if h < 16 or w < 8:
            raise ConfigError(f"image_dims {self.image_dims} too small to draw a person")
        if not 0.0 <= self.faceless_fraction <= 1.0:
            raise ConfigError("faceless_fraction must lie in [0, 1]")
        n_train = self.train_identities()
        if not 1 <= n_train < self.num_identities:
            raise ConfigError("num_train_identities must leave at least one identity on each side")
        fh, fw = self.face_dims
        if self.downscale_factor < 2 or self.downscale_factor > min(fh, fw):
            raise ConfigError(f"downscale_factor must lie in [2, {min(fh, fw)}]")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.wardrobe_size is not None and self.wardrobe_size < self.outfits_per_identity:
            raise ConfigError("wardrobe_size must be >= outfits_per_identity")

    def train_identities(self) -> int:
        if self.num_train_identities is None:
            return self.num_identities // 2
        return self.num_train_identities

    @property
    def num_samples(self) -> int:
        return self.num_identities * self.outfits_per_identity * self.samples_per_outfit


@dataclass(frozen=True)
class FacePattern:
    skin: np.ndarray  # (3,)
    coarse: np.ndarray  # (fh//4, fw//4, 3) in [0, 1]; survives the default degradation
    fine: np.ndarray  # (fh//2, fw//2, 3) in [0, 1]; mostly destroyed by it


@dataclass(frozen=True)
class BodyShape:
    head_radius: float  # all lengths are fractions of image height / width
    torso_width: float
    torso_length: float
    lower_length: float
    leg_width: float
    leg_gap: float
    arm_width: float
    skin: np.ndarray
    hair: np.ndarray


@dataclass(frozen=True)
class PersonTraits:
    identity_id: int
    face_pattern: FacePattern
    body_shape: BodyShape
    num_outfits: int


@dataclass(frozen=True)
class Outfit:
    clothing_id: int
    upper: np.ndarray
    upper_alt: np.ndarray
    lower: np.ndarray
    lower_alt: np.ndarray
    pattern: str  # solid | hstripe | vstripe | check
    period: int
    sleeve: float  # fraction of the arm covered by the upper clothes
    trouser: float  # fraction of the leg covered by the lower clothes


@dataclass
class SampleRecord:
    index: int
    identity_id: int
    clothing_id: int
    instance: int
    split: str
    image: str
    mask: str
    face_box: list[int] | None = None  # [y0, x0, y1, x1), image coordinates
    face_clean: str | None = None
    face_degraded: str | None = None
    offset: list[int] = field(default_factory=lambda: [0, 0])  # body placement (dy, dx)

    @property
    def has_face(self) -> bool:
        return self.face_box is not None


@dataclass
class DatasetManifest:
    dataset_seed: int
    category_table: list[Category]
    samples: list[SampleRecord]
    image_dims: tuple[int, int]
    face_dims: tuple[int, int]

    @property
    def cloth_codes(self) -> frozenset[int]:
        return frozenset(c.code for c in self.category_table if c.is_cloth_related)

    def by_split(self, split: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == split]

    def to_json(self) -> str:
        payload = {
            "dataset_seed": self.dataset_seed,
            "category_table": [asdict(c) for c in self.category_table],
            "samples": [asdict(s) for s in self.samples],
            "image_dims": list(self.image_dims),
            "face_dims": list(self.face_dims),
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(
            dataset_seed=raw["dataset_seed"],
            category_table=[Category(**c) for c in raw["category_table"]],
            samples=[SampleRecord(**s) for s in raw["samples"]],
            image_dims=tuple(raw["image_dims"]),
            face_dims=tuple(raw["face_dims"]),
        )

    def save(self, root: str | os.PathLike) -> Path:
        path = Path(root) / "manifest.json"
        try:
            path.write_text(self.to_json(), encoding="utf-8")
        except OSError as exc:
            raise ReIDIOError(f"cannot write {path}: {exc}") from exc
        return path


def load_manifest(root: str | os.PathLike) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ReIDIOError(f"cannot read {path}: {exc}") from exc
    return DatasetManifest.from_json(text)


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    identity_id: int
    clothing_id: int
    parsing_mask: np.ndarray  # (H, W) int
    face_box: tuple[int, int, int, int] | None
    face_clean: np.ndarray | None
    face_degraded: np.ndarray | None
    split: str


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _vivid(rng: np.random.Generator) -> np.ndarray:
    h, s, v = rng.uniform(0, 1), rng.uniform(0.55, 1.0), rng.uniform(0.45, 1.0)
    return np.array(colorsys.hsv_to_rgb(h, s, v))


def person_traits(dataset_seed: int, identity_id: int, num_outfits: int,
                face_dims: Sequence[int] = (16, 16)) -> PersonTraits:
    """Identity descriptors; pure in ``(dataset_seed, identity_id)``."""
    fh, fw = face_dims
    fr = _rng(dataset_seed, _FACE, identity_id)
    skin = np.array(colorsys.hsv_to_rgb(fr.uniform(0.02, 0.1), fr.uniform(0.3, 0.6), fr.uniform(0.5, 0.9)))
    face = FacePattern(
        skin=skin,
        coarse=fr.uniform(0, 1, size=(max(fh // 4, 1), max(fw // 4, 1), 3)),
        fine=fr.uniform(0, 1, size=(max(fh // 2, 1), max(fw // 2, 1), 3)),
    )
    br = _rng(dataset_seed, _BODY, identity_id)
    body = BodyShape(
        head_radius=br.uniform(0.085, 0.11),
        torso_width=br.uniform(0.38, 0.55),
        torso_length=br.uniform(0.28, 0.36),
        lower_length=br.uniform(0.12, 0.18),
        leg_width=br.uniform(0.12, 0.18),
        leg_gap=br.uniform(0.04, 0.14),
        arm_width=br.uniform(0.08, 0.12),
        skin=skin,
        hair=np.array(colorsys.hsv_to_rgb(br.uniform(0, 0.15), br.uniform(0.2, 0.8), br.uniform(0.05, 0.5))),
    )
    return PersonTraits(identity_id, face, body, num_outfits)


def wardrobe_items(dataset_seed: int, identity_id: int, num_outfits: int, wardrobe_size: int) -> list[int]:
    """Distinct shared-wardrobe items worn by one identity, in clothing_id order."""
    r = _rng(dataset_seed, _WARDROBE, identity_id)
    return [int(i) for i in r.choice(wardrobe_size, size=num_outfits, replace=False)]


def outfit(dataset_seed: int, identity_id: int, clothing_id: int, wardrobe_item: int | None = None) -> Outfit:
    """Outfit ``clothing_id`` of an identity; with ``wardrobe_item`` it depends on that item alone."""
    if wardrobe_item is None:
        r = _rng(dataset_seed, _OUTFIT, identity_id, clothing_id)
    else:
        r = _rng(dataset_seed, _WARDROBE, 1 << 20, wardrobe_item)
    return Outfit(
        clothing_id=clothing_id,
        upper=_vivid(r),
        upper_alt=_vivid(r),
        lower=_vivid(r),
        lower_alt=_vivid(r),
        pattern=str(r.choice(["solid", "hstripe", "vstripe", "check"])),
        period=int(r.integers(2, 5)),
        sleeve=float(r.uniform(0.0, 1.0)),
        trouser=float(r.uniform(0.3, 1.0)),
    )


def outfit_texture(o: Outfit, part: int, ly: np.ndarray, lx: np.ndarray) -> np.ndarray:
    """Colour of clothing ``part`` at body-local coordinates; shape ``ly.shape + (3,)``."""
    if part == UPPER_CLOTHES:
        base, alt = o.upper, o.upper_alt
    elif part == LOWER_CLOTHES:
        base, alt = o.lower, o.lower_alt
    else:
        raise ValueError(f"category {part} is not clothing")
    ly = np.asarray(ly)
    lx = np.asarray(lx)
    p = o.period
    if o.pattern == "solid":
        sel = np.zeros(ly.shape, dtype=bool)
    elif o.pattern == "hstripe":
        sel = (ly // p) % 2 == 1
    elif o.pattern == "vstripe":
        sel = (lx // p) % 2 == 1
    else:
        sel = ((ly // p) + (lx // p)) % 2 == 1
    return np.where(sel[..., None], alt, base)


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_clean_face(pattern: FacePattern, face_dims: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    fh, fw = face_dims
    coarse = resample.resize(pattern.coarse, fh, fw, mode="nearest")
    fine = resample.resize(pattern.fine, fh, fw, mode="nearest")
    face = pattern.skin + 0.35 * (coarse - 0.5) + 0.5 * (fine - 0.5)
    # small per-sample jitter: the restored face of one identity is close to canonical
    gain = rng.uniform(0.95, 1.05)
    face = 0.5 + gain * (face - 0.5) + rng.normal(0.0, 0.01, size=face.shape)
    return np.clip(face, 0.0, 1.0)


def degrade_face(face_clean: np.ndarray, downscale_factor: int, noise_std: float, seed: int) -> np.ndarray:
    """Downscale by ``downscale_factor`` (area), upscale back (bilinear), add seeded noise, clip."""
    face = np.asarray(face_clean, dtype=np.float64)
    h, w = face.shape[:2]
    if downscale_factor < 2:
        raise ConfigError(f"downscale_factor must be >= 2, got {downscale_factor}")
    if downscale_factor > min(h, w):
        raise ConfigError(f"downscale_factor {downscale_factor} exceeds face dims {h}x{w}")
    if noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {noise_std}")
    small = resample.resize(face, h // downscale_factor, w // downscale_factor, mode="area")
    out = resample.resize(small, h, w, mode="bilinear")
    if noise_std > 0:
        out = out + np.random.default_rng(seed).normal(0.0, noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def faceless_indices(seed: int, num_samples: int, fraction: float) -> frozenset[int]:
    """Exactly ``round(fraction * num_samples)`` sample indices, chosen by a seeded permutation."""
    count = int(round(fraction * num_samples))
    perm = _rng(seed, _FACELESS).permutation(num_samples)
    return frozenset(int(i) for i in perm[:count])


def _layout(body: BodyShape, h: int, w: int, dy: int, dx: int, face_hw: tuple[int, int]):
    """Integer geometry of the body parts for one placement."""
    cx = w / 2 + dx
    head_r = body.head_radius * h
    head_cy = 1 + head_r + dy
    torso_top = int(round(head_cy + head_r + 1))
    torso_bot = int(round(torso_top + body.torso_length * h))
    lower_bot = int(round(torso_bot + body.lower_length * h))
    half_t = body.torso_width * w / 2
    tx0, tx1 = int(round(cx - half_t)), int(round(cx + half_t))
    aw = max(int(round(body.arm_width * w)), 1)
    lw = max(int(round(body.leg_width * w)), 1)
    gap = int(round(body.leg_gap * w / 2))
    fy0 = int(round(head_cy - face_hw[0] / 2))
    fx0 = int(round(cx - face_hw[1] / 2))
    return dict(
        cx=cx, head_cy=head_cy, head_r=head_r,
        torso=(torso_top, torso_bot, tx0, tx1),
        lower=(torso_bot, lower_bot, tx0 + 1, tx1 - 1),
        arms=[(torso_top + 1, torso_bot - 1, tx0 - aw, tx0), (torso_top + 1, torso_bot - 1, tx1, tx1 + aw)],
        legs=[(torso_bot, h - 1, int(round(cx)) - gap - lw, int(round(cx)) - gap),
              (torso_bot, h - 1, int(round(cx)) + gap, int(round(cx)) + gap + lw)],
        face=(fy0, fx0, fy0 + face_hw[0], fx0 + face_hw[1]),
    )


def render_sample(traits: PersonTraits, o: Outfit, image_dims: Sequence[int], face_dims: Sequence[int],
                  rng: np.random.Generator, with_face: bool):
    """Render one image; returns ``(image_u8, mask_u8, face_box | None, face_clean_float | None, (dy, dx))``."""
    h, w = image_dims
    body = traits.body_shape
    dy, dx = int(rng.integers(-1, 2)), int(rng.integers(-2, 3))
    face_hw = (max(face_dims[0] // 2, 2), max(face_dims[1] // 2, 2))
    lay = _layout(body, h, w, dy, dx, face_hw)

    bg = rng.uniform(0.25, 0.6) * np.ones(3) + rng.uniform(-0.08, 0.08, size=3)
    img = np.clip(bg + rng.normal(0.0, 0.03, size=(h, w, 3)), 0, 1)
    mask = np.zeros((h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]

    def box(y0, y1, x0, x1):
        return (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)

    # painter's order: later parts overwrite earlier ones
    for (y0, y1, x0, x1) in lay["legs"]:
        m = box(y0, y1, x0, x1)
        img[m], mask[m] = body.skin, LEG
    t0, t1, tx0, tx1 = lay["torso"]
    for (y0, y1, x0, x1) in lay["arms"]:
        m = box(y0, y1, x0, x1)
        img[m], mask[m] = body.skin, ARM
        sleeve_end = y0 + int(round(o.sleeve * (y1 - y0)))
        m = box(y0, sleeve_end, x0, x1)
        mask[m] = UPPER_CLOTHES
    l0, l1, lx0, lx1 = lay["lower"]
    trouser_end = l0 + int(round(o.trouser * (h - 1 - l0)))
    mask[box(l0, l1, lx0, lx1)] = LOWER_CLOTHES
    for (y0, y1, x0, x1) in lay["legs"]:
        mask[box(y0, trouser_end, x0, x1)] = LOWER_CLOTHES
    mask[box(t0, t1, tx0, tx1)] = UPPER_CLOTHES

    head = ((yy - lay["head_cy"]) / lay["head_r"]) ** 2 + ((xx - lay["cx"]) / (0.8 * lay["head_r"])) ** 2 <= 1.0
    img[head], mask[head] = (body.skin if with_face else body.hair), HEAD
    neck = box(int(lay["head_cy"] + lay["head_r"]) - 1, t0, int(round(lay["cx"])) - 2, int(round(lay["cx"])) + 2)
    neck &= mask == BACKGROUND
    img[neck], mask[neck] = body.skin, HEAD

    # body-local coordinates make the clothing texture move with the body
    ly, lx = yy - dy, xx - dx
    for part in (UPPER_CLOTHES, LOWER_CLOTHES):
        m = mask == part
        img[m] = outfit_texture(o, part, ly[m], lx[m])

    face_box = face_clean = None
    if with_face:
        face_clean = render_clean_face(traits.face_pattern, face_dims, rng)
        fy0, fx0, fy1, fx1 = lay["face"]
        fy0, fx0 = max(fy0, 0), max(fx0, 0)
        fy1, fx1 = min(fy0 + face_hw[0], h), min(fx0 + face_hw[1], w)
        patch = resample.resize(face_clean, fy1 - fy0, fx1 - fx0, mode="area")
        img[fy0:fy1, fx0:fx1] = patch
        mask[fy0:fy1, fx0:fx1] = HEAD
        face_box = [fy0, fx0, fy1, fx1]
    return quantize(img), mask, face_box, face_clean, (dy, dx)


def _write_png(path: Path, array: np.ndarray) -> None:
    try:
        Image.fromarray(array).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise ReIDIOError(f"cannot write {path}: {exc}") from exc


def generate_dataset(config: GenConfig, root: str | os.PathLike) -> DatasetManifest:
    """Render every sample to ``root`` and return the manifest (also written there).

    Splits follow the cross-clothes protocol; call :func:`split_protocol` to
    re-split.
    """
    config.validate()
    root = Path(root)
    try:
        for sub in ("images", "masks", "faces/clean", "faces/degraded"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReIDIOError(f"cannot create dataset directory {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise ReIDIOError(f"dataset directory {root} is not writable")

    faceless = faceless_indices(config.seed, config.num_samples, config.faceless_fraction)
    n_train = config.train_identities()
    samples: list[SampleRecord] = []
    index = 0
    for pid in range(config.num_identities):
        traits = person_traits(config.seed, pid, config.outfits_per_identity, config.face_dims)
        items = (wardrobe_items(config.seed, pid, config.outfits_per_identity, config.wardrobe_size)
                 if config.wardrobe_size is not None else [None] * config.outfits_per_identity)
        for cid in range(config.outfits_per_identity):
            o = outfit(config.seed, pid, cid, items[cid])
            for k in range(config.samples_per_outfit):
                name = f"{pid:04d}_{cid:02d}_{k:02d}.png"
                has_face = index not in faceless
                img, mask, face_box, face_clean, (dy, dx) = render_sample(
                    traits, o, config.image_dims, config.face_dims, _rng(config.seed, _SAMPLE, index), has_face)
                _write_png(root / "images" / name, img)
                _write_png(root / "masks" / name, mask)
                rec = SampleRecord(
                    index=index, identity_id=pid, clothing_id=cid, instance=k,
                    split="train" if pid < n_train else "gallery",
                    image=f"images/{name}", mask=f"masks/{name}", offset=[dy, dx],
                )
                if has_face:
                    seed = int(_rng(config.seed, _DEGRADE, index).integers(2**31))
                    clean_u8 = quantize(face_clean)
                    degraded = degrade_face(clean_u8 / 255.0, config.downscale_factor, config.noise_std, seed)
                    _write_png(root / "faces" / "clean" / name, clean_u8)
                    _write_png(root / "faces" / "degraded" / name, quantize(degraded))
                    rec.face_box = face_box
                    rec.face_clean = f"faces/clean/{name}"
                    rec.face_degraded = f"faces/degraded/{name}"
                samples.append(rec)
                index += 1

    manifest = DatasetManifest(
        dataset_seed=config.seed,
        category_table=list(CATEGORY_TABLE),
        samples=samples,
        image_dims=tuple(config.image_dims),
        face_dims=tuple(config.face_dims),
    )
    manifest = split_protocol(manifest, "cross_clothes")
    manifest.save(root)
    return manifest


def split_protocol(manifest: DatasetManifest, protocol: str) -> DatasetManifest:
    """Reassign query/gallery among the non-train samples.

    ``cross_clothes``: an identity's first outfit is its query set, every other
    outfit its gallery. ``same_clothes``: only the first outfit is kept; its
    first half of instances is the query set, the rest the gallery.
    """
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    test = [s for s in manifest.samples if s.split != "train"]
    by_id: dict[int, list[SampleRecord]] = {}
    for s in test:
        by_id.setdefault(s.identity_id, []).append(s)

    reassigned: dict[int, str] = {}
    for pid, recs in sorted(by_id.items()):
        outfits = sorted({r.clothing_id for r in recs})
        first = outfits[0]
        if protocol == "cross_clothes":
            if len(outfits) < 2:
                raise ProtocolError(f"identity {pid} has a single outfit; cross_clothes needs >= 2")
            for r in recs:
                reassigned[r.index] = "query" if r.clothing_id == first else "gallery"
        else:
            same = sorted((r for r in recs if r.clothing_id == first), key=lambda r: r.instance)
            if len(same) < 2:
                raise ProtocolError(f"identity {pid} has a single sample in outfit {first}; same_clothes needs >= 2")
            n_query = len(same) // 2
            for i, r in enumerate(same):
                reassigned[r.index] = "query" if i < n_query else "gallery"

    samples = []
    for s in manifest.samples:
        if s.split == "train":
            samples.append(replace(s))
        elif s.index in reassigned:
            samples.append(replace(s, split=reassigned[s.index]))
    return replace(manifest, samples=samples)


def _read_png(root: Path, rel: str) -> np.ndarray:
    path = root / rel
    try:
        with Image.open(path) as im:
            return np.asarray(im).copy()
    except OSError as exc:
        raise ReIDIOError(f"cannot read {path}: {exc}") from exc


def load_sample(root: str | os.PathLike, rec: SampleRecord, manifest: DatasetManifest | None = None) -> SyntheticSample:
    root = Path(root)
    mask = _read_png(root, rec.mask).astype(np.int64)
    if manifest is not None:
        known = {c.code for c in manifest.category_table}
        bad = set(np.unique(mask).tolist()) - known
        if bad:
            raise DataError(f"{rec.mask}: unknown category codes {sorted(bad)}")
    face_clean = face_degraded = None
    if rec.has_face:
        face_clean = _read_png(root, rec.face_clean) / 255.0
        face_degraded = _read_png(root, rec.face_degraded) / 255.0
    return SyntheticSample(
        image=_read_png(root, rec.image) / 255.0,
        identity_id=rec.identity_id,
        clothing_id=rec.clothing_id,
        parsing_mask=mask,
        face_box=tuple(rec.face_box) if rec.face_box else None,
        face_clean=face_clean,
        face_degraded=face_degraded,
        split=rec.split,
    )


def iter_samples(root: str | os.PathLike, records: Iterable[SampleRecord]):
    for rec in records:
        yield load_sample(root, rec)
