"""Synthetic "toy faces" dataset with exact semantic masks, plus generic pair loading.

Each sample is a cartoon face built from ellipse/band primitives. Region colors
are drawn from well-separated per-class color boxes so that a nearest-prototype
palette classifier can recover the mask from pixels alone; a mild sinusoidal
shading keeps regions from being perfectly flat. Both eyes in a sample always
share one color, which deliberately entangles the eye style across the face.

Directory layout::

    root/manifest.json
    root/{train,test}/images/NNNNN.png   8-bit RGB
    root/{train,test}/masks/NNNNN.png    single-channel indexed label map
    root/{train,test}/styles/NNNNN.json  per-class base color + texture params
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

CLASS_NAMES = ("background", "skin", "hair", "eyes", "mouth", "nose", "hat")
NUM_CLASSES = len(CLASS_NAMES)
HAT_FRACTION = 0.2
VALID_SIZES = (32, 64, 128)

# Per-class RGB sampling boxes: (center, half-width). Centers are mutually
# distant enough that nearest-prototype classification never crosses classes
# even at the box corners plus shading.
COLOR_BOXES = {
    "background": ((0.15, 0.20, 0.40), (0.05, 0.05, 0.05)),
    "skin": ((0.87, 0.67, 0.52), (0.06, 0.05, 0.05)),
    "hair": ((0.35, 0.18, 0.08), (0.15, 0.10, 0.06)),
    "eyes": ((0.15, 0.55, 0.80), (0.08, 0.10, 0.10)),
    "mouth": ((0.80, 0.15, 0.25), (0.08, 0.06, 0.08)),
    "nose": ((0.92, 0.88, 0.25), (0.05, 0.05, 0.07)),
    "hat": ((0.55, 0.10, 0.60), (0.10, 0.06, 0.10)),
}

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass
class SemanticMask:
    """Integer class map pixel-aligned to an image."""

    classes: np.ndarray  # (H, W) integer labels
    num_classes: int

    def __post_init__(self):
        self.classes = np.asarray(self.classes)
        if self.classes.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.classes.shape}")
        if self.classes.size and (self.classes.min() < 0 or self.classes.max() >= self.num_classes):
            raise ValueError(
                f"mask values must lie in [0, {self.num_classes}), "
                f"got range [{self.classes.min()}, {self.classes.max()}]"
            )

    @property
    def shape(self):
        return self.classes.shape

    def present_classes(self):
        return sorted(int(c) for c in np.unique(self.classes))


@dataclass
class ToySample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: SemanticMask
    style_truth: dict  # class name -> {"color": [r,g,b], "texture": {...}}


@dataclass
class DatasetManifest:
    root: Path
    split: str
    count: int
    image_size: int
    num_classes: int

    @classmethod
    def load(cls, root, split: str) -> "DatasetManifest":
        root = Path(root)
        payload = json.loads((root / MANIFEST_NAME).read_text())
        if payload.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {payload.get('version')!r}")
        if split not in payload["splits"]:
            raise ValueError(f"split {split!r} not in manifest (has {sorted(payload['splits'])})")
        return cls(
            root=root,
            split=split,
            count=payload["splits"][split],
            image_size=payload["image_size"],
            num_classes=payload["num_classes"],
        )

    def image_path(self, index: int) -> Path:
        return self.root / self.split / "images" / f"{index:05d}.png"

    def mask_path(self, index: int) -> Path:
        return self.root / self.split / "masks" / f"{index:05d}.png"

    def style_path(self, index: int) -> Path:
        return self.root / self.split / "styles" / f"{index:05d}.json"

    def load_sample(self, index: int) -> ToySample:
        image, mask = load_pair(self.image_path(index), self.mask_path(index), self.num_classes)
        style_truth = json.loads(self.style_path(index).read_text())["classes"]
        return ToySample(image=image, mask=mask, style_truth=style_truth)


def class_id(name: str) -> int:
    try:
        return CLASS_NAMES.index(name)
    except ValueError:
        raise ValueError(f"unknown class {name!r}; valid names: {', '.join(CLASS_NAMES)}") from None


def one_hot(mask: SemanticMask) -> np.ndarray:
    """Expand a label map to a (C, H, W) binary indicator tensor."""
    c = np.arange(mask.num_classes).reshape(-1, 1, 1)
    return (mask.classes[None] == c).astype(np.float32)


def downsample_mask(mask: SemanticMask, h: int, w: int) -> SemanticMask:
    """Nearest-neighbor label downsampling: keep the top-left sample of each cell."""
    src_h, src_w = mask.shape
    if h < 1 or w < 1 or src_h % h or src_w % w:
        raise ValueError(f"target {h}x{w} must divide mask dims {src_h}x{src_w}")
    sy, sx = src_h // h, src_w // w
    return SemanticMask(mask.classes[::sy, ::sx].copy(), mask.num_classes)


def load_pair(image_path, mask_path, num_classes: int):
    """Load an (image, mask) pair in CelebAMask-HQ-style layout.

    The image is scaled to [0, 1]; the mask is read as an indexed label map and
    validated against the mask invariants. Masks are kept at their stored
    resolution; any resizing happens later via downsample_mask.
    """
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
    mask_img = Image.open(mask_path)
    if mask_img.mode not in ("P", "L", "I", "I;16"):
        raise ValueError(f"mask {mask_path} must be an indexed/grayscale image, got mode {mask_img.mode}")
    labels = np.asarray(mask_img, dtype=np.int64)
    if labels.shape != image.shape[:2]:
        raise ValueError(
            f"image/mask dims differ: image {image.shape[:2]} vs mask {labels.shape}"
        )
    return image, SemanticMask(labels, num_classes)


# ---------------------------------------------------------------------------
# Toy face generation
# ---------------------------------------------------------------------------

def _ellipse(label, yy, xx, cy, cx, ry, rx, value):
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    label[inside] = value


def make_toy_sample(rng: np.random.Generator, size: int) -> ToySample:
    """Draw one face: geometry and colors fully determined by the rng stream."""
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5

    # Colors first (fixed draw order keeps samples reproducible). The two eyes
    # share a single color draw: the dataset-level entanglement is intentional.
    colors = {}
    for name in CLASS_NAMES:
        center, half = COLOR_BOXES[name]
        colors[name] = np.array(center) + rng.uniform(-1, 1, 3) * np.array(half)
    textures = {}
    for name in CLASS_NAMES:
        wavelength = rng.uniform(8.0, 24.0) * s / 64.0
        angle = rng.uniform(0, 2 * np.pi)
        textures[name] = {
            "amp": float(rng.uniform(0.01, 0.035)),
            "kx": float(2 * np.pi / wavelength * np.cos(angle)),
            "ky": float(2 * np.pi / wavelength * np.sin(angle)),
            "phase": float(rng.uniform(0, 2 * np.pi)),
        }

    cx = (0.50 + rng.uniform(-0.03, 0.03)) * s
    cy = (0.52 + rng.uniform(-0.03, 0.03)) * s
    face_rx = (0.26 + rng.uniform(-0.02, 0.02)) * s
    face_ry = (0.30 + rng.uniform(-0.02, 0.02)) * s
    has_hat = rng.random() < HAT_FRACTION

    label = np.zeros((size, size), dtype=np.int64)  # background
    _ellipse(label, yy, xx, cy - 0.08 * s, cx, face_ry + 0.06 * s, face_rx + 0.07 * s, class_id("hair"))
    _ellipse(label, yy, xx, cy, cx, face_ry, face_rx, class_id("skin"))
    _ellipse(label, yy, xx, cy + 0.04 * s, cx, 0.07 * s, 0.045 * s, class_id("nose"))
    eye_dx = (0.13 + rng.uniform(-0.015, 0.015)) * s
    eye_dy = (0.08 + rng.uniform(-0.01, 0.01)) * s
    eye_rx = 0.060 * s * rng.uniform(0.9, 1.1)
    eye_ry = 0.045 * s * rng.uniform(0.9, 1.1)
    _ellipse(label, yy, xx, cy - eye_dy, cx - eye_dx, eye_ry, eye_rx, class_id("eyes"))
    _ellipse(label, yy, xx, cy - eye_dy, cx + eye_dx, eye_ry, eye_rx, class_id("eyes"))
    _ellipse(label, yy, xx, cy + 0.17 * s, cx, 0.05 * s, 0.11 * s, class_id("mouth"))
    if has_hat:
        hair_top = (cy - 0.08 * s) - (face_ry + 0.06 * s)
        band = (yy >= hair_top) & (yy <= hair_top + 0.11 * s) & (np.abs(xx - cx) <= face_rx + 0.10 * s)
        label[band & (label == class_id("hair"))] = class_id("hat")

    image = np.empty((size, size, 3), dtype=np.float64)
    for cid, name in enumerate(CLASS_NAMES):
        region = label == cid
        if not region.any():
            continue
        tx = textures[name]
        shade = 1.0 + tx["amp"] * np.sin(tx["kx"] * xx[region] + tx["ky"] * yy[region] + tx["phase"])
        image[region] = colors[name][None, :] * shade[:, None]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    present = set(np.unique(label).tolist())
    style_truth = {
        name: {"color": [float(v) for v in colors[name]], "texture": textures[name]}
        for cid, name in enumerate(CLASS_NAMES)
        if cid in present
    }
    return ToySample(image=image, mask=SemanticMask(label, NUM_CLASSES), style_truth=style_truth)


def _save_sample(sample: ToySample, split_dir: Path, index: int) -> None:
    img8 = np.round(sample.image * 255.0).astype(np.uint8)
    Image.fromarray(img8).save(split_dir / "images" / f"{index:05d}.png")
    mask_img = Image.fromarray(sample.mask.classes.astype(np.uint8), mode="P")
    palette = np.zeros((256, 3), dtype=np.uint8)
    for cid, name in enumerate(CLASS_NAMES):
        palette[cid] = np.round(np.array(COLOR_BOXES[name][0]) * 255)
    mask_img.putpalette(palette.flatten().tolist())
    mask_img.save(split_dir / "masks" / f"{index:05d}.png")
    (split_dir / "styles" / f"{index:05d}.json").write_text(
        json.dumps({"classes": sample.style_truth}, indent=1) + "\n"
    )


def generate_toy_dataset(n: int, seed: int, size: int, out_dir, split: str = "train") -> DatasetManifest:
    """Write n (image, mask, style_truth) triples for one split; deterministic in seed.

    Sample i of a split depends only on (seed, split, i), so prefixes of larger
    datasets coincide with smaller ones.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size not in VALID_SIZES:
        raise ValueError(f"size must be one of {VALID_SIZES}, got {size}")
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    root = Path(out_dir)
    split_dir = root / split
    for sub in ("images", "masks", "styles"):
        (split_dir / sub).mkdir(parents=True, exist_ok=True)

    split_key = 0 if split == "train" else 1
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(split_key, i)))
        _save_sample(make_toy_sample(rng, size), split_dir, i)

    manifest_path = root / MANIFEST_NAME
    payload = {
        "version": MANIFEST_VERSION,
        "image_size": size,
        "num_classes": NUM_CLASSES,
        "class_names": list(CLASS_NAMES),
        "seed": seed,
        "splits": {},
    }
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text())
        if existing.get("image_size") != size:
            raise ValueError(
                f"dataset at {root} already has image_size {existing.get('image_size')}, not {size}"
            )
        payload["splits"] = existing.get("splits", {})
    payload["splits"][split] = n
    manifest_path.write_text(json.dumps(payload, indent=2) + "\n")
    return DatasetManifest(root=root, split=split, count=n, image_size=size, num_classes=NUM_CLASSES)


def load_split_arrays(manifest: DatasetManifest):
    """Load a whole split into memory: images (N,H,W,3) f32 and labels (N,H,W) i64."""
    images = np.empty((manifest.count, manifest.image_size, manifest.image_size, 3), dtype=np.float32)
    labels = np.empty((manifest.count, manifest.image_size, manifest.image_size), dtype=np.int64)
    for i in range(manifest.count):
        image, mask = load_pair(manifest.image_path(i), manifest.mask_path(i), manifest.num_classes)
        images[i] = image
        labels[i] = mask.classes
    return images, labels
