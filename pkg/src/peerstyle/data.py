"""Image I/O and datasets: folder-backed painter classes or procedural style classes."""

import glob
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".ppm")


class ImageError(ValueError):
    """An image file could not be read, written, or does not meet shape requirements."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass
class ImageSample:
    pixels: np.ndarray  # (3, H, W) in [-1, 1]
    class_id: int = -1
    source: str = ""

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] != 3:
            raise ImageError(self.source or "<array>", f"expected (3, H, W) pixels, got {p.shape}")
        if p.shape[1] % 4 or p.shape[2] % 4:
            raise ImageError(self.source or "<array>", f"extent {p.shape[1]}x{p.shape[2]} not divisible by 4")
        if p.size and (p.min() < -1.0 or p.max() > 1.0):
            raise ImageError(self.source or "<array>", "pixel values outside [-1, 1]")


@dataclass
class StyleClass:
    """Parameters of one procedural texture family."""

    family: str  # "stripes" | "checker" | "blotch"
    frequency: float
    palette: tuple  # two RGB colors in [-1, 1]
    angle: float = 0.0


def default_style_classes(n=3):
    base = [
        StyleClass("stripes", 4.0, ((0.8, -0.2, -0.6), (0.2, -0.7, -0.9)), angle=0.6),
        StyleClass("checker", 3.0, ((-0.6, -0.2, 0.8), (-0.9, -0.6, 0.1))),
        StyleClass("blotch", 2.0, ((-0.4, 0.7, -0.3), (0.1, 0.2, -0.8))),
    ]
    if n > len(base):
        raise ValueError(f"at most {len(base)} built-in synthetic style classes")
    return base[:n]


@dataclass
class DatasetSpec:
    mode: str = "synthetic"  # "synthetic" | "folders"
    crop_size: int = 32
    n_style_classes: int = 3
    content_dir: str = ""
    style_dirs: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("synthetic", "folders"):
            raise ValueError(f"unknown dataset mode {self.mode!r}")
        if self.crop_size < 4 or self.crop_size % 4:
            raise ValueError("crop_size must be a positive multiple of 4")
        if self.mode == "synthetic" and self.n_style_classes < 1:
            raise ValueError("need at least one synthetic style class")
        if self.mode == "folders" and (not self.content_dir or not self.style_dirs):
            raise ValueError("folder mode needs content_dir and at least one style dir")

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def to_unit_range(arr):
    return arr.astype(np.float64) / 127.5 - 1.0


def to_uint8(pixels):
    return np.clip(np.rint((np.clip(pixels, -1.0, 1.0) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _read_rgb(path):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ImageError(path, f"unreadable image ({exc})") from exc


def load_image(path, class_id=-1):
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in IMAGE_EXTENSIONS:
        raise ImageError(path, f"unsupported format {ext!r} (use PNG or PPM)")
    arr = _read_rgb(path)
    return ImageSample(to_unit_range(arr).transpose(2, 0, 1).copy(), class_id, str(path))


def save_image(sample, path):
    pixels = sample.pixels if isinstance(sample, ImageSample) else np.asarray(sample)
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in IMAGE_EXTENSIONS:
        raise ImageError(path, f"unsupported format {ext!r} (use PNG or PPM)")
    try:
        Image.fromarray(to_uint8(pixels).transpose(1, 2, 0)).save(path)
    except OSError as exc:
        raise ImageError(path, f"cannot write ({exc})") from exc


def resize(pixels, height, width):
    """Bilinear resize of (3, H, W) pixels."""
    out = []
    for ch in pixels:
        img = Image.fromarray(ch.astype(np.float32))
        out.append(np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64))
    return np.clip(np.stack(out), -1.0, 1.0)


def random_crop(sample, size, rng):
    pixels = sample.pixels
    _, h, w = pixels.shape
    if h < size or w < size:
        scale = size / min(h, w)
        h, w = max(size, math.ceil(h * scale)), max(size, math.ceil(w * scale))
        pixels = resize(pixels, h, w)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    crop = pixels[:, top:top + size, left:left + size].copy()
    return ImageSample(crop, sample.class_id, sample.source)


def _load_any(path, class_id):
    """Like load_image but accepts arbitrary extents (cropping fixes divisibility)."""
    arr = _read_rgb(path)
    pixels = to_unit_range(arr).transpose(2, 0, 1).copy()
    h, w = pixels.shape[1:]
    pixels = pixels[:, : h - h % 4, : w - w % 4]
    return ImageSample(pixels, class_id, str(path))


# --------------------------------------------------------------------------
# procedural images
# --------------------------------------------------------------------------

def _blend(mask, palette, rng):
    c0 = np.asarray(palette[0], dtype=np.float64) + rng.uniform(-0.08, 0.08, 3)
    c1 = np.asarray(palette[1], dtype=np.float64) + rng.uniform(-0.08, 0.08, 3)
    img = c0[:, None, None] * (1.0 - mask) + c1[:, None, None] * mask
    return np.clip(img, -1.0, 1.0)


def synth_style(params, size, rng):
    """One texture from the class family, with per-sample phase/offset/palette jitter."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    f = params.frequency
    if params.family == "stripes":
        theta = params.angle + rng.uniform(-0.15, 0.15)
        u = xx * math.cos(theta) + yy * math.sin(theta)
        mask = 0.5 + 0.5 * np.sin(2 * math.pi * f * u + rng.uniform(0, 2 * math.pi))
    elif params.family == "checker":
        oy, ox = rng.uniform(0, 1, 2)
        mask = ((np.floor(f * (yy + oy)) + np.floor(f * (xx + ox))) % 2).astype(np.float64)
    elif params.family == "blotch":
        field_ = np.zeros((size, size))
        for _ in range(4):
            k = rng.normal(0, f * 2 * math.pi, 2)
            field_ += np.cos(k[0] * xx + k[1] * yy + rng.uniform(0, 2 * math.pi))
        mask = 1.0 / (1.0 + np.exp(-3.0 * field_))
    else:
        raise ValueError(f"unknown texture family {params.family!r}")
    return ImageSample(_blend(mask, params.palette, rng), source=f"synthetic:{params.family}")


def synth_content(size, rng):
    """A flat-shaded scene: vertical gradient background plus a few rectangles and discs."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    top, bottom = rng.uniform(-0.6, 0.6, 3), rng.uniform(-0.6, 0.6, 3)
    img = top[:, None, None] * (1.0 - yy) + bottom[:, None, None] * yy
    for _ in range(int(rng.integers(2, 4))):
        color = rng.uniform(-0.9, 0.9, 3)
        cy, cx = rng.uniform(0.15, 0.85, 2)
        r = rng.uniform(0.12, 0.3)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.5, 1.5))
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img = np.where(mask[None], color[:, None, None], img)
    return ImageSample(np.clip(img, -1.0, 1.0), source="synthetic:scene")


# --------------------------------------------------------------------------
# datasets and batches
# --------------------------------------------------------------------------

CONTENT_CLASS = 0


@dataclass
class StepBatch:
    x_i: np.ndarray
    x_i2: np.ndarray
    x_t: np.ndarray
    x_t2: np.ndarray
    style_class: int


class Dataset:
    """Class 0 holds content photos; classes 1..n are style classes."""

    def __init__(self, spec):
        self.spec = spec
        if spec.mode == "synthetic":
            self.style_params = default_style_classes(spec.n_style_classes)
            self.files = None
        else:
            self.style_params = None
            self.files = [_list_images(spec.content_dir)] + [_list_images(d) for d in spec.style_dirs]

    @property
    def n_style_classes(self):
        if self.files is None:
            return len(self.style_params)
        return len(self.files) - 1

    @property
    def classes(self):
        return list(range(self.n_style_classes + 1))

    def sample(self, class_id, rng):
        size = self.spec.crop_size
        if self.files is None:
            if class_id == CONTENT_CLASS:
                s = synth_content(size, rng)
            else:
                s = synth_style(self.style_params[class_id - 1], size, rng)
            return ImageSample(s.pixels, class_id, s.source)
        paths = self.files[class_id]
        path = paths[int(rng.integers(len(paths)))]
        return random_crop(_load_any(path, class_id), size, rng)

    def sample_stack(self, class_id, n, rng):
        return np.stack([self.sample(class_id, rng).pixels for _ in range(n)])


def _list_images(directory):
    paths = sorted(p for ext in IMAGE_EXTENSIONS
                   for p in glob.glob(os.path.join(directory, "*" + ext)))
    if not paths:
        raise ImageError(directory, "no PNG/PPM images found")
    return paths


def sample_batch(dataset, batch_size, rng):
    """Two content stacks and two stacks from one uniformly chosen style class."""
    style = 1 + int(rng.integers(dataset.n_style_classes))
    return StepBatch(
        x_i=dataset.sample_stack(CONTENT_CLASS, batch_size, rng),
        x_i2=dataset.sample_stack(CONTENT_CLASS, batch_size, rng),
        x_t=dataset.sample_stack(style, batch_size, rng),
        x_t2=dataset.sample_stack(style, batch_size, rng),
        style_class=style,
    )


def steps_per_epoch(photos_per_epoch, batch_size):
    return math.ceil(photos_per_epoch / batch_size)
