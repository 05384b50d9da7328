"""Datasets and the mixed-noise sampler.

Three sources of data: IDX files on disk, the procedural glyph dataset
(synth_shapes), and class-disjoint transfer splits of either.  Training-time
noise is applied by sample_noisy_batch, which draws a per-sample noise level
sigma from a NoiseSpec and adds N(0, sigma^2 I).  Noisy images are NOT
clamped back to [0,1]: the certification guarantee assumes the perturbation
is exactly Gaussian, and clamping would break that.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable image-classification dataset.

    images: float32 [N, C, H, W], values in [0, 1]
    labels: int64 [N], values in [0, num_classes)
    Every class must appear at least once.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    name: str = "dataset"

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got shape {images.shape}")
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise ValueError(f"labels shape {labels.shape} does not pair with "
                             f"{images.shape[0]} images")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        if labels.size == 0:
            raise ValueError("dataset is empty")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        counts = np.bincount(labels, minlength=self.num_classes)
        missing = np.nonzero(counts == 0)[0]
        if missing.size:
            raise ValueError(f"classes with no samples: {missing.tolist()}")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class NoiseSpec:
    """A discrete distribution over noise levels.  sigma = 0 means the clean
    image passes through untouched.  Weights are normalized on construction."""

    sigmas: tuple = (0.0,)
    weights: tuple = None
    seed: int = 0

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas:
            raise ValueError("at least one sigma required")
        if any(s < 0 for s in sigmas):
            raise ValueError("sigmas must be non-negative")
        if len(set(sigmas)) != len(sigmas):
            raise ValueError("duplicate sigma values")
        weights = self.weights
        if weights is None:
            weights = (1.0,) * len(sigmas)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(sigmas):
            raise ValueError("weights must pair with sigmas")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        total = sum(weights)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weights", tuple(w / total for w in weights))

    @classmethod
    def clean(cls, seed=0):
        return cls(sigmas=(0.0,), weights=(1.0,), seed=seed)

    @classmethod
    def mixed(cls, sigmas=(0.0, 0.25, 0.5, 1.0), seed=0):
        return cls(sigmas=tuple(sigmas), seed=seed)

    @property
    def is_clean(self):
        return self.sigmas == (0.0,)


# ------------------------------------------------------------------- noise


def _sample_rng(seed, epoch, index):
    return np.random.default_rng((int(seed), int(epoch), int(index)))


def _draw_sigma(rng, spec):
    # one uniform against the cumulative weights, then the noise draw follows
    # on the same stream
    u = rng.random()
    cum = np.cumsum(spec.weights)
    j = int(np.searchsorted(cum, u, side="right"))
    return spec.sigmas[min(j, len(spec.sigmas) - 1)]


def drawn_sigmas(indices, spec, epoch=0):
    """Replay only the sigma choices sample_noisy_batch would make."""
    return np.array([_draw_sigma(_sample_rng(spec.seed, epoch, i), spec)
                     for i in np.asarray(indices).ravel()])


def sample_noisy_batch(dataset, indices, spec, epoch=0):
    """Gather a batch and perturb each sample with N(0, sigma^2 I) where
    sigma is drawn per sample from the spec.  The random stream for sample
    index i is keyed by (spec.seed, epoch, i), so results do not depend on
    batch boundaries and each epoch re-rolls the noise."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= len(dataset)):
        raise IndexError("batch index out of range")
    out = dataset.images[indices].copy()
    for pos, i in enumerate(indices):
        rng = _sample_rng(spec.seed, epoch, i)
        sigma = _draw_sigma(rng, spec)
        if sigma > 0.0:
            out[pos] += rng.standard_normal(out.shape[1:], dtype=np.float32) * np.float32(sigma)
    return out


# --------------------------------------------------------------------- IDX


def _read_idx(path, expect_magic):
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4:
            raise IdxFormatError(f"{path}: truncated header")
        magic = struct.unpack(">I", head)[0]
        if magic != expect_magic:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, "
                                 f"expected 0x{expect_magic:08x}")
        ndim = magic & 0xFF
        dims_raw = f.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise IdxFormatError(f"{path}: truncated dimension header")
        dims = struct.unpack(f">{ndim}I", dims_raw)
        want = int(np.prod(dims))
        payload = f.read(want)
        if len(payload) < want:
            raise IdxFormatError(f"{path}: expected {want} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def _labels_path_for(images_path):
    d, base = os.path.split(images_path)
    swapped = base.replace("images", "labels").replace("idx3", "idx1")
    if swapped == base:
        raise IdxFormatError(f"{images_path}: cannot derive label file name "
                             "(expected 'images' in the file name)")
    return os.path.join(d, swapped)


def load_idx(images_path, split="train", name=None):
    """Load an IDX image file plus its label file (found by replacing
    'images' with 'labels' in the name).  Pixel bytes are scaled by 1/255."""
    labels_path = _labels_path_for(images_path)
    if not os.path.exists(labels_path):
        raise IdxFormatError(f"label file not found: {labels_path}")
    raw_images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise IdxFormatError(f"{images_path}: {raw_images.shape[0]} images but "
                             f"{raw_labels.shape[0]} labels")
    n, h, w = raw_images.shape
    images = (raw_images.astype(np.float32) / 255.0).reshape(n, 1, h, w)
    labels = raw_labels.astype(np.int64)
    if name is None:
        name = os.path.splitext(os.path.basename(images_path))[0]
    return Dataset(images=images, labels=labels,
                   num_classes=int(labels.max()) + 1, split=split, name=name)


def save_idx(dataset, images_path):
    """Export a single-channel dataset to an IDX image/label file pair."""
    if dataset.images.shape[1] != 1:
        raise ValueError("IDX export supports single-channel images only")
    labels_path = _labels_path_for(images_path)
    n, _, h, w = dataset.images.shape
    pixels = np.round(dataset.images[:, 0] * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())
    return images_path, labels_path


# ---------------------------------------------------------------- transfer


def make_transfer_pair(dataset, upstream_classes, downstream_classes, seed):
    """Split one dataset into two class-disjoint tasks.  Both sides get
    labels re-indexed from 0 following the order of the class sequences,
    and each side is shuffled deterministically."""
    up = [int(c) for c in upstream_classes]
    down = [int(c) for c in downstream_classes]
    if not up or not down:
        raise ValueError("both class sets must be non-empty")
    if len(set(up)) != len(up) or len(set(down)) != len(down):
        raise ValueError("duplicate classes within a set")
    overlap = set(up) & set(down)
    if overlap:
        raise ValueError(f"class sets overlap: {sorted(overlap)}")
    for c in up + down:
        if not 0 <= c < dataset.num_classes:
            raise ValueError(f"class {c} outside [0, {dataset.num_classes})")

    def side(classes, tag, stream):
        remap = {c: i for i, c in enumerate(classes)}
        mask = np.isin(dataset.labels, classes)
        idx = np.nonzero(mask)[0]
        rng = np.random.default_rng((int(seed), stream))
        idx = idx[rng.permutation(idx.size)]
        labels = np.array([remap[int(c)] for c in dataset.labels[idx]], dtype=np.int64)
        return Dataset(images=dataset.images[idx], labels=labels,
                       num_classes=len(classes), split=dataset.split,
                       name=f"{dataset.name}/{tag}")

    return side(up, "upstream", 0), side(down, "downstream", 1)


# ------------------------------------------------------------ synth shapes


def _bar_mask(xr, yr, half_len, half_width, aa=1.1):
    d = np.maximum(np.abs(xr) - half_len, np.abs(yr) - half_width)
    return np.clip(0.5 - d / aa, 0.0, 1.0)


def _rotate(x, y, theta_deg):
    t = np.deg2rad(theta_deg)
    return x * np.cos(t) + y * np.sin(t), -x * np.sin(t) + y * np.cos(t)


def _disc_mask(x, y, radius, aa=1.1):
    d = np.hypot(x, y) - radius
    return np.clip(0.5 - d / aa, 0.0, 1.0)


def _ring_mask(x, y, radius, half_band, aa=1.1):
    d = np.abs(np.hypot(x, y) - radius) - half_band
    return np.clip(0.5 - d / aa, 0.0, 1.0)


def _glyph(class_id, x, y):
    """16 distinguishable glyphs: oriented bars, crosses, discs, rings."""
    bars = {0: 0.0, 1: 45.0, 2: 90.0, 3: 135.0, 8: 22.5, 9: 67.5, 10: 112.5, 11: 157.5}
    if class_id in bars:
        xr, yr = _rotate(x, y, bars[class_id])
        return _bar_mask(xr, yr, 5.5, 1.3)
    if class_id in (4, 5, 12):
        theta = {4: 0.0, 5: 45.0, 12: 22.5}[class_id]
        xr, yr = _rotate(x, y, theta)
        a = _bar_mask(xr, yr, 5.0, 1.1)
        b = _bar_mask(yr, xr, 5.0, 1.1)
        return np.maximum(a, b)
    if class_id in (6, 7, 13):
        return _disc_mask(x, y, {6: 2.2, 7: 4.2, 13: 3.2}[class_id])
    if class_id == 14:
        return _ring_mask(x, y, 4.0, 1.0)
    if class_id == 15:
        xr, yr = _rotate(x, y, 45.0)  # diamond = rotated square
        return _bar_mask(xr, yr, 3.4, 3.4)
    raise ValueError(f"no glyph for class {class_id}")


def synth_shapes(num_classes, per_class, size=16, seed=0, split="train",
                 name="synth_shapes", contrast=0.75):
    """Procedural dataset of K glyph classes rendered as soft distance
    fields, with per-sample continuous translation up to 2 px and
    proportional brightness jitter around `contrast` (+-0.1 at the default
    0.75).  Lower contrast shrinks the class separation relative to any
    added noise, which makes the certification problem genuinely hard
    instead of trivially separable.  Deterministic for a given seed."""
    if not 1 <= num_classes <= 16:
        raise ValueError("num_classes must be in [1, 16]")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    if not 0.0 < contrast <= 1.0:
        raise ValueError("contrast must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    grid = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    images = np.empty((num_classes * per_class, 1, size, size), dtype=np.float32)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    row = 0
    for c in range(num_classes):
        for _ in range(per_class):
            dx, dy = rng.uniform(-2.0, 2.0, size=2)
            brightness = contrast + rng.uniform(-0.1, 0.1) * (contrast / 0.75)
            mask = _glyph(c, gx - dx, gy - dy)
            images[row, 0] = np.clip(mask * brightness, 0.0, 1.0).astype(np.float32)
            labels[row] = c
            row += 1
    return Dataset(images=images, labels=labels, num_classes=num_classes,
                   split=split, name=name)
