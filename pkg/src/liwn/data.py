"""CIFAR binary ingestion, stratified subsets, augmentation and synthetic data.

CIFAR binary records are ``[label bytes][3072 pixel bytes]`` with the pixels
stored plane by plane (R, G, B), each plane 32 rows of 32 bytes.  CIFAR-10
has one label byte, CIFAR-100 two (coarse then fine).
"""
import os
from dataclasses import dataclass

import numpy as np

PIXELS = 3 * 32 * 32
CIFAR10_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST = ["test_batch.bin"]
CIFAR100_TRAIN = ["train.bin"]
CIFAR100_TEST = ["test.bin"]


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Pixel bytes (N, 3, 32, 32), integer labels and source record numbers.

    Pixels stay uint8 in memory; :attr:`images` and :meth:`float_images` give
    the [0, 1] float32 view.
    """

    pixels: np.ndarray
    labels: np.ndarray
    source_index: np.ndarray
    classes: int
    coarse_labels: np.ndarray = None

    def __len__(self):
        return len(self.labels)

    @property
    def images(self):
        return to_float(self.pixels)

    def float_images(self, idx):
        return to_float(self.pixels[idx])

    def take(self, idx):
        idx = np.asarray(idx)
        coarse = None if self.coarse_labels is None else self.coarse_labels[idx]
        return Dataset(self.pixels[idx], self.labels[idx], self.source_index[idx],
                       self.classes, coarse)


def parse_records(raw, label_bytes):
    """Decode raw CIFAR bytes; returns (labels (N, label_bytes) uint8, pixels uint8)."""
    rec = label_bytes + PIXELS
    if len(raw) == 0 or len(raw) % rec:
        raise DataFormatError(f"{len(raw)} bytes is not a whole number of {rec}-byte records")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    return arr[:, :label_bytes].copy(), arr[:, label_bytes:].reshape(-1, 3, 32, 32).copy()


def serialize_records(labels, pixels):
    """Inverse of :func:`parse_records`."""
    labels = np.asarray(labels, dtype=np.uint8).reshape(len(pixels), -1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(pixels), PIXELS)
    return np.concatenate([labels, pixels], axis=1).tobytes()


def to_float(pixels):
    return pixels.astype(np.float32) / 255.0


def to_bytes(images):
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def _read_split(directory, files, label_bytes, classes, expected=None):
    chunks = []
    for name in files:
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing dataset file {path}")
        with open(path, "rb") as fh:
            raw = fh.read()
        if expected is not None and len(raw) != expected * (label_bytes + PIXELS):
            raise DataFormatError(f"{path}: {len(raw)} bytes, expected "
                                  f"{expected} records of {label_bytes + PIXELS} bytes")
        chunks.append(parse_records(raw, label_bytes))
    labels = np.concatenate([c[0] for c in chunks])
    pixels = np.concatenate([c[1] for c in chunks])
    fine = labels[:, -1].astype(np.int64)
    if fine.max() >= classes:
        raise DataFormatError(f"label {fine.max()} out of range for {classes} classes")
    coarse = labels[:, 0].astype(np.int64) if label_bytes == 2 else None
    return Dataset(pixels, fine, np.arange(len(fine)), classes, coarse)


def _locate(directory, files):
    """Accept either the directory holding the files or its usual parent."""
    for cand in (directory, os.path.join(directory, "cifar-10-batches-bin"),
                 os.path.join(directory, "cifar-100-binary")):
        if all(os.path.isfile(os.path.join(cand, f)) for f in files):
            return cand
    return directory


def load_cifar10(directory):
    d = _locate(directory, CIFAR10_TRAIN + CIFAR10_TEST)
    return (_read_split(d, CIFAR10_TRAIN, 1, 10, 10000),
            _read_split(d, CIFAR10_TEST, 1, 10, 10000))


def load_cifar100(directory):
    d = _locate(directory, CIFAR100_TRAIN + CIFAR100_TEST)
    return (_read_split(d, CIFAR100_TRAIN, 2, 100, 50000),
            _read_split(d, CIFAR100_TEST, 2, 100, 10000))


def cifar_files_present(directory, dataset="cifar10"):
    files = CIFAR10_TRAIN + CIFAR10_TEST if dataset == "cifar10" else CIFAR100_TRAIN + CIFAR100_TEST
    if not directory:
        return False
    d = _locate(directory, files)
    return all(os.path.isfile(os.path.join(d, f)) for f in files)


def subset(data, n, seed):
    """Stratified subset of ``n`` records, chosen deterministically from ``seed``.

    When ``n`` is not a multiple of the class count the remainder goes to the
    lowest class indices, one extra record each.
    """
    if n > len(data):
        raise ValueError(f"cannot take {n} records from {len(data)}")
    if n == len(data):
        return data.take(np.arange(len(data)))
    rng = np.random.default_rng(seed)
    per, extra = divmod(n, data.classes)
    chosen = []
    for c in range(data.classes):
        pool = np.flatnonzero(data.labels == c)
        k = per + (c < extra)
        if k > len(pool):
            raise ValueError(f"class {c} has only {len(pool)} records, need {k}")
        chosen.append(rng.choice(pool, size=k, replace=False))
    return data.take(np.sort(np.concatenate(chosen)))


# ---------------------------------------------------------------------------
# normalisation and augmentation

@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, pixels, chunk=4096):
        """Per-channel mean and standard deviation of training pixel bytes,
        on the [0, 1] scale, accumulated in float64 chunk by chunk."""
        pixels = np.asarray(pixels)
        if pixels.dtype != np.uint8:
            raise TypeError("fit expects uint8 pixel bytes")
        s1 = np.zeros(pixels.shape[1])
        s2 = np.zeros(pixels.shape[1])
        for i in range(0, len(pixels), chunk):
            block = pixels[i:i + chunk].astype(np.float64) / 255.0
            s1 += block.sum(axis=(0, 2, 3))
            s2 += (block * block).sum(axis=(0, 2, 3))
        n = pixels.shape[0] * pixels.shape[2] * pixels.shape[3]
        mean = s1 / n
        std = np.sqrt(np.maximum(s2 / n - mean * mean, 0.0))
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def __call__(self, images):
        return (images - self.mean[:, None, None]) / self.std[:, None, None]


def crop_offsets(rng, n, pad=4):
    return rng.integers(0, 2 * pad + 1, size=(n, 2))


def augment(images, rng, policy="standard", pad=4, force_flip=None):
    """Batch augmentation.  "standard": reflect-pad, random crop back to the
    original size, horizontal flip with probability 1/2.  "none": identity.
    """
    if policy == "none":
        return images
    if policy != "standard":
        raise ValueError(f"unknown augmentation policy {policy!r}")
    images = np.asarray(images)
    squeeze = images.ndim == 3
    if squeeze:
        images = images[None]
    N, _, H, W = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    off = crop_offsets(rng, N, pad)
    flip = rng.random(N) < 0.5 if force_flip is None else np.full(N, bool(force_flip))
    out = np.empty_like(images)
    for i in range(N):
        dy, dx = off[i]
        crop = padded[i, :, dy:dy + H, dx:dx + W]
        out[i] = crop[..., ::-1] if flip[i] else crop
    return out[0] if squeeze else out


def hflip(images):
    return np.asarray(images)[..., ::-1].copy()


def iterate_batches(n, batch, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch):
        yield order[i:i + batch]


# ---------------------------------------------------------------------------
# synthetic and stand-in data

TEXTURE_ANGLES = (15.0, 75.0)


def grating(shape, angle_deg, freq, phase=0.0):
    """Cosine grating whose stripes run at ``angle_deg`` from the horizontal
    (counter-clockwise, rows pointing down); ``freq`` in cycles per pixel."""
    ii, jj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    t = np.deg2rad(angle_deg)
    return np.cos(2 * np.pi * freq * (-jj * np.sin(t) - ii * np.cos(t)) + phase)


def synth_oriented_textures(n, seed, size=32, noise=0.1, angle_jitter=5.0):
    """Two-class RGB gratings with stripes at about 15 and 75 degrees.

    Phase, frequency (0.15 to 0.3 cycles per pixel), per-channel contrast and
    orientation are jittered; Gaussian noise is added and the result is
    quantised to bytes.  Classes alternate, so they are balanced for even ``n``.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    pixels = np.empty((n, 3, size, size), dtype=np.uint8)
    for k in range(n):
        angle = TEXTURE_ANGLES[labels[k]] + rng.uniform(-angle_jitter, angle_jitter)
        wave = grating((size, size), angle, rng.uniform(0.15, 0.3), rng.uniform(0, 2 * np.pi))
        contrast = rng.uniform(0.2, 0.4, size=3)
        img = 0.5 + contrast[:, None, None] * wave + noise * rng.standard_normal((3, size, size))
        pixels[k] = to_bytes(img)
    return Dataset(pixels, labels.astype(np.int64), np.arange(n), 2)


NATURAL_IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field")


def natural_patches(n, seed, size=32, downscale=4):
    """Random RGB crops from scikit-image's bundled photographs.

    Stand-in for natural test images when no CIFAR files are available.  Each
    photograph is box-averaged by ``downscale`` first so crops carry object
    scale detail comparable to small dataset thumbnails.
    """
    from skimage import data as skdata

    rng = np.random.default_rng(seed)
    sources = []
    for name in NATURAL_IMAGES:
        img = getattr(skdata, name)().astype(np.float64) / 255.0
        H, W = (s - s % downscale for s in img.shape[:2])
        img = img[:H, :W].reshape(H // downscale, downscale, W // downscale, downscale, 3).mean((1, 3))
        sources.append(img.transpose(2, 0, 1))
    out = np.empty((n, 3, size, size))
    for k in range(n):
        src = sources[rng.integers(len(sources))]
        i = rng.integers(0, src.shape[1] - size + 1)
        j = rng.integers(0, src.shape[2] - size + 1)
        out[k] = src[:, i:i + size, j:j + size]
    return out
