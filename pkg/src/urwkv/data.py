"""Synthetic dataset generation, image/mask file I/O, and augmentation.

The synthetic set is a desk-scale stand-in for clinical data: one bright or
dark elliptical blob per image over a textured background, with additive
Gaussian noise and thin dark arcs imitating hair-like high-frequency
clutter. Labels are binary. Generation is fully deterministic under a seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

DEFAULT_LABEL_TABLE = {0: 0, 255: 1}
NOISE_SIGMA = 0.05


class DataError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    mask: np.ndarray   # (H, W) int64 in [0, n)

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape:
            raise DataError(
                f"image {self.image.shape} and mask {self.mask.shape} disagree"
            )


def _blob_mask(h, w, rng):
    """Rotated ellipse with a low-order radial perturbation."""
    cy = rng.uniform(0.35, 0.65) * h
    cx = rng.uniform(0.35, 0.65) * w
    ry = rng.uniform(0.18, 0.30) * h
    rx = rng.uniform(0.18, 0.30) * w
    theta = rng.uniform(0, np.pi)
    wobble = rng.uniform(-0.12, 0.12, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)

    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    ury = (ct * dy + st * dx) / ry
    urx = (-st * dy + ct * dx) / rx
    r = np.sqrt(ury * ury + urx * urx)
    phi = np.arctan2(ury, urx)
    limit = 1.0 + sum(
        a * np.cos((m + 2) * phi + p)
        for m, (a, p) in enumerate(zip(wobble, phase))
    )
    return r <= limit


def _hair_arcs(img, rng, count):
    """Thin dark arcs drawn over all channels."""
    _, h, w = img.shape
    for _ in range(count):
        cy = rng.uniform(-0.2, 1.2) * h
        cx = rng.uniform(-0.2, 1.2) * w
        rad = rng.uniform(0.3, 0.9) * max(h, w)
        a0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(0.5, 1.8)
        dark = rng.uniform(0.2, 0.35)
        ts = np.linspace(a0, a0 + span, int(4 * rad) + 8)
        ys = np.round(cy + rad * np.sin(ts)).astype(int)
        xs = np.round(cx + rad * np.cos(ts)).astype(int)
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        img[:, ys[keep], xs[keep]] -= dark
    return img


def gen_synthetic(count, h, w, seed):
    """Deterministic list of Samples; H, W must be multiples of 32."""
    if h % 32 or w % 32:
        raise DataError(f"synthetic size {h}x{w} must be a multiple of 32")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        base = rng.uniform(0.3, 0.5)
        yy, xx = np.mgrid[0:h, 0:w]
        texture = (
            0.04 * np.sin(2 * np.pi * rng.uniform(1, 3) * yy / h + rng.uniform(0, 6))
            + 0.04 * np.sin(2 * np.pi * rng.uniform(1, 3) * xx / w + rng.uniform(0, 6))
        )
        bg = base + texture
        fg_mask = _blob_mask(h, w, rng)
        delta = rng.uniform(0.25, 0.4) * (1 if rng.uniform() < 0.5 else -1)
        tint = rng.uniform(-0.03, 0.03, 3)
        img = np.empty((3, h, w))
        for ch in range(3):
            img[ch] = bg + tint[ch]
            img[ch][fg_mask] += delta
        img += rng.normal(0.0, NOISE_SIGMA, (3, h, w))
        img = _hair_arcs(img, rng, int(rng.integers(2, 6)))
        np.clip(img, 0.0, 1.0, out=img)
        samples.append(Sample(img, fg_mask.astype(np.int64)))
    return samples


def augment(sample: Sample, rng) -> Sample:
    """Random horizontal/vertical flips and a right-angle rotation,
    applied identically to image and mask."""
    img, mask = sample.image, sample.mask
    if rng.uniform() < 0.5:
        img = img[:, :, ::-1]
        mask = mask[:, ::-1]
    if rng.uniform() < 0.5:
        img = img[:, ::-1, :]
        mask = mask[::-1, :]
    quarter = int(rng.integers(0, 4))
    if quarter:
        img = np.rot90(img, quarter, axes=(1, 2))
        mask = np.rot90(mask, quarter, axes=(0, 1))
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(mask))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def write_png(path, array):
    """8-bit PNG from (H, W) gray or (3, H, W)/(H, W, 3) RGB in [0, 1] or uint8."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    mode = "RGB" if arr.ndim == 3 else "L"
    Image.fromarray(arr, mode).save(path, format="PNG")


def write_pgm(path, array):
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise DataError(f"PGM is single-channel, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1].isspace():
            i += 1
        elif data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise DataError(f"not a PGM file: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if tokens[0] == b"P5":
        i += 1  # single whitespace after maxval
        pix = np.frombuffer(data[i:i + w * h], dtype=np.uint8)
        if pix.size != w * h:
            raise DataError(f"truncated PGM payload: {path}")
    else:
        pix = np.array(data[i:].split(), dtype=np.int64)
        if pix.size != w * h:
            raise DataError(f"truncated PGM payload: {path}")
    arr = pix.reshape(h, w).astype(np.float64) * (255.0 / maxval)
    return np.round(arr).astype(np.uint8)


def read_image(path):
    """(H, W) uint8 or (H, W, 3) uint8 from PNG or PGM."""
    if str(path).lower().endswith(".pgm"):
        return _read_pgm(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"unreadable image file {path}: {exc}") from exc


def load_pair(image_path, mask_path, label_table=None, size=None):
    """Decode an image/mask pair into a Sample.

    Grayscale images are replicated to 3 channels; mask pixel values map to
    class ids via ``label_table``. With ``size`` the image is resized
    bilinearly and the mask by nearest neighbor.
    """
    table = DEFAULT_LABEL_TABLE if label_table is None else label_table
    img = read_image(image_path)
    mask = read_image(mask_path)
    if mask.ndim != 2:
        raise DataError(f"mask must be single-channel: {mask_path}")
    if img.shape[:2] != mask.shape:
        raise DataError(
            f"pair size mismatch: image {img.shape[:2]} vs mask {mask.shape} "
            f"({image_path}, {mask_path})"
        )
    if size is not None and img.shape[:2] != (size, size):
        mode = "L" if img.ndim == 2 else "RGB"
        img = np.asarray(
            Image.fromarray(img, mode).resize((size, size), Image.BILINEAR)
        )
        mask = np.asarray(
            Image.fromarray(mask, "L").resize((size, size), Image.NEAREST)
        )
    unknown = sorted(set(np.unique(mask)) - set(table))
    if unknown:
        raise DataError(
            f"mask {mask_path} contains values with no label-table entry: {unknown}"
        )
    lut = np.zeros(256, dtype=np.int64)
    for pixel, label in table.items():
        lut[pixel] = label
    mask_ids = lut[mask]
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    image = img.astype(np.float64).transpose(2, 0, 1) / 255.0
    return Sample(image, mask_ids)


# ---------------------------------------------------------------------------
# Dataset directory layout: images/*.png + masks/*.png + labels.txt + manifest
# ---------------------------------------------------------------------------

def write_dataset(samples, root, train_fraction=0.8):
    """Write PNG pairs, the label table, and the split manifest."""
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    n_train = int(round(len(samples) * train_fraction))
    lines = ["stem,split"]
    for i, s in enumerate(samples):
        stem = f"{i:05d}"
        write_png(os.path.join(img_dir, stem + ".png"), s.image)
        write_png(os.path.join(mask_dir, stem + ".png"),
                  (s.mask * 255).astype(np.uint8))
        lines.append(f"{stem},{'train' if i < n_train else 'test'}")
    with open(os.path.join(root, "labels.txt"), "w", encoding="utf-8") as fh:
        fh.write("0 0\n255 1\n")
    with open(os.path.join(root, "manifest.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_label_table(path):
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pixel, label = line.split()
            table[int(pixel)] = int(label)
    return table


def load_dataset(root, split=None, size=None):
    """Samples listed by the manifest, optionally filtered by split."""
    manifest = os.path.join(root, "manifest.csv")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest.csv under {root}")
    table_path = os.path.join(root, "labels.txt")
    table = read_label_table(table_path) if os.path.exists(table_path) else None
    samples = []
    with open(manifest, "r", encoding="utf-8") as fh:
        rows = [line.strip() for line in fh if line.strip()]
    for row in rows[1:]:
        stem, part = row.split(",")
        if split is not None and part != split:
            continue
        samples.append(load_pair(
            os.path.join(root, "images", stem + ".png"),
            os.path.join(root, "masks", stem + ".png"),
            table, size=size,
        ))
    return samples
