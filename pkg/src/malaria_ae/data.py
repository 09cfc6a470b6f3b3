"""Dataset ingestion: scanning, preprocessing, seeded splits and batching.

Expected layout (the NIH cell-image release)::

    root/Parasitized/*.png
    root/Uninfected/*.png

Preprocessing is decode -> BT.601 grayscale -> half-pixel bilinear resize ->
divide by 255, giving float32 ``[1, 32, 32]`` tensors in ``[0, 1]``.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import container
from .errors import ConfigError, DataError, DecodeError, ShapeMismatchError
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

PARASITIZED = "parasitized"
UNINFECTED = "uninfected"
CLASS_DIRS = {"Parasitized": PARASITIZED, "Uninfected": UNINFECTED}
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm"}
DATA_MAGIC = b"ANOMDATA\x00"
LUMA = (0.299, 0.587, 0.114)

# stream ids for derive_seed so split and batch shuffles never share draws
_SPLIT_STREAM = 1
_BATCH_STREAM = 2


@dataclass
class ImageRecord:
    path: str
    label: str
    pixels: np.ndarray = None


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (path, reason)

    def counts(self) -> dict:
        out = {PARASITIZED: 0, UNINFECTED: 0}
        for r in self.records:
            out[r.label] += 1
        return out


@dataclass
class DatasetSplit:
    name: str
    records: list
    seed: int = None

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list:
        return [r.label for r in self.records]

    def images(self, size: int = 32) -> np.ndarray:
        """Stacked ``[N,1,size,size]`` float32 pixels, preprocessing any record not yet loaded."""
        load_pixels(self.records, size)
        if not self.records:
            return np.zeros((0, 1, size, size), np.float32)
        return np.stack([r.pixels for r in self.records])


def scan_dataset(root) -> Manifest:
    """List decodable images under ``root/Parasitized`` and ``root/Uninfected``.

    Files that are not images (by extension or by a failed header read) are
    skipped with a warning and reported in ``Manifest.skipped``.
    """
    root = os.fspath(root)
    manifest = Manifest()
    for dirname, label in sorted(CLASS_DIRS.items()):
        d = os.path.join(root, dirname)
        if not os.path.isdir(d):
            raise ConfigError(f"dataset root {root!r} has no {dirname!r} subdirectory")
        for name in sorted(os.listdir(d)):
            path = os.path.join(d, name)
            if not os.path.isfile(path):
                continue
            reason = None
            if os.path.splitext(name)[1].lower() not in IMAGE_EXTENSIONS:
                reason = "not an image file"
            else:
                try:
                    with Image.open(path) as im:
                        im.size
                except (OSError, UnidentifiedImageError) as exc:
                    reason = str(exc)
            if reason:
                log.warning("skipping %s: %s", path, reason)
                manifest.skipped.append((path, reason))
            else:
                manifest.records.append(ImageRecord(path, label))
    manifest.records.sort(key=lambda r: r.path)
    return manifest


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma ``0.299 R + 0.587 G + 0.114 B``; ``[3,H,W]`` -> ``[1,H,W]``.

    Unit-agnostic (works on 0..255 or 0..1 input), computed in float64.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] input, got shape {rgb.shape}")
    return (LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2])[None]


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, out_h: int = 32, out_w: int = 32) -> np.ndarray:
    """Half-pixel-centre bilinear resize of a ``[1,H,W]`` image, edge clamped."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[1] < 1 or img.shape[2] < 1:
        raise ValueError(f"expected non-empty [C,H,W] image, got {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    y0, y1, fy = _axis_weights(img.shape[1], out_h)
    x0, x1, fx = _axis_weights(img.shape[2], out_w)
    # a + f * (b - a) keeps constant regions exact
    top, bot = img[:, y0], img[:, y1]
    rows = top + fy[None, :, None] * (bot - top)
    left, right = rows[:, :, x0], rows[:, :, x1]
    return left + fx[None, None, :] * (right - left)


def decode_rgb(path) -> np.ndarray:
    """Decode an image file to a float64 ``[3,H,W]`` array in 0..255."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(path, exc) from exc
    return arr.transpose(2, 0, 1)


def preprocess(path, size: int = 32) -> np.ndarray:
    """Load one image as a float32 ``[1,size,size]`` tensor in ``[0,1]``."""
    gray = resize_bilinear(to_grayscale(decode_rgb(path)), size, size)
    return np.clip(gray / 255.0, 0.0, 1.0).astype(np.float32)


def load_pixels(records: list, size: int = 32, workers: int = None) -> None:
    """Fill ``record.pixels`` for every record that lacks them (order-preserving)."""
    todo = [r for r in records if r.pixels is None]
    if not todo:
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for r, px in zip(todo, pool.map(lambda r: preprocess(r.path, size), todo)):
            r.pixels = px


def split(manifest: Manifest, seed: int, train_n: int = 1607, val_n: int = 407, test_spec: dict = None):
    """Seeded train/validation/test partition.

    Each class list is Fisher-Yates shuffled (uninfected first, then
    parasitized, from one stream). Train and validation take the first
    ``train_n`` and next ``val_n`` uninfected records; the test split takes
    ``test_spec[parasitized]`` parasitized records followed by
    ``test_spec[uninfected]`` of the remaining uninfected ones.
    """
    if test_spec is None:
        test_spec = {PARASITIZED: 2757, UNINFECTED: 2755}
    unknown = set(test_spec) - {PARASITIZED, UNINFECTED}
    if unknown:
        raise ConfigError(f"unknown labels in test_spec: {sorted(unknown)}")
    n_par = int(test_spec.get(PARASITIZED, 0))
    n_unin = int(test_spec.get(UNINFECTED, 0))
    if min(train_n, val_n, n_par, n_unin) < 0:
        raise ConfigError("split sizes must be non-negative")

    unin = [r for r in manifest.records if r.label == UNINFECTED]
    par = [r for r in manifest.records if r.label == PARASITIZED]
    short = []
    if len(unin) < train_n + val_n + n_unin:
        short.append(f"need {train_n + val_n + n_unin} uninfected images, have {len(unin)}")
    if len(par) < n_par:
        short.append(f"need {n_par} parasitized images, have {len(par)}")
    if short:
        raise DataError("insufficient records: " + "; ".join(short))

    rng = SplitMix64(derive_seed(seed, _SPLIT_STREAM))
    rng.shuffle(unin)
    rng.shuffle(par)
    train = DatasetSplit("train", unin[:train_n], seed)
    val = DatasetSplit("validation", unin[train_n:train_n + val_n], seed)
    test = DatasetSplit("test", par[:n_par] + unin[train_n + val_n:train_n + val_n + n_unin], seed)
    return train, val, test


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list:
    """Index arrays of one epoch's batches; the order is keyed by ``(seed, epoch)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(n))
    SplitMix64(derive_seed(seed, _BATCH_STREAM, epoch)).shuffle(order)
    order = np.array(order, dtype=np.intp)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(data, batch_size: int, seed: int, epoch: int) -> list:
    """Reshuffled ``[B,1,S,S]`` batches of a split (or a pre-stacked image array).

    The last batch may be partial; an empty split yields no batches.
    """
    images = data.images() if isinstance(data, DatasetSplit) else np.asarray(data)
    return [images[idx] for idx in batch_indices(len(images), batch_size, seed, epoch)]


def save_cache(split_: DatasetSplit, path, size: int = 32) -> None:
    """Write preprocessed pixels of a split to an ``ANOMDATA`` container."""
    images = split_.images(size)
    header = {"name": split_.name, "seed": split_.seed,
              "records": [{"path": r.path, "label": r.label} for r in split_.records]}
    container.write_atomic(path, container.encode(DATA_MAGIC, header, [("pixels", images)]))


def load_cache(path) -> DatasetSplit:
    with open(os.fspath(path), "rb") as f:
        header, tensors = container.decode(DATA_MAGIC, f.read())
    (_, pixels), = tensors
    if len(header.get("records", [])) != len(pixels):
        raise ShapeMismatchError(f"{len(header.get('records', []))} records but {len(pixels)} pixel rows")
    recs = [ImageRecord(r["path"], r["label"], px) for r, px in zip(header["records"], pixels)]
    return DatasetSplit(header["name"], recs, header.get("seed"))
