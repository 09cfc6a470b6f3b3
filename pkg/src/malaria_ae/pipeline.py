"""Train on normal images, calibrate a loss threshold, classify and score.

An image is called parasitized when its reconstruction MSE exceeds
``mean + k * std`` of the losses of a calibration set of uninfected images.
"""
import csv
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import write_atomic
from .data import PARASITIZED, UNINFECTED, DatasetSplit, batch_indices
from .errors import NumericError
from .kernels import mse_backward, mse_loss
from .model import Model, model_backward, model_forward
from .optim import adam_init, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    # empty when training ran without a validation split
    val_loss: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class Threshold:
    mean: float
    std: float
    k: float
    tau: float
    source: str = "validation"
    n: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Threshold":
        return cls(float(d["mean"]), float(d["std"]), float(d["k"]), float(d["tau"]),
                   str(d.get("source", "validation")), int(d.get("n", 1)))


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class ScoreRow:
    path: str
    label: str
    loss: float
    prediction: str


def _as_images(data) -> np.ndarray:
    if data is None:
        return None
    return data.images() if isinstance(data, DatasetSplit) else np.asarray(data, dtype=np.float32)


def per_image_losses(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Reconstruction MSE of each image in ``images`` ([N,1,S,S]), as float64."""
    out = np.empty(len(images), dtype=np.float64)
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        recon, _ = model_forward(model, x)
        d = (recon - x).astype(np.float64)
        out[i:i + batch_size] = np.mean(d * d, axis=(1, 2, 3))
    return out


def per_image_loss(model: Model, image: np.ndarray) -> float:
    """Reconstruction MSE of a single ``[1,1,S,S]`` (or ``[1,S,S]``) image."""
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4 or image.shape[0] != 1:
        raise ValueError(f"expected one image of shape [1,1,S,S], got {image.shape}")
    return float(per_image_losses(model, image)[0])


def train(model: Model, train_data, val_data=None, config=None, on_epoch=None):
    """Fit ``model`` in place with Adam + MSE for ``config.epochs`` epochs.

    ``train_data``/``val_data`` are splits or ``[N,1,S,S]`` arrays.
    ``config`` defaults to ``model.config``. ``on_epoch(epoch, train, val)``
    is called after each epoch. Returns ``(model, history)``.
    """
    cfg = config or model.config
    x_train = _as_images(train_data)
    x_val = _as_images(val_data)
    params = model.params.arrays()
    state = adam_init([p.shape for p in params], cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, dtype=params[0].dtype)
    history = TrainingHistory()

    for epoch in range(cfg.epochs):
        total = 0.0
        for b, idx in enumerate(batch_indices(len(x_train), cfg.batch_size, cfg.seed, epoch)):
            x = x_train[idx]
            recon, cache = model_forward(model, x)
            loss = mse_loss(recon, x)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = model_backward(model, cache, mse_backward(recon, x))
            adam_step(params, grads.arrays(), state)
            model.version += 1
            total += loss * len(idx)
        model.epochs_trained += 1
        tr = total / len(x_train) if len(x_train) else 0.0
        history.train_loss.append(tr)
        if x_val is not None and len(x_val):
            history.val_loss.append(float(per_image_losses(model, x_val).mean()))
        va = history.val_loss[-1] if history.val_loss else float("nan")
        log.debug("epoch %d train %.6g val %.6g", epoch + 1, tr, va)
        if on_epoch:
            on_epoch(epoch + 1, tr, va)
    return model, history


def calibrate_threshold(losses, k: float = 3.0, ddof: int = 1, source: str = "validation") -> Threshold:
    """Cut-off ``tau = mean + k * std`` over calibration losses.

    ``ddof=1`` gives the sample standard deviation (0 for a single loss);
    ``ddof=0`` the population form.
    """
    arr = np.asarray(losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot calibrate a threshold from an empty loss list")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("calibration losses must be finite and non-negative")
    mean = float(arr.mean())
    std = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
    return Threshold(mean, std, float(k), mean + k * std, source, int(arr.size))


def classify(loss: float, threshold: Threshold) -> str:
    # strictly greater: a loss equal to tau is still normal
    return PARASITIZED if loss > threshold.tau else UNINFECTED


def confusion(labels, predictions) -> ConfusionMatrix:
    cm = ConfusionMatrix()
    for y, p in zip(labels, predictions):
        if y == PARASITIZED:
            if p == PARASITIZED:
                cm.tp += 1
            else:
                cm.fn += 1
        elif p == PARASITIZED:
            cm.fp += 1
        else:
            cm.tn += 1
    return cm


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy/precision/recall/F1 with parasitized as positive; 0 on a zero denominator."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics((cm.tp + cm.tn) / cm.total, precision, recall, f1)


def evaluate(model: Model, threshold: Threshold, test_split: DatasetSplit):
    """Score, classify and tally a labelled split; returns ``(cm, metrics, rows)``."""
    if len(test_split) == 0:
        raise ValueError("test split is empty")
    losses = per_image_losses(model, test_split.images(model.config.input_size))
    rows = [ScoreRow(r.path, r.label, float(l), classify(l, threshold))
            for r, l in zip(test_split.records, losses)]
    cm = confusion([r.label for r in rows], [r.prediction for r in rows])
    return cm, compute_metrics(cm), rows


def reconstruct(model: Model, image: np.ndarray, out_dir, stem: str) -> tuple:
    """Write ``<stem>.orig.pgm`` and ``<stem>.recon.pgm`` for one preprocessed image."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 3:
        image = image[None]
    recon, _ = model_forward(model, image)
    orig_path = os.path.join(out_dir, f"{stem}.orig.pgm")
    recon_path = os.path.join(out_dir, f"{stem}.recon.pgm")
    write_pgm(orig_path, to_uint8(image[0, 0]))
    write_pgm(recon_path, to_uint8(recon[0, 0]))
    return orig_path, recon_path


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to 0..255 with round-half-up."""
    v = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    write_atomic(path, b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    m = _PGM_HEADER.match(blob)
    if not m or m.group(3) != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=m.end())
    if pixels.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w)


# -- report exports ---------------------------------------------------------

def write_history_csv(history: TrainingHistory, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, tr in enumerate(history.train_loss):
            va = repr(history.val_loss[i]) if i < len(history.val_loss) else ""
            w.writerow([i + 1, repr(tr), va])


def read_history_csv(path) -> TrainingHistory:
    h = TrainingHistory()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            h.train_loss.append(float(row["train_loss"]))
            if row["val_loss"]:
                h.val_loss.append(float(row["val_loss"]))
    return h


def write_scores_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path", "label", "loss", "prediction"])
        for r in rows:
            w.writerow([r.path, r.label, repr(r.loss), r.prediction])


def read_scores_csv(path) -> list:
    with open(path, newline="") as f:
        return [ScoreRow(r["path"], r["label"], float(r["loss"]), r["prediction"]) for r in csv.DictReader(f)]


def metrics_report(cm: ConfusionMatrix, metrics: Metrics, threshold: Threshold) -> dict:
    return {"confusion": asdict(cm), "metrics": asdict(metrics), "threshold": threshold.to_dict()}


def write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
