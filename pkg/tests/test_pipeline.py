import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from malaria_ae.data import PARASITIZED, UNINFECTED, DatasetSplit, ImageRecord
from malaria_ae.errors import NumericError
from malaria_ae.model import Model, ModelConfig, build_model, checkpoint_bytes, model_forward, zero_parameters
from malaria_ae.pipeline import (
    ConfusionMatrix,
    Threshold,
    calibrate_threshold,
    classify,
    compute_metrics,
    confusion,
    evaluate,
    metrics_report,
    per_image_loss,
    per_image_losses,
    read_history_csv,
    read_pgm,
    read_scores_csv,
    reconstruct,
    to_uint8,
    train,
    write_history_csv,
    write_json,
    write_scores_csv,
)
from malaria_ae.synthetic import anomalous_images, normal_images


def zero_model():
    cfg = ModelConfig()
    return Model(cfg, zero_parameters(cfg))


# -- threshold ---------------------------------------------------------------

def test_calibrate_examples():
    t = calibrate_threshold([1, 1, 1])
    assert (t.mean, t.std, t.tau, t.n) == (1, 0, 1, 3)
    t = calibrate_threshold([0, 2], k=3)
    assert t.mean == 1 and t.std == pytest.approx(math.sqrt(2), abs=1e-15)
    assert abs(t.tau - (1 + 3 * math.sqrt(2))) < 1e-9
    assert t.tau == pytest.approx(5.242640687, abs=1e-9)
    assert calibrate_threshold([0.2, 0.9, 0.4], k=0).tau == pytest.approx(0.5)


def test_calibrate_single_loss_and_population_form():
    t = calibrate_threshold([0.25])
    assert t.std == 0 and t.tau == 0.25
    assert calibrate_threshold([0, 2], ddof=0).std == 1.0


def test_calibrate_rejects_bad_input():
    with pytest.raises(ValueError):
        calibrate_threshold([])
    with pytest.raises(ValueError):
        calibrate_threshold([0.1, float("nan")])
    with pytest.raises(ValueError):
        calibrate_threshold([-0.1])


def test_classify_boundary():
    t = calibrate_threshold([0, 2])
    assert classify(t.tau, t) == UNINFECTED
    assert classify(math.nextafter(t.tau, math.inf), t) == PARASITIZED
    assert classify(0.0, t) == UNINFECTED


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=20), st.floats(0.01, 100), st.floats(0, 10))
def test_threshold_scale_equivariance(losses, c, k):
    t = calibrate_threshold(losses, k=k)
    ts = calibrate_threshold([c * l for l in losses], k=k)
    assert ts.mean == pytest.approx(c * t.mean, rel=1e-9, abs=1e-300)
    assert ts.std == pytest.approx(c * t.std, rel=1e-9, abs=1e-12)
    assert ts.tau == pytest.approx(c * t.tau, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5))
def test_decision_rule_monotone(a, b, tau):
    assume(a > b)
    t = Threshold(tau, 0.0, 3.0, tau)
    if classify(b, t) == PARASITIZED:
        assert classify(a, t) == PARASITIZED


# -- metrics -----------------------------------------------------------------

def test_metrics_table_row():
    m = compute_metrics(ConfusionMatrix(tp=2757, fp=83, fn=0, tn=2672))
    assert round(100 * m.accuracy, 2) == 98.49
    assert round(100 * m.precision, 2) == 97.08
    assert m.recall == 1.0
    assert round(100 * m.f1, 2) == 98.52


def test_metrics_perfect_and_degenerate():
    m = compute_metrics(ConfusionMatrix(tp=3, tn=4))
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1, 1, 1, 1)
    # everything predicted uninfected on a mixed set
    cm = confusion([PARASITIZED, PARASITIZED, UNINFECTED], [UNINFECTED] * 3)
    assert cm == ConfusionMatrix(tp=0, fp=0, fn=2, tn=1)
    m = compute_metrics(cm)
    assert (m.precision, m.recall, m.f1) == (0, 0, 0)
    with pytest.raises(ValueError):
        compute_metrics(ConfusionMatrix())


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_metric_identities(tp, fp, fn, tn):
    cm = ConfusionMatrix(tp, fp, fn, tn)
    assume(cm.total > 0)
    m = compute_metrics(cm)
    assert m.accuracy * cm.total == pytest.approx(tp + tn)
    assert m.f1 * (m.precision + m.recall) == pytest.approx(2 * m.precision * m.recall)
    assert (m.recall == 1) == (fn == 0 and tp > 0)
    assert all(0 <= v <= 1 for v in (m.accuracy, m.precision, m.recall, m.f1))


# -- per-image loss ------------------------------------------------------------

def test_per_image_loss_zero_weight_model():
    m = zero_model()
    assert per_image_loss(m, np.full((1, 1, 32, 32), 0.5, np.float32)) == 0
    assert per_image_loss(m, np.zeros((1, 1, 32, 32), np.float32)) == 0.25
    assert per_image_loss(m, np.zeros((1, 32, 32), np.float32)) == 0.25
    with pytest.raises(ValueError):
        per_image_loss(m, np.zeros((2, 1, 32, 32), np.float32))
    with pytest.raises(ValueError):
        per_image_loss(m, np.zeros((1, 1, 16, 16), np.float32))


def test_batched_losses_match_single(rng):
    m = build_model(ModelConfig(seed=2))
    x = rng.random((5, 1, 32, 32)).astype(np.float32)
    batched = per_image_losses(m, x, batch_size=2)
    for i in range(5):
        recon, _ = model_forward(m, x[i:i + 1])
        d = (recon - x[i:i + 1]).astype(np.float64)
        assert batched[i] == pytest.approx(np.mean(d * d), rel=1e-6)


# -- training ----------------------------------------------------------------

def test_zero_epochs_returns_initial_model():
    m = build_model(ModelConfig(seed=3, epochs=0))
    before = checkpoint_bytes(m)
    m, h = train(m, normal_images(4, 0))
    assert h.train_loss == [] and h.val_loss == []
    assert checkpoint_bytes(m) == before


def test_training_is_deterministic():
    x = normal_images(12, 5)
    runs = []
    for _ in range(2):
        m = build_model(ModelConfig(seed=9, epochs=4, batch_size=5))
        m, h = train(m, x[:8], x[8:])
        runs.append((h.train_loss, h.val_loss, checkpoint_bytes(m)))
    assert runs[0] == runs[1]
    assert len(runs[0][0]) == len(runs[0][1]) == 4
    assert all(math.isfinite(v) and v >= 0 for v in runs[0][0] + runs[0][1])


def test_training_reduces_loss():
    x = normal_images(32, 6)
    m, h = train(build_model(ModelConfig(seed=1, epochs=30)), x)
    assert h.train_loss[-1] < 0.5 * h.train_loss[0]
    assert m.epochs_trained == 30


def test_non_finite_input_aborts_with_location():
    x = normal_images(4, 0)
    x[2, 0, 5, 5] = np.nan
    with pytest.raises(NumericError, match="epoch 0, batch 0"):
        train(build_model(ModelConfig(epochs=1)), x)


def test_on_epoch_callback():
    seen = []
    train(build_model(ModelConfig(epochs=2)), normal_images(3, 0), normal_images(2, 1),
          on_epoch=lambda e, tr, va: seen.append(e))
    assert seen == [1, 2]


# -- evaluation and reports ----------------------------------------------------

def split_of(images, label, prefix):
    return [ImageRecord(f"{prefix}{i}", label, img) for i, img in enumerate(images)]


def test_evaluate_on_synthetic_fixture(tmp_path):
    normals, anomalies = normal_images(40, 11), anomalous_images(10, 12)
    m, _ = train(build_model(ModelConfig(seed=0, epochs=40)), normals[:30])
    thr = calibrate_threshold(per_image_losses(m, normals[30:]))
    test = DatasetSplit("test", split_of(anomalies, PARASITIZED, "p") + split_of(normals[30:], UNINFECTED, "u"))
    cm, metrics, rows = evaluate(m, thr, test)
    assert cm.total == 20 and len(rows) == 20
    assert [r.path for r in rows] == [r.path for r in test.records]
    assert metrics == compute_metrics(confusion([r.label for r in rows], [r.prediction for r in rows]))
    for r in rows:
        assert r.prediction == classify(r.loss, thr)

    write_scores_csv(rows, tmp_path / "scores.csv")
    back = read_scores_csv(tmp_path / "scores.csv")
    assert back == rows
    assert (tmp_path / "scores.csv").read_text().splitlines()[0] == "path,label,loss,prediction"
    write_json(metrics_report(cm, metrics, thr), tmp_path / "metrics.json")
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert set(rep) == {"confusion", "metrics", "threshold"}
    assert set(rep["threshold"]) == {"mean", "std", "k", "tau", "source", "n"}
    assert rep["confusion"] == {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn}


def test_evaluate_empty_split():
    with pytest.raises(ValueError):
        evaluate(zero_model(), calibrate_threshold([0.1]), DatasetSplit("test", []))


def test_history_csv_round_trip(tmp_path):
    m, h = train(build_model(ModelConfig(epochs=3)), normal_images(4, 0), normal_images(2, 1))
    write_history_csv(h, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4
    back = read_history_csv(tmp_path / "h.csv")
    assert back.train_loss == h.train_loss and back.val_loss == h.val_loss


# -- reconstruction ------------------------------------------------------------

def test_reconstruct_zero_model_is_mid_gray(tmp_path):
    img = normal_images(1, 0)[0]
    orig, recon = reconstruct(zero_model(), img, tmp_path, "cell")
    assert recon.endswith("cell.recon.pgm") and orig.endswith("cell.orig.pgm")
    r = read_pgm(recon)
    assert r.shape == (32, 32) and r.dtype == np.uint8 and (r == 128).all()
    np.testing.assert_array_equal(read_pgm(orig), to_uint8(img[0]))
    assert open(recon, "rb").read().startswith(b"P5\n32 32\n255\n")


def test_to_uint8_rounds_half_up():
    np.testing.assert_array_equal(to_uint8(np.array([0.0, 0.5, 1.0, 1.5 / 255, 2.5 / 255])), [0, 128, 255, 2, 3])


def test_read_pgm_keeps_leading_whitespace_bytes(tmp_path):
    from malaria_ae.pipeline import write_pgm

    px = np.array([[10, 32], [9, 13]], np.uint8)
    write_pgm(tmp_path / "w.pgm", px)
    np.testing.assert_array_equal(read_pgm(tmp_path / "w.pgm"), px)
