"""
Threshold calibration and evaluation
====================================

The decision boundary is mean + 3 sample standard deviations of the loss
over normal images. Anything strictly above it is called parasitized.
"""

import math

from malaria_ae import calibrate_threshold, classify, compute_metrics
from malaria_ae.pipeline import ConfusionMatrix

###############################################################################
# A two-value example keeps the arithmetic visible.
t = calibrate_threshold([0.0, 2.0], k=3)
print(f"mean {t.mean}, std {t.std:.6f}, tau {t.tau:.9f}")
print("1 + 3*sqrt(2) =", f"{1 + 3 * math.sqrt(2):.9f}")

# the boundary itself still counts as normal
print("classify(tau):", classify(t.tau, t))
print("classify(tau + eps):", classify(math.nextafter(t.tau, math.inf), t))

###############################################################################
# Metrics from a confusion matrix. On a 5,512 image test set with every
# parasitized cell caught and 83 false alarms:
m = compute_metrics(ConfusionMatrix(tp=2757, fp=83, fn=0, tn=2672))
for name in ("accuracy", "precision", "recall", "f1"):
    print(f"{name:9s} {100 * getattr(m, name):.2f}%")
