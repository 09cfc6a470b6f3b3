"""
End-to-end run through the command line
========================================

The ``malaria-ae`` command chains the same library calls: train, calibrate,
evaluate, predict and reconstruct, all driven by one JSON config. This demo
writes a small synthetic dataset in the NIH directory layout and runs every
subcommand against it.
"""

import json
import os
import tempfile

from malaria_ae import cli
from malaria_ae.synthetic import add_dots, normal_images, write_dataset

work = tempfile.mkdtemp(prefix="malaria_ae_demo_")
data = os.path.join(work, "cells")

# Uninfected/ gets plain blobs, Parasitized/ gets dotted ones
write_dataset(data, normal_images(80, 1), add_dots(normal_images(20, 2), 3, radius=2.5), upscale=3)

config = {
    "dataset_root": data,
    "output_dir": os.path.join(work, "run"),
    "seed": 0,
    "model": {"epochs": 80, "batch_size": 16},
    "split": {"train_n": 50, "val_n": 15, "test_spec": {"parasitized": 15, "uninfected": 15}},
    "threshold": {"k": 3.0, "source": "validation"},
}
config_path = os.path.join(work, "run.json")
with open(config_path, "w") as f:
    json.dump(config, f, indent=2)

###############################################################################
# Each subcommand returns its exit code; 0 is success.
for command in ("train", "calibrate", "evaluate"):
    print(f"$ malaria-ae {command} --config run.json")
    assert cli.main([command, "--config", config_path]) == 0

###############################################################################
# Per-image verdicts, then original/reconstruction PGM pairs.
samples = [os.path.join(data, "Uninfected", "img_00000.png"), os.path.join(data, "Parasitized", "img_00001.png")]
cli.main(["predict", "--config", config_path] + samples)
cli.main(["reconstruct", "--config", config_path, "--out", os.path.join(work, "recon")] + samples)

print("artifacts in", config["output_dir"], ":", sorted(os.listdir(config["output_dir"])))
