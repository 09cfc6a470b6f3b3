"""
Training on synthetic cells
===========================

Real cell images are not needed to see the method work. Here, "normal"
images are smooth blobs and "anomalous" ones carry an extra bright dot. The
autoencoder only ever sees normal images, learns to reproduce them, and
then struggles on the dotted ones.
"""

from malaria_ae import ModelConfig, build_model, train
from malaria_ae.pipeline import per_image_losses
from malaria_ae.synthetic import anomalous_images, normal_images

normals = normal_images(300, seed=100)
anomalies = anomalous_images(100, seed=200)
print("images:", normals.shape, normals.dtype, f"range [{normals.min():.2f}, {normals.max():.2f}]")

###############################################################################
# Default architecture: encoder 4/16/32 channels, decoder 16/4/1.
# Fewer epochs than the default keep this demo quick.
model = build_model(ModelConfig(seed=0, epochs=60))


def report(epoch, train_loss, val_loss):
    if epoch % 10 == 0:
        print(f"epoch {epoch:3d}  train {train_loss:.5f}  val {val_loss:.5f}")


model, history = train(model, normals[:250], normals[250:], on_epoch=report)

###############################################################################
# Reconstruction error is the anomaly score.
held_out = per_image_losses(model, normals[250:])
dotted = per_image_losses(model, anomalies)
print(f"mean loss, held-out normals: {held_out.mean():.5f}")
print(f"mean loss, anomalies:        {dotted.mean():.5f}")
print("anomalies score higher on average:", bool(dotted.mean() > held_out.mean()))
print(f"final train loss after {history.epochs} epochs: {history.train_loss[-1]:.5f}")
