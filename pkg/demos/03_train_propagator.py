"""
Training a small propagator
===========================

Plane-wave training pairs are generated with the reference solver on
perturbed media and a small gated network learns the windowed evolution.
This is a toy budget; the CLI defaults use 2000 samples and 2000 epochs.
"""
import numpy as np

from wfp.datagen import MediumSpec, build_dataset
from wfp.fields import Grid
from wfp.network import ActivationSpec, TrainConfig, fit_dataset
from wfp.pipeline import WfpModel

grid = Grid(1, 512)
ds = build_dataset(220, MediumSpec(alpha=0.03), grid, seed=0, k_range=(16, 96))
train, test = ds.split(20)
print("records:", len(train), "train /", len(test), "test; token", train.medium_feat.shape[1], "reals")

cfg = TrainConfig(epochs=200, hidden=64, batch=50, log_every=50)
params, meta, history = fit_dataset(train, cfg, ActivationSpec(), test_ds=test)
for epoch, tr, te in history:
    print(f"epoch {epoch:4d}  train {tr:.3e}  test {te:.3e}")

model = WfpModel(params, meta)
model.save("demo_model.wfpm")
print("saved demo_model.wfpm with activation", params.act.label())
