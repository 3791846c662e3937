"""
Out-of-distribution media
=========================

Stronger perturbations than the training family degrade the predictions.
Run 03_train_propagator.py first to produce demo_model.wfpm.
"""
import warnings

from wfp.fields import Grid
from wfp.pipeline import SpectralLeakage, WfpModel, ood_error_curve

model = WfpModel.load("demo_model.wfpm")
rows, rho = ood_error_curve(model, [0.03, 0.1, 0.2], n_media=3, grid=Grid(1, 512), kind="ood_strong")
for r in rows:
    print(f"alpha={r.level:<5} mean L1 {r.mean_l1:.3e} (skipped {r.skipped})")
print("Spearman rho:", rho)

# a disc with a jump carries energy far beyond the medium window
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    rows, _ = ood_error_curve(model, [0.01, 0.1], n_media=2, grid=Grid(1, 512), kind="ood_disc")
print("disc sweep:", [f"{r.mean_l1:.3e}" for r in rows])
print("leakage warnings:", sum(issubclass(w.category, SpectralLeakage) for w in caught))
