"""
Pure cosines: sigmoidal mode learning in a CNN and a fully connected net
=========================================================================

Four classes, each a single cosine image. The input-output correlation
has one singular mode per class, so a small, aligned initialization lets
us read off each mode strength a_alpha during training and compare it
with the closed-form sigmoid.

Run with ``python demos/pure_cosines.py``. Writes pure_cosines.svg.
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lincnn import datasets as ds
from lincnn import dynamics as dyn
from lincnn import models as md

spec = ds.pure_cosines_default()
data = ds.gen_pure_cosines(spec)
svd = ds.dataset_svd(data)
print("n =", data.n, " classes =", data.p)
print("singular values:", np.round(svd.s, 3))

# Each mode lives on a pair of conjugate frequencies. Modes whose
# frequency pair is distinct get a d factor of 1/sqrt(2).
sets = ds.mode_frequency_sets(svd)
for a, f in enumerate(sets):
    print(f"mode {a}: frequencies {f}, d = {dyn.d_factor(f, data.n):.3f}")

# %%
# Train one seed of each model. The framework loss averages over the p
# outputs, so the learning rate seen by the theory is 2*lr/p.
lr = 1 / 2000
cfg = md.TrainConfig(lr=lr, updates=8000, loss_mode="framework", sampling="shuffle", seed=0,
                     record_every=20)
cnn = md.init_aligned_balanced(svd, spec, 1e-3, seed=0)
log_c = md.sgd_train(cnn, data, cfg, svd)

fc = md.init_aligned_fcnn(svd, log_c.a[0])
cfg_fc = md.TrainConfig(lr=data.n * lr, updates=8000, loss_mode="framework", sampling="shuffle",
                        seed=0, record_every=20)
log_f = md.fcnn_train(fc, data, cfg_fc, svd)

lam = md.theory_learning_rate(lr, data.p)
theory = dyn.theory_curves(dyn.mode_predictions(svd, log_c.a[0], lam), log_c.steps)

# %%
fig, ax = plt.subplots(figsize=(7, 4))
for a in range(data.p):
    c = f"C{a}"
    ax.plot(log_c.steps, log_c.a[:, a], c=c, label=f"CNN mode {a}")
    ax.plot(log_f.steps, log_f.a[:, a], c=c, ls=":")
    ax.plot(log_c.steps, theory[:, a], c="k", lw=0.6, ls="--")
ax.set_xlabel("update")
ax.set_ylabel("a")
ax.legend(fontsize=8)
fig.savefig("pure_cosines.svg")

dev = np.abs(log_c.a - theory).max(axis=0) / svd.s
print("max |a - theory| / s per mode:", np.round(dev, 3))
print("final loss CNN %.2e, FCNN %.2e" % (log_c.loss[-1], log_f.loss[-1]))
