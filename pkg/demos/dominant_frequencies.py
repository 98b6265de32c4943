"""
Sums of cosines: one frequency wins per mode
=============================================

Each class image is a sum of two cosines with different amplitudes.
Starting from a tiny random kernel, the frequency with the larger
amplitude grows first and the runner-up stays near zero. We also
integrate the reduced winner-take-all equations from the same start
and compare.
"""
import numpy as np

from lincnn import datasets as ds
from lincnn import dynamics as dyn
from lincnn import models as md

spec = ds.sums_of_cosines_default()
data = ds.gen_sums_of_cosines(spec)
svd = ds.dataset_svd(data)
sets = ds.mode_frequency_sets(svd)
print("s =", np.round(svd.s, 3), " frequency sets:", sets)

state = md.init_random_cnn(data.n, data.p, 1e-5, seed=3)
cfg = md.TrainConfig(lr=1e-4, updates=1000, loss_mode="framework", sampling="shuffle", seed=3,
                     record_every=50, spectrum_indices=[j for f in sets for j in f])
log = md.sgd_train(state, data, cfg, svd)
for step, a in zip(log.steps, log.a):
    print(f"{step:5d}  a = {np.round(a, 3)}")

trained = log.final_state
rep = dyn.dominant_frequency_report(trained, svd)
print("energy outside dominant frequencies: %.4f" % rep.energy_outside_dominant)
print("winning frequencies dominant:", rep.winners_dominant)

verdict = dyn.verify_minimal_norm(trained, svd, data)
print("minimal-norm check:", verdict.status)

# %%
# Reduced dynamics from an aligned, balanced start.
st = md.init_aligned_balanced(svd, spec, 1e-5, seed=0, supports=sets)
lg = md.sgd_train(st, data, md.TrainConfig(lr=1e-4, updates=600, loss_mode="framework",
                                           sampling="shuffle", seed=0,
                                           record_every=1), svd)
w = dyn.wta_integrate(svd, spec, np.abs(st.kernel_spectrum()) ** 2,
                      md.theory_learning_rate(1e-4, data.p), 600, supports=sets)
print("max |a_sgd - a_reduced| / s:", np.round(np.abs(lg.a - w.a).max(axis=0) / svd.s, 4))
