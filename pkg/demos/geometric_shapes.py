"""
Geometric shapes: staged learning on natural-looking images
============================================================

Circle, square, triangle and cross, rasterized at 64x64. The modes are
learned one after another in order of singular value, and the final
kernel spectrum is concentrated on a handful of frequencies.

This is the slow one: about 20 seconds.
"""
import numpy as np

from lincnn import datasets as ds
from lincnn import dynamics as dyn
from lincnn import models as md
from lincnn.harness import half_rise_times

data = ds.gen_geometric_shapes(64)
svd = ds.dataset_svd(data)
print("s =", np.round(svd.s, 3))

state = md.init_random_cnn(data.n, data.p, 1e-5, seed=0)
cfg = md.TrainConfig(lr=1 / 20000, updates=60000, loss_mode="framework", sampling="shuffle", seed=0,
                     record_every=500, spectrum_indices=[])
log = md.sgd_train(state, data, cfg, svd)

print("half-rise updates per mode:", half_rise_times(log.steps, log.a, svd.s))
print("largest off-diagonal entry at the end: %.2e" % log.offdiag_max[-1])

rep = dyn.dominant_frequency_report(log.final_state, svd)
print(f"top {rep.top_m} frequencies hold {100 * rep.top_m_energy_fraction:.3f}% of kernel energy")
print("sparsity score %.4f, overlap score %.3f (chance %.3f)"
      % (rep.sparsity_score, rep.overlap_score, rep.overlap_chance))
