"""Central finite differences shared by the model and acceptance tests."""
import numpy as np

from lincnn import models as md


def numeric_grad(f, params, h=1e-5):
    g = np.zeros_like(params)
    flat = params.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-300)


def cnn_instance(rng, mode):
    n = int(rng.integers(2, 6))
    p = int(rng.integers(1, 5))
    st = md.CnnState(rng.normal(size=n * n), rng.normal(size=(p, n * n)))
    x = rng.normal(size=(n, n))
    y = rng.normal(size=p)

    def loss():
        return md.mse_loss(y, md.cnn_forward(st, x)[0], mode)

    gk, gW = md.cnn_gradients(st, x, y, mode)
    return max(rel_err(gk, numeric_grad(loss, st.kernel)), rel_err(gW, numeric_grad(loss, st.W)))


def fcnn_instance(rng, mode):
    n = int(rng.integers(2, 5))
    p = int(rng.integers(1, 5))
    h = int(rng.integers(1, 8))
    st = md.FcnnState(rng.normal(size=(h, n * n)), rng.normal(size=(p, h)))
    x = rng.normal(size=n * n)
    y = rng.normal(size=p)

    def loss():
        return md.mse_loss(y, md.fcnn_forward(st, x)[0], mode)

    g1, g2 = md.fcnn_gradients(st, x, y, mode)
    return max(rel_err(g1, numeric_grad(loss, st.W1)), rel_err(g2, numeric_grad(loss, st.W2)))
