"""Shared builders for gradient checks: package analytic side vs long-double oracle."""

import numpy as np

from oracles import LD, ld_model, ld_ntxent, ld_suncet
from suncet.data import pair_index
from suncet.losses import ntxent, suncet
from suncet.model import backward, embed, init_params, mlp_specs
from suncet.tensor import gradcheck


def random_model(seed, d_in=4, enc=(8, 6), proj=(6, 3)):
    """He-initialized MLP with small random biases (a generic point, not the zero-bias init)."""
    p = init_params(mlp_specs((d_in, *enc)), mlp_specs((enc[-1], *proj), "identity"), seed)
    g = np.random.default_rng(seed + 1000)
    for k in p.names():
        if k.endswith(".bias"):
            p.tensors[k] = 0.1 * g.standard_normal(p.tensors[k].shape)
    return p


def loss_pair(kind, b):
    """(package loss on float64 z, long-double oracle) for a batch of ``2b`` rows."""
    if kind == "ntxent":
        partner = pair_index(b)
        return (lambda z, tau: ntxent(z, partner, tau)), (lambda z, tau: ld_ntxent(z, partner, tau))
    y = np.concatenate([np.arange(b), np.arange(b)]) % max(b // 2, 1) if b > 1 else np.zeros(2, int)
    return (lambda z, tau: suncet(z, y, tau)), (lambda z, tau: ld_suncet(z, y, tau))


def embedding_gradcheck(z, kind, tau=0.5, h=1e-6):
    pkg, oracle = loss_pair(kind, len(z) // 2)
    _, grad = pkg(z, tau)
    return gradcheck(lambda v: oracle(v, tau), np.asarray(z).astype(LD), h, analytic=grad)


def model_gradcheck(params, x, kind, tau=0.5, h=1e-6):
    """Worst relative error over every parameter tensor of encoder + projection."""
    pkg, oracle = loss_pair(kind, len(x) // 2)
    q = params.copy()
    q.zero_grad()
    z, caches = embed(q, x)
    _, dz = pkg(z, tau)
    backward(q, caches, dz)
    worst = 0.0
    for name in params.names():
        shape = params.tensors[name].shape

        def f(w, name=name, shape=shape):
            t = dict(params.tensors)
            t[name] = w.reshape(shape)
            return oracle(ld_model(t, params, x), tau)

        err = gradcheck(f, np.atleast_2d(params.tensors[name]).astype(LD), h,
                        analytic=np.atleast_2d(q.grads[name]))
        worst = max(worst, err)
    return worst
