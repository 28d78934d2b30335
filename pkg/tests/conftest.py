"""Shared test helpers: finite-difference gradient checking and tiny nets."""

import numpy as np
import pytest

from turbdiff import autodiff as ad
from turbdiff.denoiser import NetSpec, init_params
from turbdiff.rng import Rng


def finite_diff_check(loss_fn, tensors, h=1e-6, rtol=1e-5, floor=1e-4):
    """Compare analytic gradients of ``loss_fn()`` against central finite
    differences for every element of every tensor in ``tensors``.

    ``loss_fn`` must rebuild the graph from the tensors' current ``.data``
    on each call.  The relative error uses ``max(|analytic|, |fd|, floor)``
    as denominator so near-zero gradients are compared absolutely at the
    floor scale.  Returns the worst relative error seen.
    """
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    ad.backward(loss)
    analytic = {k: t.grad.copy() for k, t in tensors.items()}

    worst = 0.0
    with ad.no_grad():
        for name, t in tensors.items():
            base = t.data
            flat = base.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_fn().item()
                flat[i] = orig - h
                lm = loss_fn().item()
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                an = analytic[name].reshape(-1)[i]
                err = abs(an - fd) / max(abs(an), abs(fd), floor)
                if err > worst:
                    worst = err
                assert err < rtol, (
                    f"gradient mismatch at {name}[{i}]: analytic {an:.3e}, "
                    f"finite-diff {fd:.3e}, rel err {err:.2e}")
    return worst


def tiny_spec(seed: int = 0) -> NetSpec:
    """A randomized small descriptor for fast exhaustive gradient checks."""
    r = Rng(seed, stream_id=777)
    size = int(r.integers(3, 5, (1,))[0]) * 2  # 6 or 8
    w1 = int(r.integers(1, 3, (1,))[0]) * 2    # 2 or 4
    w2 = int(r.integers(1, 4, (1,))[0]) * 2    # 2, 4 or 6
    w3 = int(r.integers(1, 4, (1,))[0]) * 2
    return NetSpec(image_size=size, widths=(w1, w2, w3, w1), emb_dim=4,
                   groups=2, cond_channels=1, out_channels=1)


def randomized_params(spec: NetSpec, seed: int = 0):
    """Fan-in init plus small noise everywhere (including the zero-init
    head) so no gradient path is structurally dark."""
    params = init_params(spec, Rng(seed))
    r = Rng(seed, stream_id=12345)
    for t in params.tensors.values():
        t.data = t.data + 0.05 * r.gauss(t.data.shape)
    return params


@pytest.fixture
def rng():
    return Rng(0)
