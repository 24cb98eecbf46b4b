import numpy as np
import pytest

import pointseg.autodiff as ad


def rel_err(a, b):
    """Largest elementwise relative discrepancy.

    Components far below the gradient's overall scale are measured against
    1e-3 of that scale; central differences cannot resolve them any better.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    floor = max(1e-3 * scale, 1e-8)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def random_prob(rng, shape, k, sharpness=3.0):
    z = rng.normal(0, sharpness, size=tuple(shape) + (k,))
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def grad_check(loss_fn, n=100, seed=0, tol=1e-4):
    """``loss_fn(tape, logits_tensor, rng_state) -> scalar``; gradients w.r.t. logits."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 5))
        shape = (int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)), k)
        z0 = rng.normal(0, 1.5, size=shape)
        labels = rng.integers(0, k + 1, size=shape[:-1])
        labels.flat[rng.integers(labels.size)] = int(rng.integers(1, k + 1))
        extra = rng.normal(0, 1.5, size=shape)

        def f(z):
            t = ad.Tape()
            return loss_fn(t, t.constant(z), labels, extra).item()

        t = ad.Tape()
        zt = t.parameter(z0, "z")
        g = ad.backward(t, loss_fn(t, zt, labels, extra))["z"]
        worst = max(worst, rel_err(g, ad.finite_diff_grad(f, z0, 1e-6)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
