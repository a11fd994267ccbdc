"""Central finite-difference gradient checks shared by the test modules."""
import numpy as np

from firesense import autodiff as ad
from firesense.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check(fn, *inputs, rtol=1e-4, atol=1e-6, seed=0):
    """``fn`` maps Tensors to a Tensor; compares d(sum(w * fn))/d(input) for every input."""
    rng = np.random.default_rng(seed)
    ts = [Tensor(x, requires_grad=True) for x in inputs]
    out = fn(*ts)
    w = rng.normal(size=out.shape)
    ad.sum(ad.mul(out, w)).backward()
    for i, x in enumerate(inputs):
        def scalar(xi, i=i):
            args = [Tensor(v) for v in inputs]
            args[i] = Tensor(xi)
            return float((fn(*args).data * w).sum())
        num = numeric_grad(scalar, np.array(x, dtype=float))
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(num)
        err = np.abs(ana - num)
        tol = atol + rtol * np.abs(num)
        assert np.all(err <= tol), f"input {i}: max err {err.max():.3e}"
    return True
