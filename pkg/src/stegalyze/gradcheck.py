"""Central finite-difference checks for the autodiff core."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def relative_error(auto, numeric, floor=1e-8):
    """Worst elementwise ``|a - n| / (|a| + |n| + floor)``."""
    auto = np.asarray(auto, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if auto.size == 0:
        return 0.0
    return float(np.max(np.abs(auto - numeric) / (np.abs(auto) + np.abs(numeric) + floor)))


def numerical_gradient(loss_fn, tensors, eps=1e-4):
    """Central differences of the scalar ``loss_fn()`` w.r.t. each tensor's values.

    ``loss_fn`` is re-evaluated after perturbing ``tensor.data`` in place, so it
    must read the tensors it is given on every call.
    """
    grads = []
    for t in tensors:
        g = np.zeros(t.shape, dtype=np.float64)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def autodiff_gradient(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    return [np.zeros(t.shape) if t.grad is None else t.grad for t in tensors]


def check_gradients(loss_fn, tensors, eps=1e-4, reference=None):
    """Relative error of autodiff against central differences, per tensor.

    With ``reference=(ref_loss_fn, ref_tensors)`` the finite differences are
    taken on a separate (typically float64) copy of the graph; this is how
    32-bit gradients are checked without drowning in 32-bit rounding.
    """
    auto = autodiff_gradient(loss_fn, tensors)
    if reference is None:
        numeric = numerical_gradient(loss_fn, tensors, eps)
    else:
        numeric = numerical_gradient(reference[0], reference[1], eps)
    return [relative_error(a, n) for a, n in zip(auto, numeric)]


def leaf(array, dtype=np.float64) -> Tensor:
    return Tensor(np.array(array, dtype=dtype), requires_grad=True)
