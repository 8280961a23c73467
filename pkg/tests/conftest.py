import numpy as np
import pytest

from nactcn import Rng, Tape, Tensor


@pytest.fixture
def rng():
    return Rng(1234)


def numeric_grad(f, arr, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * eps)
    return out.reshape(arr.shape)


def tape_grad(f, *tensors):
    """Gradients of scalar tensor ``f()`` w.r.t. ``tensors`` via the tape."""
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss, tensors)
    return [t.grad for t in tensors]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))
