"""Shared test utilities: central finite-difference gradient oracle."""

import numpy as np

from densecount.tensor import Tensor


def numeric_gradient(fn, values, index, step=1e-5):
    """Central-difference gradient of scalar ``fn(*tensors)`` w.r.t. one input.

    ``fn`` receives fresh Tensor leaves built from ``values`` on every call,
    so it never touches the autodiff path under test.
    """
    base = [np.array(v, dtype=np.float64) for v in values]
    grad = np.zeros_like(base[index])
    it = np.nditer(base[index], flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        for sign in (+1, -1):
            probe = [b.copy() for b in base]
            probe[index][ix] += sign * step
            out = fn(*[Tensor(p) for p in probe])
            if sign > 0:
                f_plus = out.item()
            else:
                f_minus = out.item()
        grad[ix] = (f_plus - f_minus) / (2 * step)
        it.iternext()
    return grad


def analytic_gradients(fn, values):
    """Autodiff gradients of scalar ``fn`` w.r.t. every input."""
    leaves = [Tensor(np.array(v, dtype=np.float64), requires_grad=True) for v in values]
    out = fn(*leaves)
    out.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / scale


def assert_gradients_match(fn, values, tol=1e-3, step=1e-5):
    """Check every analytic gradient of ``fn`` against central differences."""
    analytic = analytic_gradients(fn, values)
    for i in range(len(values)):
        numeric = numeric_gradient(fn, values, i, step=step)
        err = relative_error(analytic[i], numeric)
        assert err < tol, f"gradient {i} mismatch: relative error {err:.3e}"
