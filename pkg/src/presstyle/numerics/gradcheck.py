"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, arrays, index, h=1e-5):
    """d fn(*arrays) / d arrays[index] by central differences (fn returns a float)."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn(*arrays)
        x[i] = old - h
        fm = fn(*arrays)
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-6):
    """max |a - b| / max(|a|, |b|, floor), elementwise then max."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def check_gradients(build_loss, arrays, h=1e-5, floor=1e-6):
    """Compare reverse-mode gradients of ``build_loss(*tensors)`` against
    central differences for every array in ``arrays``.

    ``build_loss`` receives Tensors and must return a scalar Tensor. Returns
    the list of relative errors, one per input.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    analytic = backward(build_loss(*tensors), params=tensors)

    def f(*arrs):
        return float(build_loss(*[Tensor(a) for a in arrs]).data)

    errs = []
    for i, g in enumerate(analytic):
        num = numerical_grad(f, arrays, i, h)
        errs.append(relative_error(g if g is not None else np.zeros_like(num), num, floor))
    return errs
