"""Central finite-difference gradient verification.

This is the binding oracle for every differentiable operation in the package:
analytic gradients are trusted only insofar as they match (f(x+h) - f(x-h)) /
(2h) elementwise.
"""

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def grad_check(op, inputs, step=1e-5):
    """Max relative error between analytic and numeric gradients.

    op maps a list of tensors to a scalar loss; `inputs` is a list of float64
    arrays (kept small: at most 10^4 elements in total).  Relative error per
    element is |analytic - numeric| / max(1, |analytic| + |numeric|).
    """
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True)
              for x in inputs]
    total = sum(leaf.data.size for leaf in leaves)
    if total > 10_000:
        raise ContractError(f"grad_check inputs too large ({total} elements)")
    out = op(*leaves)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check op must return a scalar tensor")
    out.backward()
    analytic = [leaf.grad.copy() if leaf.grad is not None
                else np.zeros_like(leaf.data) for leaf in leaves]

    def value():
        return float(op(*leaves).data.reshape(()))

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = value()
            flat[i] = keep - step
            lo = value()
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def grad_check_random(op, shapes, seed, scale=1.0, step=1e-5):
    """grad_check with inputs drawn N(0, scale) from the given seed."""
    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal(s) * scale for s in shapes]
    return grad_check(op, inputs, step=step)
