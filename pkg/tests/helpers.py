"""Finite-difference gradient checking shared by several test modules."""

import numpy as np

from gicx.tensor import backward, no_grad


def fd_error(build, params, h=1e-6, probe=64, seed=0):
    """Worst relative mismatch between backprop and central differences.

    ``build(params)`` must construct a fresh graph and return a scalar loss
    tensor. Errors are scaled per tensor by the largest analytic gradient
    entry, so zero-gradient coordinates do not blow up the ratio.
    """
    for p in params:
        p.zero_grad()
    loss = build(params)
    backward(loss)
    analytic = [np.array(p.grad, copy=True) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.ravel()
        grad_flat = grad.ravel()
        scale = max(float(np.abs(grad).max()), 1e-6)
        if flat.size <= probe:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, probe, replace=False)
        for j in coords:
            original = flat[j]
            with no_grad():
                flat[j] = original + h
                plus = float(build(params).data[0])
                flat[j] = original - h
                minus = float(build(params).data[0])
            flat[j] = original
            fd = (plus - minus) / (2.0 * h)
            worst = max(worst, abs(fd - grad_flat[j]) / scale)
    return worst
