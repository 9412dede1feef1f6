"""Central finite-difference oracle used across the gradient tests.

Kept independent of the reverse-mode engine: it only re-runs a forward
function at perturbed inputs and never inspects the graph.
"""

import numpy as np

FD_STEP = 1e-5


def numeric_grad(f, arrays, step=FD_STEP):
    """Central-difference gradient of scalar f(arrays) w.r.t. each array.

    `arrays` is a list of float64 numpy arrays mutated in place while probing;
    they are restored before returning.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    """max_i |a_i - n_i| / max(1, |a_i|, |n_i|) over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
