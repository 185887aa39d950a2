"""Central finite-difference gradient checking.

The numeric gradient only ever calls the scalar objective, so it stays
independent of any analytic backward pass it is used to verify.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(fn, arrays, step=1e-5):
    """Central-difference gradient of ``fn`` w.r.t. each array in place.

    ``fn`` takes no arguments and reads the (mutated) arrays; the arrays
    are restored before returning.  Returns one gradient per array.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=float)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = fn()
            flat[i] = keep - step
            down = fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    """max_i |a_i - n_i| scaled by the numeric gradient's overall magnitude.

    The scale is max(1, ||n||_inf) so that near-zero components do not
    blow the ratio up on round-off noise.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        n = np.asarray(n, dtype=float)
        scale = max(1.0, float(np.max(np.abs(n))) if n.size else 0.0)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n))) / scale)
    return worst
