"""Pure-Python twins of the compiled kernels in ``_ckernels.pyx``."""

import math


def gamma_eigs(d, theta):
    acc = 0.0
    for di in d:
        x = theta * di
        acc += math.log1p(-x) + x / (1.0 - x)
    return acc


def bisect_theta_eigs(d, c, tol, max_iter, delta):
    d = [float(v) for v in d]
    lo = 0.0
    hi = (1.0 - delta) / max(d)
    mid = 0.5 * (lo + hi)
    it = 0
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        g = gamma_eigs(d, mid)
        if abs(g - c) <= tol:
            break
        if g < c:
            lo = mid
        else:
            hi = mid
    return mid, it
