# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the risk-sensitivity parameter.

Both routines work on the eigenvalues of the prediction covariance, so the
caller pays for one symmetric eigendecomposition and the bisection itself
runs without touching numpy.
"""

from libc.math cimport log1p, fabs


cdef double _gamma(const double[::1] d, double theta) nogil:
    cdef Py_ssize_t i
    cdef double x, acc = 0.0
    for i in range(d.shape[0]):
        x = theta * d[i]
        acc += log1p(-x) + x / (1.0 - x)
    return acc


def gamma_eigs(const double[::1] d, double theta):
    """Tolerance function evaluated on the eigenvalues ``d`` of P."""
    return _gamma(d, theta)


def bisect_theta_eigs(const double[::1] d, double c, double tol,
                      int max_iter, double delta):
    """Return ``(theta, iterations)`` with ``|gamma(theta) - c| <= tol``."""
    cdef double dmax = 0.0
    cdef Py_ssize_t i
    for i in range(d.shape[0]):
        if d[i] > dmax:
            dmax = d[i]
    cdef double lo = 0.0
    cdef double hi = (1.0 - delta) / dmax
    cdef double mid = 0.5 * (lo + hi)
    cdef double g
    cdef int it = 0
    with nogil:
        while it < max_iter:
            it += 1
            mid = 0.5 * (lo + hi)
            g = _gamma(d, mid)
            if fabs(g - c) <= tol:
                break
            if g < c:
                lo = mid
            else:
                hi = mid
    return mid, it
