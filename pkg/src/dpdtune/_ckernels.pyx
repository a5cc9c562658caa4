# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled particle kernels; same contracts as ``dpdtune._pykernels``.

Per-particle work runs under ``prange``. Every reduction has a fixed
summation order (sequential over observations inside a particle, sequential
over particles inside an observation), so results do not depend on the
thread count.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, expm1, log, log1p, INFINITY

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


cdef inline double _log_dens(const double[:, ::1] theta, Py_ssize_t j,
                             const double[::1] y, const double[:, ::1] X,
                             Py_ssize_t i, Py_ssize_t p, double log_sigma,
                             double inv_sigma, double* resid) noexcept nogil:
    cdef double loc = 0.0
    cdef Py_ssize_t k
    for k in range(p):
        loc = loc + X[i, k] * theta[j, k]
    resid[0] = y[i] - loc
    cdef double z = resid[0] * inv_sigma
    return -0.5 * z * z - log_sigma - 0.5 * LOG_2PI


cdef inline double _expm1(double x) noexcept nogil:
    # glibc expm1 is several times slower than exp; only small |x| needs it
    if x < -0.25 or x > 0.25:
        return exp(x) - 1.0
    return expm1(x)


cdef inline double _target_row(const double[:, ::1] theta, Py_ssize_t j,
                               const double[::1] y, const double[:, ::1] X,
                               double gamma) noexcept nogil:
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef double sigma = theta[j, p]
    cdef double log_sigma = log(sigma)
    cdef double inv_sigma = 1.0 / sigma
    cdef double acc = 0.0
    cdef double r, logf
    cdef Py_ssize_t i
    if gamma == 0.0:
        for i in range(n):
            acc = acc + _log_dens(theta, j, y, X, i, p, log_sigma, inv_sigma, &r)
        return acc
    for i in range(n):
        logf = _log_dens(theta, j, y, X, i, p, log_sigma, inv_sigma, &r)
        acc = acc + _expm1(gamma * logf)
    cdef double tail = -expm1(-0.5 * gamma * (LOG_2PI + 2.0 * log_sigma) - 1.5 * log1p(gamma))
    return acc / gamma + n * tail


def log_target(const double[:, ::1] theta, const double[::1] y, const double[:, ::1] X,
               double gamma, int num_threads=1):
    cdef Py_ssize_t N = theta.shape[0]
    out = np.empty(N)
    cdef double[::1] o = out
    cdef Py_ssize_t j
    for j in prange(N, nogil=True, num_threads=num_threads, schedule="static"):
        o[j] = _target_row(theta, j, y, X, gamma)
    return out


def mh_chain(double[:, ::1] theta, double[::1] logpot, const double[:, :, ::1] steps,
             const double[:, ::1] logu, const double[::1] y, const double[:, ::1] X,
             double gamma, double lam, const double[::1] lower, const double[::1] upper,
             int num_threads=1):
    cdef Py_ssize_t N = theta.shape[0]
    cdef Py_ssize_t d = theta.shape[1]
    cdef Py_ssize_t M = steps.shape[0]
    if d > 64:
        raise ValueError("parameter dimension above 64 is not supported")
    acc_arr = np.zeros(N, dtype=np.int64)
    cdef long long[::1] acc = acc_arr
    cdef Py_ssize_t j, m, k
    cdef double lp
    cdef bint inside
    cdef double[:, ::1] prop = np.empty((N, d))
    for j in prange(N, nogil=True, num_threads=num_threads, schedule="static"):
        for m in range(M):
            inside = True
            for k in range(d):
                prop[j, k] = theta[j, k] + steps[m, j, k]
                if not (prop[j, k] > lower[k] and prop[j, k] < upper[k]):
                    inside = False
            if not inside:
                continue
            lp = lam * _target_row(prop, j, y, X, gamma)
            if logu[m, j] < lp - logpot[j]:
                for k in range(d):
                    theta[j, k] = prop[j, k]
                logpot[j] = lp
                acc[j] += 1
    return acc_arr


def mh_trace(double[:, ::1] theta, double[::1] logpot, const double[:, :, ::1] steps,
             const double[:, ::1] logu, const double[::1] y, const double[:, ::1] X,
             double gamma, const double[::1] lower, const double[::1] upper,
             double[:, ::1] chain):
    cdef Py_ssize_t d = theta.shape[1]
    cdef Py_ssize_t M = steps.shape[0]
    cdef Py_ssize_t m, k
    cdef long long accepted = 0
    cdef double lp
    cdef bint inside
    cdef double[:, ::1] prop = np.empty((1, d))
    with nogil:
        for m in range(M):
            inside = True
            for k in range(d):
                prop[0, k] = theta[0, k] + steps[m, 0, k]
                if not (prop[0, k] > lower[k] and prop[0, k] < upper[k]):
                    inside = False
            if inside:
                lp = _target_row(prop, 0, y, X, gamma)
                if logu[m, 0] < lp - logpot[0]:
                    for k in range(d):
                        theta[0, k] = prop[0, k]
                    logpot[0] = lp
                    accepted += 1
            for k in range(d):
                chain[m, k] = theta[0, k]
    return accepted


def hscore_stats(const double[:, ::1] theta, const double[::1] weights, const double[::1] y,
                 const double[:, ::1] X, double gamma, int num_threads=1):
    cdef Py_ssize_t N = theta.shape[0]
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    dpot_arr = np.empty(N)
    cdef double[::1] dpot = dpot_arr
    out = np.zeros((4, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double sigma, log_sigma, inv_sigma, s2, logf, gl, w, r, r2, acc, log2pis2, a
    cdef double core, c1, c2, dc1, dc2, e1, e2, g1, g2, dbar, dcen
    for j in prange(N, nogil=True, num_threads=num_threads, schedule="static"):
        sigma = theta[j, p]
        log_sigma = log(sigma)
        inv_sigma = 1.0 / sigma
        acc = 0.0
        for i in range(n):
            logf = _log_dens(theta, j, y, X, i, p, log_sigma, inv_sigma, &r)
            gl = gamma * logf
            acc = acc + (gl * exp(gl) - _expm1(gl))
        log2pis2 = LOG_2PI + 2.0 * log_sigma
        a = exp(-0.5 * gamma * log2pis2)
        dpot[j] = acc / (gamma * gamma) + 0.5 * n * a * (1.0 + gamma) ** -2.5 * (
            (1.0 + gamma) * log2pis2 + 3.0)
    dbar = 0.0
    for j in range(N):
        dbar = dbar + weights[j] * dpot[j]
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        e1 = 0.0
        e2 = 0.0
        g1 = 0.0
        g2 = 0.0
        for j in range(N):
            sigma = theta[j, p]
            log_sigma = log(sigma)
            inv_sigma = 1.0 / sigma
            s2 = sigma * sigma
            logf = _log_dens(theta, j, y, X, i, p, log_sigma, inv_sigma, &r)
            w = exp(gamma * logf)
            r2 = r * r
            core = w * (gamma * r2 - s2)
            c2 = -w * r / s2
            c1 = (core + w * w * r2) / (s2 * s2)
            dc2 = c2 * logf
            dc1 = (core * logf + w * r2 + 2.0 * w * w * r2 * logf) / (s2 * s2)
            dcen = weights[j] * (dpot[j] - dbar)
            e1 = e1 + weights[j] * c1
            e2 = e2 + weights[j] * c2
            g1 = g1 + weights[j] * dc1 + dcen * c1
            g2 = g2 + weights[j] * dc2 + dcen * c2
        o[0, i] = e1
        o[1, i] = e2
        o[2, i] = g1
        o[3, i] = g2
    return out[0], out[1], out[2], out[3]
