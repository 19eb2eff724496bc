# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Fused Euler-Maruyama rollout kernels for the closed parameter families.

Each kernel consumes pre-scaled Brownian increments and accumulates, per
rollout, the running+terminal cost ``eta`` and the noise functional
``what`` over the first ``r_steps`` increments.  Loops run step-major so
the (K, B) increment layout streams through cache.  The floating-point
expression order matches pirhc.engine.numpy_backend element for element
(the extension is compiled with FMA contraction disabled), so either
backend can be swapped in without changing results.
"""

from libc.math cimport isfinite

DEF MAXDIM = 16


def rollout_scalar(double[::1] x, double[:, ::1] dw, double dt, int r_steps,
                   double a_lin, double a_cub, double g, double hinv_g,
                   double q, double q_terminal,
                   double[::1] eta, double[::1] what,
                   unsigned char[::1] failed):
    """1-D family: drift a_lin*x + a_cub*x**3, constant gain/noise,
    quadratic running/terminal costs."""
    cdef Py_ssize_t n_steps = dw.shape[0]
    cdef Py_ssize_t B = x.shape[0]
    cdef double cq = 0.5 * dt * q
    cdef double cqt = 0.5 * q_terminal
    cdef Py_ssize_t i, k
    cdef double xi, fx
    with nogil:
        for k in range(n_steps):
            if k < r_steps:
                for i in range(B):
                    xi = x[i]
                    eta[i] = eta[i] + cq * (xi * xi)
                    what[i] = what[i] + hinv_g * dw[k, i]
                    fx = a_lin * xi + a_cub * ((xi * xi) * xi)
                    x[i] = xi + fx * dt + g * dw[k, i]
            else:
                for i in range(B):
                    xi = x[i]
                    eta[i] = eta[i] + cq * (xi * xi)
                    fx = a_lin * xi + a_cub * ((xi * xi) * xi)
                    x[i] = xi + fx * dt + g * dw[k, i]
        for i in range(B):
            xi = x[i]
            eta[i] = eta[i] + cqt * (xi * xi)
            failed[i] = not (isfinite(eta[i]) and isfinite(what[i])
                             and isfinite(xi))


def rollout_linear(double[:, ::1] x, double[:, :, ::1] dw, double dt,
                   int r_steps,
                   const double[:, ::1] A, const double[:, ::1] S,
                   const double[:, ::1] HinvG,
                   const double[:, ::1] Q, const double[:, ::1] Q_T,
                   double[::1] eta, double[:, ::1] what,
                   unsigned char[::1] failed):
    """Linear family: drift A x, constant diffusion S and gain left-inverse
    product HinvG, quadratic cost matrices Q / Q_T."""
    cdef Py_ssize_t n_steps = dw.shape[0]
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t d = S.shape[1]
    cdef Py_ssize_t m = HinvG.shape[0]
    cdef double half_dt = 0.5 * dt
    cdef Py_ssize_t i, j, k, l, p
    cdef double acc, s
    cdef double fx[MAXDIM]
    cdef double gdw[MAXDIM]
    if n > MAXDIM or d > MAXDIM or m > MAXDIM:
        raise ValueError("model dimensions exceed the compiled kernel limit")
    with nogil:
        for k in range(n_steps):
            for i in range(B):
                s = 0.0
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += Q[j, l] * x[i, l]
                    s += x[i, j] * acc
                eta[i] = eta[i] + half_dt * s
                if k < r_steps:
                    for p in range(m):
                        acc = 0.0
                        for j in range(d):
                            acc += HinvG[p, j] * dw[k, i, j]
                        what[i, p] = what[i, p] + acc
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += A[j, l] * x[i, l]
                    fx[j] = acc
                    acc = 0.0
                    for l in range(d):
                        acc += S[j, l] * dw[k, i, l]
                    gdw[j] = acc
                for j in range(n):
                    x[i, j] = x[i, j] + fx[j] * dt + gdw[j]
        for i in range(B):
            s = 0.0
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += Q_T[j, l] * x[i, l]
                s += x[i, j] * acc
            eta[i] = eta[i] + 0.5 * s
            failed[i] = not isfinite(eta[i])
            for j in range(n):
                if not isfinite(x[i, j]):
                    failed[i] = True
            for p in range(m):
                if not isfinite(what[i, p]):
                    failed[i] = True
