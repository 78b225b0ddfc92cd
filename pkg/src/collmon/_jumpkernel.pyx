# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-trajectory jump kernel.

Mirrors :mod:`collmon._jumpkernel_py` step for step.  The no-jump evolution
is ``psi(tau) = V exp(-i lam tau) Vinv phi`` with ``phi`` the normalized state
after the most recent jump.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport cos, exp, sin, sqrt
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t

cdef enum:
    MAX_BISECT = 200


cdef inline void _evolve(const double complex[:, ::1] V, const double complex[::1] lam,
                         const double complex* c, double tau, double complex* out,
                         Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double complex z, phase
    cdef double a, b
    for i in range(n):
        out[i] = 0
    for j in range(n):
        a = lam[j].real
        b = lam[j].imag
        # exp(-i lam tau) = exp(b tau) (cos(a tau) - i sin(a tau))
        phase = exp(b * tau) * (cos(a * tau) - 1j * sin(a * tau))
        z = phase * c[j]
        for i in range(n):
            out[i] = out[i] + V[i, j] * z


cdef inline double _norm2(const double complex* x, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += x[i].real * x[i].real + x[i].imag * x[i].imag
    return s


cdef inline void _coeffs(const double complex[:, ::1] Vinv, const double complex* phi,
                         double complex* c, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(n):
        c[i] = 0
        for j in range(n):
            c[i] = c[i] + Vinv[i, j] * phi[j]


def run_trajectory(const double complex[:, ::1] V, const double complex[::1] lam,
                   const double complex[:, ::1] Vinv, const double complex[:, :, ::1] ops,
                   const double complex[::1] psi0, const double[::1] times,
                   object bit_generator, double complex[:, ::1] out, double norm_tol=1e-10):
    """Fill ``out[k]`` with the normalized state at ``times[k]``; return the jump count.

    Returns ``-1`` if a jump is triggered while every jump rate vanishes.
    """
    cdef Py_ssize_t n = psi0.shape[0]
    cdef Py_ssize_t nops = ops.shape[0]
    cdef Py_ssize_t nt = times.shape[0]
    capsule = bit_generator.capsule
    cdef bitgen_t* rng = <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")

    cdef double complex* phi = <double complex*> malloc(n * sizeof(double complex))
    cdef double complex* c = <double complex*> malloc(n * sizeof(double complex))
    cdef double complex* psi = <double complex*> malloc(n * sizeof(double complex))
    cdef double complex* lpsi = <double complex*> malloc(n * sizeof(double complex))
    cdef double* w = <double*> malloc((nops + 1) * sizeof(double))
    if phi == NULL or c == NULL or psi == NULL or lpsi == NULL or w == NULL:
        free(phi); free(c); free(psi); free(lpsi); free(w)
        raise MemoryError()

    cdef Py_ssize_t i, j, k, q, it
    cdef double t0, t_lo, t_hi, t_mid, r, nrm, n_lo, n_hi, n_mid, total, u, acc
    cdef int jumps = 0
    cdef bint failed = False
    cdef double complex z

    with nogil:
        for i in range(n):
            phi[i] = psi0[i]
        _coeffs(Vinv, phi, c, n)
        t0 = times[0]
        t_lo = t0
        r = rng.next_double(rng.state)
        k = 0
        while k < nt:
            _evolve(V, lam, c, times[k] - t0, psi, n)
            n_hi = _norm2(psi, n)
            if n_hi > r:
                nrm = sqrt(n_hi)
                for i in range(n):
                    out[k, i] = psi[i] / nrm
                t_lo = times[k]
                k += 1
                continue
            # bisect the crossing in (t_lo, times[k]]; norm^2 decreases monotonically
            t_hi = times[k]
            _evolve(V, lam, c, t_lo - t0, psi, n)
            n_lo = _norm2(psi, n)
            it = 0
            while n_lo - n_hi > norm_tol and it < MAX_BISECT:
                t_mid = 0.5 * (t_lo + t_hi)
                if t_mid <= t_lo or t_mid >= t_hi:
                    break
                _evolve(V, lam, c, t_mid - t0, psi, n)
                n_mid = _norm2(psi, n)
                if n_mid > r:
                    t_lo = t_mid
                    n_lo = n_mid
                else:
                    t_hi = t_mid
                    n_hi = n_mid
                it += 1
            _evolve(V, lam, c, t_hi - t0, psi, n)
            total = 0.0
            for q in range(nops):
                for i in range(n):
                    z = 0
                    for j in range(n):
                        z = z + ops[q, i, j] * psi[j]
                    lpsi[i] = z
                w[q] = _norm2(lpsi, n)
                total += w[q]
            if not total > 0.0:
                failed = True
                break
            u = rng.next_double(rng.state) * total
            acc = 0.0
            q = nops - 1
            for j in range(nops):
                acc += w[j]
                if u < acc:
                    q = j
                    break
            for i in range(n):
                z = 0
                for j in range(n):
                    z = z + ops[q, i, j] * psi[j]
                lpsi[i] = z
            nrm = sqrt(w[q])
            for i in range(n):
                phi[i] = lpsi[i] / nrm
            _coeffs(Vinv, phi, c, n)
            t0 = t_hi
            t_lo = t_hi
            jumps += 1
            r = rng.next_double(rng.state)

    free(phi); free(c); free(psi); free(lpsi); free(w)
    return -1 if failed else jumps
