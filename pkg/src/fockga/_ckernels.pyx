# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: truncated-Taylor exponential action and Monte Carlo posterior moments."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

ctypedef double complex cplx

cnp.import_array()


cdef double _max_abs(const double[:, ::1] x) noexcept nogil:
    """Largest modulus in an (n, 2k) array of interleaved real/imag parts."""
    cdef Py_ssize_t i, j
    cdef double best = 0.0, v
    for i in range(x.shape[0]):
        for j in range(0, x.shape[1], 2):
            v = x[i, j] * x[i, j] + x[i, j + 1] * x[i, j + 1]
            if v > best:
                best = v
    return sqrt(best)


cdef void _csr_times(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                     const double[:, ::1] b, double[:, ::1] out, double cr, double ci) noexcept nogil:
    # out = (cr + i ci) * A @ b with complex values stored as interleaved doubles;
    # explicit real arithmetic avoids the slow NaN-aware C99 complex product
    cdef Py_ssize_t i, c, p, r
    cdef Py_ssize_t w = out.shape[1]
    cdef double dr, di, vr, vi, br, bi
    for i in range(out.shape[0]):
        for c in range(w):
            out[i, c] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            dr = data[2 * p]
            di = data[2 * p + 1]
            vr = cr * dr - ci * di
            vi = cr * di + ci * dr
            r = indices[p]
            for c in range(0, w, 2):
                br = b[r, c]
                bi = b[r, c + 1]
                out[i, c] += vr * br - vi * bi
                out[i, c + 1] += vr * bi + vi * br


def taylor_expm_csr(const int[::1] indptr, const int[::1] indices, const cplx[::1] data,
                    const cplx[:, ::1] block, cplx h, int steps, int order, double tol):
    """Apply exp(steps*h*A) to the columns of ``block`` by ``steps`` Taylor stages.

    Returns the result, the number of sparse products and the largest
    relative size of the last retained term (a residual estimate).
    """
    cdef Py_ssize_t n = block.shape[0], k = block.shape[1]
    cdef Py_ssize_t i, c, w = 2 * k
    cdef int s, j
    cdef long matvecs = 0
    cdef double c1, c2, fnorm, residual = 0.0, last, v, hr = h.real, hi = h.imag
    data_arr = np.asarray(data).view(np.float64)
    cdef const double[::1] d = data_arr
    f_arr = np.array(block, dtype=np.complex128, copy=True)
    b_arr = np.array(block, dtype=np.complex128, copy=True)
    z_arr = np.empty((n, k), dtype=np.complex128)
    cdef double[:, ::1] f = f_arr.view(np.float64)
    cdef double[:, ::1] b = b_arr.view(np.float64)
    cdef double[:, ::1] z = z_arr.view(np.float64)
    cdef double[:, ::1] tmp
    with nogil:
        for s in range(steps):
            c1 = _max_abs(b)
            last = 0.0
            for j in range(1, order + 1):
                _csr_times(indptr, indices, d, b, z, hr / j, hi / j)
                matvecs += 1
                c2 = 0.0
                fnorm = 0.0
                for i in range(n):
                    for c in range(0, w, 2):
                        f[i, c] += z[i, c]
                        f[i, c + 1] += z[i, c + 1]
                        v = z[i, c] * z[i, c] + z[i, c + 1] * z[i, c + 1]
                        if v > c2:
                            c2 = v
                        v = f[i, c] * f[i, c] + f[i, c + 1] * f[i, c + 1]
                        if v > fnorm:
                            fnorm = v
                c2 = sqrt(c2)
                fnorm = sqrt(fnorm)
                tmp = b
                b = z
                z = tmp
                last = c2 / fnorm if fnorm > 0 else 0.0
                if c1 + c2 <= tol * fnorm:
                    break
                c1 = c2
            if last > residual:
                residual = last
            for i in range(n):
                for c in range(w):
                    b[i, c] = f[i, c]
    return f_arr, int(matvecs), float(residual)


def posterior_variances(const double[:, ::1] logp_t, const long[:, ::1] idx, const double[::1] logw,
                        const double[::1] theta):
    """Posterior variance of theta for each sampled outcome sequence.

    ``logp_t`` has one row per outcome holding log p(outcome | theta_g) over
    the grid, ``idx`` one row of outcome indices per sequence and ``logw`` the
    log of the prior quadrature weights.
    """
    cdef Py_ssize_t nseq = idx.shape[0], mu = idx.shape[1], g_count = theta.shape[0]
    cdef Py_ssize_t n, j, g
    cdef double mx, z, m1, m2, e
    out_arr = np.empty(nseq, dtype=np.float64)
    ll_arr = np.empty(g_count, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] ll = ll_arr
    with nogil:
        for n in range(nseq):
            for g in range(g_count):
                ll[g] = logw[g]
            for j in range(mu):
                for g in range(g_count):
                    ll[g] += logp_t[idx[n, j], g]
            mx = ll[0]
            for g in range(1, g_count):
                if ll[g] > mx:
                    mx = ll[g]
            z = 0.0
            m1 = 0.0
            m2 = 0.0
            for g in range(g_count):
                e = exp(ll[g] - mx)
                z += e
                m1 += e * theta[g]
                m2 += e * theta[g] * theta[g]
            m1 /= z
            out[n] = m2 / z - m1 * m1
    return out_arr
