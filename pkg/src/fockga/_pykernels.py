"""Pure NumPy/SciPy versions of the compiled kernels in ``_ckernels``.

Signatures and results match the compiled module; they are used when the
extension is not built or when ``FOCKGA_PURE_PYTHON`` is set.
"""
import numpy as np
import scipy.sparse as sp


def taylor_expm_csr(indptr, indices, data, block, h, steps, order, tol):
    n = block.shape[0]
    a = sp.csr_matrix((np.asarray(data), np.asarray(indices), np.asarray(indptr)), shape=(n, n))
    f = np.array(block, dtype=np.complex128, copy=True)
    b = f.copy()
    matvecs = 0
    residual = 0.0
    for _ in range(steps):
        c1 = np.abs(b).max(initial=0.0)
        last = 0.0
        for j in range(1, order + 1):
            b = (h / j) * (a @ b)
            matvecs += 1
            f += b
            c2 = np.abs(b).max(initial=0.0)
            fnorm = np.abs(f).max(initial=0.0)
            last = c2 / fnorm if fnorm > 0 else 0.0
            if c1 + c2 <= tol * fnorm:
                break
            c1 = c2
        residual = max(residual, last)
        b = f.copy()
    return f, matvecs, float(residual)


def posterior_variances(logp_t, idx, logw, theta, chunk=4096):
    nseq = idx.shape[0]
    out = np.empty(nseq)
    for start in range(0, nseq, chunk):
        sel = idx[start:start + chunk]
        ll = np.broadcast_to(logw, (len(sel), len(logw))).copy()
        for j in range(sel.shape[1]):
            ll += logp_t[sel[:, j]]
        ll -= ll.max(axis=1, keepdims=True)
        e = np.exp(ll)
        z = e.sum(axis=1)
        m1 = (e @ theta) / z
        m2 = (e @ (theta * theta)) / z
        out[start:start + chunk] = m2 - m1 * m1
    return out
