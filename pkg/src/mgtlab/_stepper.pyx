# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implicit-midpoint kernels.

Same block-eliminated recurrence as `_stepper_py` (see that module for the
algebra); here the whole time loop runs in C with direct BLAS/LAPACK calls.
G1/G2 arrive C-contiguous and are fed to dgemv with trans='T' (a C-order
matrix is its own transpose in Fortran storage); K arrives Fortran-ordered
for dgetrf/dgetrs.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemv
from scipy.linalg.cython_lapack cimport dgetrf, dgetrs

from .errors import BlowUp, SingularStepMatrix

cnp.import_array()

cdef double BLOWUP_LIMIT = 1e12


cdef void _build_rhs(int n, double gamma,
                     double* u_m, double* ut_m, double* utt_m, double* fmid_m,
                     double* G1, double* G2,
                     double* w, double* rhs) noexcept nogil:
    cdef int i
    cdef int inc = 1
    cdef double one = 1.0, neg = -1.0
    for i in range(n):
        w[i] = u_m[i] + gamma * ut_m[i]
        rhs[i] = utt_m[i] + gamma * fmid_m[i]
    # rhs -= G1 @ w ; rhs -= G2 @ ut_m   (trans='T' on the C-order buffers)
    dgemv("T", &n, &n, &neg, G1, &n, w, &inc, &one, rhs, &inc)
    dgemv("T", &n, &n, &neg, G2, &n, ut_m, &inc, &one, rhs, &inc)


cdef double _update(int n, double gamma, double* z3, double* w,
                    double* u_m, double* ut_m, double* utt_m,
                    double* u_n, double* ut_n, double* utt_n) noexcept nogil:
    cdef int i
    cdef double g2 = gamma * gamma
    cdef double amax = 0.0, a
    for i in range(n):
        u_n[i] = 2.0 * (w[i] + g2 * z3[i]) - u_m[i]
        ut_n[i] = 2.0 * (ut_m[i] + gamma * z3[i]) - ut_m[i]
        utt_n[i] = 2.0 * z3[i] - utt_m[i]
        a = u_n[i] if u_n[i] >= 0.0 else -u_n[i]
        if a > amax:
            amax = a
    return amax


def midpoint_loop(K, G1, G2, double gamma, fmid):
    """Static-matrix loop; mirrors `_stepper_py.midpoint_loop`."""
    cdef cnp.ndarray[double, ndim=2, mode="fortran"] KF = np.asfortranarray(K, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] G1c = np.ascontiguousarray(G1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] G2c = np.ascontiguousarray(G2, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] f = np.ascontiguousarray(fmid, dtype=np.float64)
    cdef int n = KF.shape[0]
    cdef int M = f.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] u = np.zeros((M + 1, n))
    cdef cnp.ndarray[double, ndim=2, mode="c"] ut = np.zeros((M + 1, n))
    cdef cnp.ndarray[double, ndim=2, mode="c"] utt = np.zeros((M + 1, n))
    cdef cnp.ndarray[int, ndim=1] ipiv = np.zeros(n, dtype=np.intc)
    cdef cnp.ndarray[double, ndim=1] w = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] rhs = np.zeros(n)
    cdef int info = 0, m, one = 1
    cdef int blow_step = -1
    cdef double amax = 0.0

    dgetrf(&n, &n, &KF[0, 0], &n, &ipiv[0], &info)
    if info != 0:
        raise SingularStepMatrix(f"dgetrf returned info={info}")

    with nogil:
        for m in range(M):
            _build_rhs(n, gamma, &u[m, 0], &ut[m, 0], &utt[m, 0], &f[m, 0],
                       &G1c[0, 0], &G2c[0, 0], &w[0], &rhs[0])
            dgetrs("N", &n, &one, &KF[0, 0], &n, &ipiv[0], &rhs[0], &n, &info)
            if info != 0:
                break
            amax = _update(n, gamma, &rhs[0], &w[0],
                           &u[m, 0], &ut[m, 0], &utt[m, 0],
                           &u[m + 1, 0], &ut[m + 1, 0], &utt[m + 1, 0])
            if amax >= BLOWUP_LIMIT or amax != amax:
                blow_step = m + 1
                break
    if info != 0:
        raise SingularStepMatrix(f"dgetrs returned info={info}")
    if blow_step >= 0:
        raise BlowUp(f"|u| exceeded {BLOWUP_LIMIT:g} at step {blow_step}")
    return u, ut, utt


def midpoint_loop_tq(Kbase, G1base, G2, double gamma, fmid, qmid):
    """Time-dependent-potential loop; refactors the step matrix every step."""
    cdef cnp.ndarray[double, ndim=2, mode="fortran"] KF = np.asfortranarray(Kbase, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] G1c = np.ascontiguousarray(G1base, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] G2c = np.ascontiguousarray(G2, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] f = np.ascontiguousarray(fmid, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] q = np.ascontiguousarray(qmid, dtype=np.float64)
    cdef int n = KF.shape[0]
    cdef int M = f.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] u = np.zeros((M + 1, n))
    cdef cnp.ndarray[double, ndim=2, mode="c"] ut = np.zeros((M + 1, n))
    cdef cnp.ndarray[double, ndim=2, mode="c"] utt = np.zeros((M + 1, n))
    cdef cnp.ndarray[double, ndim=2, mode="fortran"] Kwork = np.zeros((n, n), order="F")
    cdef cnp.ndarray[int, ndim=1] ipiv = np.zeros(n, dtype=np.intc)
    cdef cnp.ndarray[double, ndim=1] w = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] rhs = np.zeros(n)
    cdef int info = 0, m, i, j, one = 1
    cdef int blow_step = -1, singular_step = -1
    cdef double g3 = gamma * gamma * gamma
    cdef double amax = 0.0

    with nogil:
        for m in range(M):
            # Kwork = Kbase + g3 diag(qmid[m]) (both Fortran order)
            for j in range(n):
                for i in range(n):
                    Kwork[i, j] = KF[i, j]
                Kwork[j, j] += g3 * q[m, j]
            dgetrf(&n, &n, &Kwork[0, 0], &n, &ipiv[0], &info)
            if info != 0:
                singular_step = m
                break
            _build_rhs(n, gamma, &u[m, 0], &ut[m, 0], &utt[m, 0], &f[m, 0],
                       &G1c[0, 0], &G2c[0, 0], &w[0], &rhs[0])
            # rhs -= gamma * qmid[m] * w  (time-dependent part of G1)
            for i in range(n):
                rhs[i] -= gamma * q[m, i] * w[i]
            dgetrs("N", &n, &one, &Kwork[0, 0], &n, &ipiv[0], &rhs[0], &n, &info)
            if info != 0:
                singular_step = m
                break
            amax = _update(n, gamma, &rhs[0], &w[0],
                           &u[m, 0], &ut[m, 0], &utt[m, 0],
                           &u[m + 1, 0], &ut[m + 1, 0], &utt[m + 1, 0])
            if amax >= BLOWUP_LIMIT or amax != amax:
                blow_step = m + 1
                break
    if singular_step >= 0:
        raise SingularStepMatrix(
            f"step matrix factorization failed at step {singular_step} (info={info})"
        )
    if blow_step >= 0:
        raise BlowUp(f"|u| exceeded {BLOWUP_LIMIT:g} at step {blow_step}")
    return u, ut, utt


from ._stepper_py import rk4_loop  # noqa: E402  (shared; not a hot path)
