# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Newton-Raphson kernel: polar mismatch, dense Jacobian, LAPACK solve.

Mirrors the contract of ``_nr_py.newton_polar``; the two must stay
interchangeable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, fabs, isfinite
from scipy.linalg.cython_lapack cimport dgesv

cnp.import_array()

BACKEND = "cython"


cdef double _mismatch(double complex[:, ::1] y, double[::1] ps, double[::1] qs,
                      double[::1] vm, double[::1] va, long[::1] pvpq, long[::1] pq,
                      double[::1] p_calc, double[::1] q_calc, double[::1] f,
                      int n, int npv, int npq) noexcept:
    """P/Q at every node from the dense Y; fills f and returns the inf norm."""
    cdef int i, j
    cdef double pi, qi, theta, c, s, gij, bij, vmi
    cdef double max_mis = 0.0
    cdef int npvpq = npv + npq
    for i in range(n):
        pi = 0.0
        qi = 0.0
        vmi = vm[i]
        for j in range(n):
            gij = y[i, j].real
            bij = y[i, j].imag
            if gij == 0.0 and bij == 0.0:
                continue
            theta = va[i] - va[j]
            c = cos(theta)
            s = sin(theta)
            pi += vm[j] * (gij * c + bij * s)
            qi += vm[j] * (gij * s - bij * c)
        p_calc[i] = vmi * pi
        q_calc[i] = vmi * qi
    for i in range(npvpq):
        f[i] = p_calc[pvpq[i]] - ps[pvpq[i]]
        if fabs(f[i]) > max_mis:
            max_mis = fabs(f[i])
    for i in range(npq):
        f[npvpq + i] = q_calc[pq[i]] - qs[pq[i]]
        if fabs(f[npvpq + i]) > max_mis:
            max_mis = fabs(f[npvpq + i])
    return max_mis


cdef void _jacobian(double complex[:, ::1] y, double[::1] vm, double[::1] va,
                    double[::1] p_calc, double[::1] q_calc, long[::1] pvpq, long[::1] pq,
                    double[::1] jac, int n, int npv, int npq) noexcept:
    """Dense polar Jacobian, column-major for dgesv.

    Rows: P mismatch at pvpq, then Q mismatch at pq.
    Columns: d/dVa at pvpq, then d/dVm at pq.
    """
    cdef int npvpq = npv + npq
    cdef int dim = npvpq + npq
    cdef int r, c, bi, bj
    cdef double gij, bij, theta, cs, sn, vmi, vmj

    for c in range(dim):
        if c < npvpq:
            bj = <int> pvpq[c]
        else:
            bj = <int> pq[c - npvpq]
        for r in range(dim):
            if r < npvpq:
                bi = <int> pvpq[r]
            else:
                bi = <int> pq[r - npvpq]
            gij = y[bi, bj].real
            bij = y[bi, bj].imag
            vmi = vm[bi]
            vmj = vm[bj]
            if c < npvpq:
                if bi == bj:
                    if r < npvpq:
                        jac[c * dim + r] = -q_calc[bi] - bij * vmi * vmi
                    else:
                        jac[c * dim + r] = p_calc[bi] - gij * vmi * vmi
                else:
                    theta = va[bi] - va[bj]
                    cs = cos(theta)
                    sn = sin(theta)
                    if r < npvpq:
                        jac[c * dim + r] = vmi * vmj * (gij * sn - bij * cs)
                    else:
                        jac[c * dim + r] = -vmi * vmj * (gij * cs + bij * sn)
            else:
                if bi == bj:
                    if r < npvpq:
                        jac[c * dim + r] = p_calc[bi] / vmi + gij * vmi
                    else:
                        jac[c * dim + r] = q_calc[bi] / vmi - bij * vmi
                else:
                    theta = va[bi] - va[bj]
                    cs = cos(theta)
                    sn = sin(theta)
                    if r < npvpq:
                        jac[c * dim + r] = vmi * (gij * cs + bij * sn)
                    else:
                        jac[c * dim + r] = vmi * (gij * sn - bij * cs)


def newton_polar(ybus, p_set, q_set, vm, va, pv, pq, double tol_pu, int max_iter):
    """Solve the polar power-flow equations in place.

    Same signature and semantics as the numpy fallback: returns
    (converged, iterations, max_mismatch_pu) and updates vm/va in place.
    """
    cdef double complex[:, ::1] y = np.ascontiguousarray(ybus, dtype=np.complex128)
    cdef double[::1] ps = np.ascontiguousarray(p_set, dtype=np.float64)
    cdef double[::1] qs = np.ascontiguousarray(q_set, dtype=np.float64)
    cdef double[::1] vm_v = vm
    cdef double[::1] va_v = va
    cdef long[::1] pv_v = np.ascontiguousarray(pv, dtype=np.int64)
    cdef long[::1] pq_v = np.ascontiguousarray(pq, dtype=np.int64)

    cdef int n = y.shape[0]
    cdef int npv = pv_v.shape[0]
    cdef int npq = pq_v.shape[0]
    cdef int npvpq = npv + npq
    cdef int dim = npvpq + npq
    cdef int i

    cdef cnp.ndarray[long, ndim=1] pvpq_arr = np.empty(npvpq, dtype=np.int64)
    cdef long[::1] pvpq = pvpq_arr
    for i in range(npv):
        pvpq[i] = pv_v[i]
    for i in range(npq):
        pvpq[npv + i] = pq_v[i]

    cdef cnp.ndarray[double, ndim=1] p_calc_a = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] q_calc_a = np.zeros(n, dtype=np.float64)
    cdef double[::1] p_calc = p_calc_a
    cdef double[::1] q_calc = q_calc_a
    cdef cnp.ndarray[double, ndim=1] f_a = np.zeros(max(dim, 1), dtype=np.float64)
    cdef double[::1] f = f_a
    cdef cnp.ndarray[double, ndim=1] jac_a = np.zeros(max(dim * dim, 1), dtype=np.float64)
    cdef double[::1] jac = jac_a
    cdef cnp.ndarray[int, ndim=1] ipiv_a = np.zeros(max(dim, 1), dtype=np.intc)
    cdef int[::1] ipiv = ipiv_a

    cdef double max_mis
    cdef int it = 0
    cdef int info = 0, nrhs = 1, dd = dim

    max_mis = _mismatch(y, ps, qs, vm_v, va_v, pvpq, pq_v, p_calc, q_calc, f, n, npv, npq)
    if max_mis < tol_pu or dim == 0:
        return True, 0, max_mis

    while it < max_iter:
        it += 1
        _jacobian(y, vm_v, va_v, p_calc, q_calc, pvpq, pq_v, jac, n, npv, npq)
        for i in range(dim):
            f[i] = -f[i]
        dgesv(&dd, &nrhs, &jac[0], &dd, &ipiv[0], &f[0], &dd, &info)
        if info != 0:
            return False, it, max_mis
        for i in range(npvpq):
            va_v[pvpq[i]] += f[i]
        for i in range(npq):
            vm_v[pq_v[i]] += f[npvpq + i]
        max_mis = _mismatch(y, ps, qs, vm_v, va_v, pvpq, pq_v, p_calc, q_calc, f, n, npv, npq)
        if not isfinite(max_mis):
            return False, it, max_mis
        if max_mis < tol_pu:
            return True, it, max_mis

    return False, it, max_mis
