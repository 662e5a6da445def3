"""Pure-numpy Newton-Raphson kernel (fallback for the compiled extension).

Operates on a dense complex admittance matrix in per-unit with polar voltage
unknowns. The compiled kernel in ``_nr_cy`` implements the same contract; both
must stay interchangeable (same argument order, same convergence rule).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def newton_polar(ybus, p_set, q_set, vm, va, pv, pq, tol_pu, max_iter):
    """Solve the polar power-flow equations in place.

    Args:
        ybus: dense complex (n, n) admittance matrix, per-unit.
        p_set, q_set: scheduled net injections per node, per-unit.
        vm, va: voltage magnitude (pu) and angle (rad) start vectors; modified
            in place, slack/PV entries hold their setpoints.
        pv, pq: int64 index arrays of PV and PQ nodes (disjoint, no slack).
        tol_pu: infinity-norm mismatch tolerance, per-unit.
        max_iter: Newton iteration cap.

    Returns:
        (converged, iterations, max_mismatch_pu)
    """
    pv = np.asarray(pv, dtype=np.int64)
    pq = np.asarray(pq, dtype=np.int64)
    pvpq = np.concatenate([pv, pq])
    npvpq = pvpq.size
    npq = pq.size

    def mismatch():
        v = vm * np.exp(1j * va)
        mis = v * np.conj(ybus @ v) - (p_set + 1j * q_set)
        return np.concatenate([mis.real[pvpq], mis.imag[pq]]), v

    f, v = mismatch()
    max_mis = float(np.max(np.abs(f))) if f.size else 0.0
    if max_mis < tol_pu:
        return True, 0, max_mis

    iterations = 0
    while iterations < max_iter:
        iterations += 1
        ibus = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm

        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])

        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return False, iterations, max_mis

        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]

        f, v = mismatch()
        max_mis = float(np.max(np.abs(f)))
        if not np.isfinite(max_mis):
            return False, iterations, max_mis
        if max_mis < tol_pu:
            return True, iterations, max_mis

    return False, iterations, max_mis
