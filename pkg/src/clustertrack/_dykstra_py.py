"""Pure-Python Dykstra kernel.

Reference implementation of the compiled kernel in ``_dykstra.pyx``; both
expose the same signature and are selected in :mod:`clustertrack.kernels`.

The intersection is a single box plus affine rows stored in CSR form.  The
box carries a vector correction term, every affine row a scalar multiplier
``lam[r]`` (its correction is ``lam[r] * a_r``).  Starting from corrections
``(box_corr, lam)`` the iterate is ``x = u - box_corr - sum_r lam[r] a_r``;
all-zero corrections give classic Dykstra, non-zero ones a warm start of the
equivalent dual block-coordinate ascent.
"""

import numpy as np


def dykstra(u, lower, upper, indptr, indices, data, rhs, is_eq, inv_sq,
            lam, box_corr, tol, max_sweeps):
    """Project ``u`` onto box ∩ rows; corrections are updated in place.

    Returns ``(x, sweeps, change)`` where ``change`` is the largest max-norm
    movement over the last sweep of the iterate or of any correction term
    (the iterate alone can return to the same point while corrections still
    drift).  ``sweeps == max_sweeps`` with
    ``change >= tol`` signals non-convergence.
    """
    x = np.array(u, dtype=float)
    x -= box_corr
    n_rows = rhs.shape[0]
    for r in range(n_rows):
        if lam[r] != 0.0:
            s, e = indptr[r], indptr[r + 1]
            x[indices[s:e]] -= lam[r] * data[s:e]

    change = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        start = x.copy()
        y = x + box_corr
        np.clip(y, lower, upper, out=x)
        moved = float(np.max(np.abs(box_corr - (y - x)), initial=0.0))
        box_corr[:] = y - x
        for r in range(n_rows):
            s, e = indptr[r], indptr[r + 1]
            idx = indices[s:e]
            a = data[s:e]
            old = lam[r]
            # a^T y with y = x + old * a
            t = (a @ x[idx] - rhs[r]) * inv_sq[r] + old
            new = t if is_eq[r] or t > 0.0 else 0.0
            if new != old:
                x[idx] += (old - new) * a
                lam[r] = new
                moved = max(moved, abs(old - new) * float(np.max(np.abs(a))))
        sweeps += 1
        change = max(moved, float(np.max(np.abs(x - start), initial=0.0)))
        if change < tol:
            break
    return x, sweeps, change
