"""Compiled coordinate-descent kernel for the decorrelation lasso (Gram form).

Minimises, over ``b`` with ``b[l] == 0``,

    S[l, l] - 2 b @ S[:, l] + b @ S @ b + mu * ||b||_1

for a symmetric PSD ``S``. ``q = S[:, l] - S @ b`` is kept up to date so a
sweep with no change costs O(p).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def cd_path(S, l, mus, b0, tol, max_sweeps):
    p = S.shape[0]
    m = mus.shape[0]
    out = np.zeros((m, p))
    sweeps = np.zeros(m, dtype=np.int64)
    converged = np.zeros(m, dtype=np.bool_)
    b = b0.copy()
    b[l] = 0.0
    q = S[:, l].copy()
    for j in range(p):
        if b[j] != 0.0:
            for k in range(p):
                q[k] -= S[j, k] * b[j]
    scale = np.sqrt(max(S[l, l], 1e-300))
    for i in range(m):
        half_mu = 0.5 * mus[i]
        it = 0
        done = False
        while it < max_sweeps:
            it += 1
            biggest = 0.0
            for j in range(p):
                if j == l:
                    continue
                sjj = S[j, j]
                if sjj <= 0.0:
                    continue
                old = b[j]
                new = _soft(q[j] + sjj * old, half_mu) / sjj
                if new != old:
                    d = new - old
                    b[j] = new
                    for k in range(p):
                        q[k] -= S[j, k] * d
                    step = abs(d) * np.sqrt(sjj)
                    if step > biggest:
                        biggest = step
            if biggest <= tol * scale:
                done = True
                break
        out[i, :] = b
        sweeps[i] = it
        converged[i] = done
    return out, sweeps, converged


@njit(cache=True)
def quad_form_sparse(S, l, b):
    """``S[l,l] - 2 b @ S[:, l] + b @ S @ b`` using only the nonzeros of ``b``."""
    nz = np.flatnonzero(b)
    val = S[l, l]
    for a in nz:
        val -= 2.0 * b[a] * S[a, l]
        for c in nz:
            val += b[a] * S[a, c] * b[c]
    return val


@njit(cache=True)
def quintic_smoothed_terms(m, coef, knots, jumps, base, t0, v0, h, out_slope):
    """``sum_i coef_i * phi_h(m_i)``; writes ``coef_i * phi_h'(m_i)`` into ``out_slope``.

    ``phi_h`` is the loss smoothed with the quintic step at bandwidth ``h``.
    Pass an empty ``out_slope`` to skip the slope.
    """
    J = knots.shape[0]
    offset = v0 - base * t0
    for j in range(J):
        if t0 > knots[j]:
            offset -= jumps[j] * (t0 - knots[j])
    want = out_slope.shape[0] > 0
    total = 0.0
    inv_h = 1.0 / h
    for i in range(m.shape[0]):
        mi = m[i]
        val = offset + base * mi
        slope = base
        for j in range(J):
            r = mi - knots[j]
            u = r * inv_h
            if u >= 1.0:
                val += jumps[j] * r
                slope += jumps[j]
            elif u > -1.0:
                u2 = u * u
                prim = 0.5 * (u + 1.0) + 0.9375 * (u2 * (0.5 + u2 * (-1.0 / 6.0 + u2 / 30.0)) - 11.0 / 30.0)
                val += jumps[j] * (max(r, 0.0) + h * (prim - max(u, 0.0)))
                if want:
                    slope += jumps[j] * (0.5 + u * (0.9375 + u2 * (-0.625 + u2 * 0.1875)))
        total += coef[i] * val
        if want:
            out_slope[i] = coef[i] * slope
    return total
