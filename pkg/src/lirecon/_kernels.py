"""Compiled inner loops for the two-sub-cell circuit.

Everything here works on flat float arrays so numba can compile it; the
typed wrappers live in ``ecm`` and ``simulate``.

Parameter vector layout: ``p = [r1, r2, re, qn, qp]`` (ohm, ohm, ohm, Ah, Ah),
with ``qn``/``qp`` the per-sub-cell electrode capacities.
State layout: ``y = [z1n, z1p, z2n, z2p]``.
"""
import math

import numpy as np
from numba import njit

MODE_CURRENT = 0
MODE_VOLTAGE = 1

STATUS_DURATION = 0
STATUS_EVENT = 1
STATUS_CAP = 2
STATUS_NONFINITE = 3
STATUS_STEP_UNDERFLOW = 4
STATUS_ROWS_FULL = 5

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0


@njit(cache=True)
def network(un1, up1, un2, up2, r1, r2, re, mode, value):
    """Nodal solve of the bridged two-sub-cell network.

    Returns ``(i1, i2, j1, j2, ie, v, phi1, phi2, current)``. ``ie`` is the
    lithium-equivalent current into sub-cell 1 (``i1 - j1``).
    """
    a1 = 1.0 / r1
    a2 = 1.0 / r2
    g = 1.0 / re
    s1 = up1 + un1
    s2 = up2 + un2
    d11 = 2.0 * a1 + g
    d22 = 2.0 * a2 + g
    if mode == MODE_VOLTAGE:
        v = value
        b1 = a1 * (v - s1)
        b2 = a2 * (v - s2)
        det = d11 * d22 - g * g
        phi1 = (b1 * d22 + g * b2) / det
        phi2 = (d11 * b2 + g * b1) / det
    else:
        # unknowns phi1, phi2, v; eliminate v via the terminal-current row
        # rows: d11 phi1 - g phi2 - a1 v = -a1 s1
        #       -g phi1 + d22 phi2 - a2 v = -a2 s2
        #       a1 phi1 + a2 phi2 - (a1 + a2) v = I - a1 up1 - a2 up2
        at = a1 + a2
        rhs3 = value - a1 * up1 - a2 * up2
        # v = (a1 phi1 + a2 phi2 - rhs3) / at
        m11 = d11 - a1 * a1 / at
        m12 = -g - a1 * a2 / at
        m21 = -g - a2 * a1 / at
        m22 = d22 - a2 * a2 / at
        c1 = -a1 * s1 - a1 * rhs3 / at
        c2 = -a2 * s2 - a2 * rhs3 / at
        det = m11 * m22 - m12 * m21
        phi1 = (c1 * m22 - m12 * c2) / det
        phi2 = (m11 * c2 - m21 * c1) / det
        v = (a1 * phi1 + a2 * phi2 - rhs3) / at
    j1 = a1 * (-un1 - phi1)
    j2 = a2 * (-un2 - phi2)
    i1 = a1 * (phi1 + up1 - v)
    i2 = a2 * (phi2 + up2 - v)
    ie = i1 - j1
    return i1, i2, j1, j2, ie, v, phi1, phi2, i1 + i2


@njit(cache=True)
def interp(x, xp, fp):
    """Scalar linear interpolation clamped at the ends (same formula as
    ``np.interp``, several times faster for scalars under numba)."""
    n = xp.shape[0]
    if x <= xp[0]:
        return fp[0]
    if x >= xp[n - 1]:
        return fp[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xp[mid] <= x:
            lo = mid
        else:
            hi = mid
    slope = (fp[hi] - fp[lo]) / (xp[hi] - xp[lo])
    return slope * (x - xp[lo]) + fp[lo]


@njit(cache=True)
def potentials(y, zn, un, zp, up):
    return (
        interp(y[0], zn, un),
        interp(y[1], zp, up),
        interp(y[2], zn, un),
        interp(y[3], zp, up),
    )


@njit(cache=True)
def rhs(y, p, zn, un, zp, up, mode, value, dy):
    un1, up1, un2, up2 = potentials(y, zn, un, zp, up)
    i1, i2, j1, j2, ie, v, phi1, phi2, cur = network(
        un1, up1, un2, up2, p[0], p[1], p[2], mode, value
    )
    qn = 3600.0 * p[3]
    qp = 3600.0 * p[4]
    dy[0] = -j1 / qn
    dy[1] = i1 / qp
    dy[2] = -j2 / qn
    dy[3] = i2 / qp
    return v, cur, ie


@njit(cache=True)
def terminal(y, p, zn, un, zp, up, mode, value):
    un1, up1, un2, up2 = potentials(y, zn, un, zp, up)
    i1, i2, j1, j2, ie, v, phi1, phi2, cur = network(
        un1, up1, un2, up2, p[0], p[1], p[2], mode, value
    )
    return v, cur, ie


@njit(cache=True)
def dopri_step(y, f0, h, p, zn, un, zp, up, mode, value, ynew, fnew, err):
    n = y.shape[0]
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    tmp = np.empty(n)
    for i in range(n):
        tmp[i] = y[i] + h * A21 * f0[i]
    rhs(tmp, p, zn, un, zp, up, mode, value, k2)
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * f0[i] + A32 * k2[i])
    rhs(tmp, p, zn, un, zp, up, mode, value, k3)
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * f0[i] + A42 * k2[i] + A43 * k3[i])
    rhs(tmp, p, zn, un, zp, up, mode, value, k4)
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * f0[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs(tmp, p, zn, un, zp, up, mode, value, k5)
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * f0[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    rhs(tmp, p, zn, un, zp, up, mode, value, k6)
    for i in range(n):
        ynew[i] = y[i] + h * (B1 * f0[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    rhs(ynew, p, zn, un, zp, up, mode, value, fnew)
    for i in range(n):
        err[i] = h * (
            E1 * f0[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * fnew[i]
        )


@njit(cache=True)
def _lu_solve(a, b, m, x):
    """Solve ``a x = b`` for a small dense system (partial pivoting).

    ``m`` and ``x`` are caller-provided scratch/output buffers; ``a`` and
    ``b`` are left untouched."""
    n = b.shape[0]
    for r in range(n):
        x[r] = b[r]
        for c in range(n):
            m[r, c] = a[r, c]
    for k in range(n):
        piv = k
        best = abs(m[k, k])
        for r in range(k + 1, n):
            if abs(m[r, k]) > best:
                best = abs(m[r, k])
                piv = r
        if piv != k:
            for c in range(n):
                tmp = m[k, c]
                m[k, c] = m[piv, c]
                m[piv, c] = tmp
            tmp = x[k]
            x[k] = x[piv]
            x[piv] = tmp
        for r in range(k + 1, n):
            fac = m[r, k] / m[k, k]
            if fac != 0.0:
                for c in range(k, n):
                    m[r, c] -= fac * m[k, c]
                x[r] -= fac * x[k]
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for c in range(k + 1, n):
            acc -= m[k, c] * x[c]
        x[k] = acc / m[k, k]
    return x


@njit(cache=True)
def jacobian(y, f0, p, zn, un, zp, up, mode, value, jac):
    n = y.shape[0]
    yp = y.copy()
    fp = np.empty(n)
    for c in range(n):
        eps = 1e-7 * max(1e-3, abs(y[c]))
        yp[c] = y[c] + eps
        rhs(yp, p, zn, un, zp, up, mode, value, fp)
        for r in range(n):
            jac[r, c] = (fp[r] - f0[r]) / eps
        yp[c] = y[c]


@njit(cache=True)
def extrap_step(y, f0, jac, h, p, zn, un, zp, up, mode, value, ynew, fnew, err, work, mats):
    """Linearly implicit Euler with 1/2/3 substeps, extrapolated to order 3.

    The Jacobian is frozen at ``y``; the low-order companion (order 2) gives
    the error estimate. Linear invariants of the flow are preserved because
    every stage solve inherits them from ``f``. ``work`` (6 x n) and ``mats``
    (2 x n x n) are scratch buffers.
    """
    n = y.shape[0]
    t1 = work[0]
    t2 = work[1]
    t3 = work[2]
    fs = work[3]
    yc = work[4]
    d = work[5]
    m = mats[0]
    lu = mats[1]
    for nsub in range(1, 4):
        hs = h / nsub
        for r in range(n):
            for c in range(n):
                m[r, c] = -hs * jac[r, c]
            m[r, r] += 1.0
            yc[r] = y[r]
        for s in range(nsub):
            if s == 0:
                for r in range(n):
                    fs[r] = hs * f0[r]
            else:
                rhs(yc, p, zn, un, zp, up, mode, value, fs)
                for r in range(n):
                    fs[r] *= hs
            _lu_solve(m, fs, lu, d)
            for r in range(n):
                yc[r] += d[r]
        for r in range(n):
            if nsub == 1:
                t1[r] = yc[r]
            elif nsub == 2:
                t2[r] = yc[r]
            else:
                t3[r] = yc[r]
    for r in range(n):
        t22 = 2.0 * t2[r] - t1[r]
        t32 = 3.0 * t3[r] - 2.0 * t2[r]
        t33 = t32 + 0.5 * (t32 - t22)
        ynew[r] = t33
        err[r] = t33 - t32
    rhs(ynew, p, zn, un, zp, up, mode, value, fnew)


@njit(cache=True)
def _store(rows, n, t, y, p, zn, un, zp, up, mode, value):
    v, cur, ie = terminal(y, p, zn, un, zp, up, mode, value)
    rows[n, 0] = t
    rows[n, 1] = v
    rows[n, 2] = cur
    rows[n, 3] = y[0]
    rows[n, 4] = y[1]
    rows[n, 5] = y[2]
    rows[n, 6] = y[3]
    rows[n, 7] = ie


@njit(cache=True)
def _hermite(y, f0, ynew, fnew, hh, s, out):
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    for i in range(y.shape[0]):
        out[i] = h00 * y[i] + h10 * hh * f0[i] + h01 * ynew[i] + h11 * hh * fnew[i]


@njit(cache=True)
def integrate(
    y0, t0, p, zn, un, zp, up, mode, value,
    cutoff, direction, t_stop, out_dt, rtol, atol, hmax, rows, method, max_dv,
):
    """Integrate one protocol step.

    ``method`` 0 is explicit Dormand-Prince 5(4), 1 is the stiff
    extrapolation scheme. ``direction`` is +1 (stop once v >= cutoff), -1 (stop once v <= cutoff)
    or 0 (no voltage event). ``t_stop`` is the duration end (or the safety
    cap for cc steps). Rows are written at ``t0 + k*out_dt`` by cubic Hermite
    interpolation and at the final time; with ``max_dv > 0`` extra rows are
    interpolated wherever the terminal voltage would otherwise move by more
    than ``max_dv`` between consecutive rows.

    Returns ``(status, t, y, n_rows, n_steps, n_clips)``.
    """
    n = y0.shape[0]
    y = y0.copy()
    f0 = np.empty(n)
    ynew = np.empty(n)
    fnew = np.empty(n)
    err = np.empty(n)
    yb = np.empty(n)
    fb = np.empty(n)
    eb = np.empty(n)
    yi = np.empty(n)
    jac = np.empty((n, n))
    work = np.empty((6, n))
    mats = np.empty((2, n, n))
    jac_ok = False
    order = 5.0 if method == 0 else 3.0
    t = t0
    nrows = 0
    nsteps = 0
    nclips = 0
    max_rows = rows.shape[0]

    v, cur, ie = rhs(y, p, zn, un, zp, up, mode, value, f0)
    _store(rows, nrows, t, y, p, zn, un, zp, up, mode, value)
    nrows += 1
    if direction != 0 and direction * (v - cutoff) >= 0.0:
        return STATUS_EVENT, t, y, nrows, nsteps, nclips

    next_out = t0 + out_dt
    # initial step from the stoichiometry rates
    fmax = 0.0
    for i in range(n):
        fmax = max(fmax, abs(f0[i]))
    h = 1.0 if fmax == 0.0 else min(hmax, 1e-3 / fmax)
    h = max(h, 1e-6)

    while True:
        if t >= t_stop:
            return STATUS_CAP if direction != 0 else STATUS_DURATION, t, y, nrows, nsteps, nclips
        last = False
        if t + h >= t_stop:
            h = t_stop - t
            last = True
        if method == 0:
            dopri_step(y, f0, h, p, zn, un, zp, up, mode, value, ynew, fnew, err)
        else:
            if not jac_ok:
                jacobian(y, f0, p, zn, un, zp, up, mode, value, jac)
                jac_ok = True
            extrap_step(y, f0, jac, h, p, zn, un, zp, up, mode, value, ynew, fnew, err, work, mats)
        en = 0.0
        finite = True
        for i in range(n):
            if not math.isfinite(ynew[i]):
                finite = False
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            en += (err[i] / sc) ** 2
        en = math.sqrt(en / n)
        if not finite or not math.isfinite(en):
            h *= 0.25
            if h < 1e-9:
                return STATUS_NONFINITE, t, y, nrows, nsteps, nclips
            continue
        if en > 1.0:
            h *= max(0.2, 0.9 * en ** (-1.0 / order))
            if h < 1e-9:
                return STATUS_STEP_UNDERFLOW, t, y, nrows, nsteps, nclips
            continue

        nsteps += 1
        t_new = t_stop if last else t + h
        h_acc = t_new - t
        event = False
        if direction != 0:
            vnew, c_, i_ = terminal(ynew, p, zn, un, zp, up, mode, value)
            if direction * (vnew - cutoff) >= 0.0:
                event = True
                # bisection on the step fraction; lo never crossed, hi crossed
                lo = 0.0
                hi = 1.0
                for i in range(n):
                    yb[i] = ynew[i]
                while (hi - lo) * h_acc > 1e-3:
                    mid = 0.5 * (lo + hi)
                    if method == 0:
                        dopri_step(y, f0, mid * h_acc, p, zn, un, zp, up, mode, value, yi, fb, eb)
                    else:
                        extrap_step(y, f0, jac, mid * h_acc, p, zn, un, zp, up, mode, value, yi, fb, eb,
                                    work, mats)
                    vm, c_, i_ = terminal(yi, p, zn, un, zp, up, mode, value)
                    if direction * (vm - cutoff) >= 0.0:
                        hi = mid
                        for i in range(n):
                            yb[i] = yi[i]
                    else:
                        lo = mid
                t_new = t + hi * h_acc
                for i in range(n):
                    ynew[i] = yb[i]
                rhs(ynew, p, zn, un, zp, up, mode, value, fnew)
        # cadence rows strictly inside (t, t_new), refined where v moves fast
        hh = t_new - t
        while nrows < max_rows - 1:
            target = next_out if next_out < t_new else t_new
            if target == t_new:
                for i in range(n):
                    yi[i] = ynew[i]
            else:
                _hermite(y, f0, ynew, fnew, hh, (target - t) / hh, yi)
            if max_dv > 0.0:
                v_t, c_, i_ = terminal(yi, p, zn, un, zp, up, mode, value)
                t_prev = rows[nrows - 1, 0]
                lo_t = t_prev if t_prev > t else t
                dv = abs(v_t - rows[nrows - 1, 1])
                if dv > max_dv and target - lo_t > 2e-3:
                    tm = lo_t + max(1e-3, 0.8 * (target - lo_t) * max_dv / dv)
                    _hermite(y, f0, ynew, fnew, hh, (tm - t) / hh, yi)
                    _store(rows, nrows, tm, yi, p, zn, un, zp, up, mode, value)
                    nrows += 1
                    continue
            if target == t_new:
                break
            _store(rows, nrows, next_out, yi, p, zn, un, zp, up, mode, value)
            nrows += 1
            next_out += out_dt
        if nrows >= max_rows - 1:
            return STATUS_ROWS_FULL, t, y, nrows, nsteps, nclips
        clipped = False
        for i in range(n):
            yv = ynew[i]
            if yv < 0.0:
                yv = 0.0
                clipped = True
            elif yv > 1.0:
                yv = 1.0
                clipped = True
            y[i] = yv
            f0[i] = fnew[i]
        if clipped:
            nclips += 1
            rhs(y, p, zn, un, zp, up, mode, value, f0)
        t = t_new
        jac_ok = False
        if event or last:
            if t - rows[nrows - 1, 0] > 0.0:
                _store(rows, nrows, t, y, p, zn, un, zp, up, mode, value)
                nrows += 1
            if event:
                return STATUS_EVENT, t, y, nrows, nsteps, nclips
            if direction != 0:
                return STATUS_CAP, t, y, nrows, nsteps, nclips
            return STATUS_DURATION, t, y, nrows, nsteps, nclips
        # step size update
        fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** (-1.0 / order)))
        h = min(hmax, h_acc * fac)
