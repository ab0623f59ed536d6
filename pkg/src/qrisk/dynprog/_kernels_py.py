"""Pure-numpy backward-induction kernel (fallback for the compiled core).

Every function here has a twin with the same signature in ``_kernels.pyx``.
Arrays of node data are vectorized; the control candidates are looped.

``prm`` is the tuple ``(kappa_f, g, mu, a, b, dt, u_max, mode)`` with
``g = kappa_s sqrt(eta)`` and ``mode`` 0 for risk-sensitive, 1 for
risk-neutral.
"""

import numpy as np

RS, RN = 0, 1


def clamp_ball(X, Y, Z):
    r2 = X * X + Y * Y + Z * Z
    s = np.where(r2 > 1.0, 1.0 / np.sqrt(np.maximum(r2, 1.0)), 1.0)
    return X * s, Y * s, Z * s


def trilinear(V, lo, h, X, Y, Z):
    """Trilinear interpolation of the node array ``V`` at points ``(X, Y, Z)``."""
    out_shape = np.shape(X)
    X, Y, Z = (np.atleast_1d(np.asarray(c, dtype=float)) for c in (X, Y, Z))
    nx, ny, nz = V.shape
    fx = (X - lo[0]) / h[0]
    fy = (Y - lo[1]) / h[1]
    fz = (Z - lo[2]) / h[2]
    i = np.clip(np.floor(fx).astype(np.intp), 0, nx - 2)
    j = np.clip(np.floor(fy).astype(np.intp), 0, ny - 2)
    k = np.clip(np.floor(fz).astype(np.intp), 0, nz - 2)
    wx = fx - i
    wy = fy - j
    wz = fz - k
    c00 = V[i, j, k] * (1 - wx) + V[i + 1, j, k] * wx
    c10 = V[i, j + 1, k] * (1 - wx) + V[i + 1, j + 1, k] * wx
    c01 = V[i, j, k + 1] * (1 - wx) + V[i + 1, j, k + 1] * wx
    c11 = V[i, j + 1, k + 1] * (1 - wx) + V[i + 1, j + 1, k + 1] * wx
    c0 = c00 * (1 - wy) + c10 * wy
    c1 = c01 * (1 - wy) + c11 * wy
    return (c0 * (1 - wz) + c1 * wz).reshape(out_shape)


def objective(V, lo, h, X, Y, Z, ur, ui, prm):
    """Discrete one-step cost-to-go of control ``ur + i ui`` at states ``(X, Y, Z)``.

    Two-point noise: successors ``r + f dt +- g sqrt(dt)``, clamped to the
    unit ball, with equal weights.
    """
    kf, g, mu, a, b, dt, _, mode = prm
    ha = 0.5 * mu * a
    k2 = 2.0 * kf
    fx = -0.5 * X + ha * X * Z + k2 * ur * Z
    fy = -0.5 * Y + ha * Y * Z - k2 * ui * Z
    fz = -Z - 1.0 - ha * (1.0 - Z * Z) - k2 * (ur * X - ui * Y)
    sq = np.sqrt(dt) * g
    gx = sq * (1.0 + Z - X * X)
    gy = -sq * X * Y
    gz = -sq * X * (1.0 + Z)
    bx, by, bz = X + fx * dt, Y + fy * dt, Z + fz * dt
    vp = trilinear(V, lo, h, *clamp_ball(bx + gx, by + gy, bz + gz))
    vm = trilinear(V, lo, h, *clamp_ball(bx - gx, by - gy, bz - gz))
    ev = 0.5 * (vp + vm)
    u2 = ur * ur + ui * ui
    if mode == RS:
        return np.exp((ha * (1.0 - Z) + 0.5 * mu * b * u2) * dt) * ev
    return 0.5 * (a * (1.0 - Z) + b * u2) * dt + ev


def value_gradient(V, lo, h, X, Y, Z):
    """Central-difference gradient of the interpolated slice, steps clamped to the ball."""
    grads = []
    for axis in range(3):
        p = [X, Y, Z]
        m = [X, Y, Z]
        p[axis] = p[axis] + h[axis]
        m[axis] = m[axis] - h[axis]
        pc = clamp_ball(*p)
        mc = clamp_ball(*m)
        span = pc[axis] - mc[axis]
        diff = trilinear(V, lo, h, *pc) - trilinear(V, lo, h, *mc)
        safe = np.abs(span) > 1e-12
        grads.append(np.where(safe, diff / np.where(safe, span, 1.0), 0.0))
    return grads


def closed_form(V, lo, h, X, Y, Z, prm):
    """Stationary control of the local Hamiltonian from finite-difference gradients."""
    kf, g, mu, a, b, dt, umax, mode = prm
    gx, gy, gz = value_gradient(V, lo, h, X, Y, Z)
    if mode == RS:
        if mu == 0:
            zero = np.zeros_like(np.asarray(X, dtype=float))
            return zero, zero.copy()
        v0 = trilinear(V, lo, h, X, Y, Z)
        scale = 2.0 * kf / (mu * b * v0)
    else:
        scale = 2.0 * kf / b
    ur = scale * (X * gz - Z * gx)
    ui = scale * (Z * gy - Y * gz)
    mag = np.sqrt(ur * ur + ui * ui)
    s = np.where(mag > umax, umax / np.maximum(mag, umax), 1.0)
    return ur * s, ui * s


def backward_step(V_next, ur_next, ui_next, idx, X, Y, Z, lo, h, controls, prm, do_search,
                  V_out, ur_out, ui_out):
    """One backward-induction step over the active nodes, written in place.

    Candidate order: control grid (when ``do_search``), the control chosen
    at this node one step later, zero, the closed-form control. The first
    minimum wins.
    """
    ii, jj, kk = idx[:, 0], idx[:, 1], idx[:, 2]
    best = np.full(X.shape, np.inf)
    bur = np.zeros(X.shape)
    bui = np.zeros(X.shape)

    def consider(ur, ui):
        val = objective(V_next, lo, h, X, Y, Z, ur, ui, prm)
        better = val < best
        best[better] = val[better]
        bur[better] = np.broadcast_to(ur, X.shape)[better]
        bui[better] = np.broadcast_to(ui, X.shape)[better]

    if do_search:
        for cr, ci in controls:
            consider(cr, ci)
    consider(ur_next[ii, jj, kk], ui_next[ii, jj, kk])
    consider(0.0, 0.0)
    consider(*closed_form(V_next, lo, h, X, Y, Z, prm))
    V_out[ii, jj, kk] = best
    ur_out[ii, jj, kk] = bur
    ui_out[ii, jj, kk] = bui
