# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backward-induction kernel; mirrors ``_kernels_py`` function by function."""

import numpy as np
from libc.math cimport exp, sqrt, floor, fabs, INFINITY

RS = 0
RN = 1


cdef inline void _clamp(double* x, double* y, double* z) noexcept nogil:
    cdef double r2 = x[0] * x[0] + y[0] * y[0] + z[0] * z[0]
    cdef double s
    if r2 > 1.0:
        s = 1.0 / sqrt(r2)
        x[0] *= s
        y[0] *= s
        z[0] *= s


cdef inline double _tri(const double* V, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz,
                        double lx, double ly, double lz,
                        double hx, double hy, double hz, double x, double y, double z) noexcept nogil:
    cdef double fx = (x - lx) / hx, fy = (y - ly) / hy, fz = (z - lz) / hz
    cdef Py_ssize_t i = <Py_ssize_t>floor(fx), j = <Py_ssize_t>floor(fy), k = <Py_ssize_t>floor(fz)
    if i < 0:
        i = 0
    elif i > nx - 2:
        i = nx - 2
    if j < 0:
        j = 0
    elif j > ny - 2:
        j = ny - 2
    if k < 0:
        k = 0
    elif k > nz - 2:
        k = nz - 2
    cdef double wx = fx - i, wy = fy - j, wz = fz - k
    cdef Py_ssize_t sy = nz, sx = ny * nz
    cdef const double* p = V + i * sx + j * sy + k
    cdef double c00 = p[0] * (1 - wx) + p[sx] * wx
    cdef double c10 = p[sy] * (1 - wx) + p[sx + sy] * wx
    cdef double c01 = p[1] * (1 - wx) + p[sx + 1] * wx
    cdef double c11 = p[sy + 1] * (1 - wx) + p[sx + sy + 1] * wx
    cdef double c0 = c00 * (1 - wy) + c10 * wy
    cdef double c1 = c01 * (1 - wy) + c11 * wy
    return c0 * (1 - wz) + c1 * wz


cdef struct Prm:
    double kf, g, mu, a, b, dt, umax
    int mode
    double lx, ly, lz, hx, hy, hz
    const double* V
    Py_ssize_t nx, ny, nz


cdef inline double _objective(Prm* q, double X, double Y, double Z,
                              double ur, double ui) noexcept nogil:
    cdef double ha = 0.5 * q.mu * q.a
    cdef double k2 = 2.0 * q.kf
    cdef double fx = -0.5 * X + ha * X * Z + k2 * ur * Z
    cdef double fy = -0.5 * Y + ha * Y * Z - k2 * ui * Z
    cdef double fz = -Z - 1.0 - ha * (1.0 - Z * Z) - k2 * (ur * X - ui * Y)
    cdef double sq = sqrt(q.dt) * q.g
    cdef double gx = sq * (1.0 + Z - X * X)
    cdef double gy = -sq * X * Y
    cdef double gz = -sq * X * (1.0 + Z)
    cdef double bx = X + fx * q.dt, by = Y + fy * q.dt, bz = Z + fz * q.dt
    cdef double px = bx + gx, py = by + gy, pz = bz + gz
    cdef double mx = bx - gx, my = by - gy, mz = bz - gz
    _clamp(&px, &py, &pz)
    _clamp(&mx, &my, &mz)
    cdef double ev = 0.5 * (_tri(q.V, q.nx, q.ny, q.nz, q.lx, q.ly, q.lz, q.hx, q.hy, q.hz, px, py, pz)
                            + _tri(q.V, q.nx, q.ny, q.nz, q.lx, q.ly, q.lz, q.hx, q.hy, q.hz, mx, my, mz))
    cdef double u2 = ur * ur + ui * ui
    if q.mode == 0:
        return exp((ha * (1.0 - Z) + 0.5 * q.mu * q.b * u2) * q.dt) * ev
    return 0.5 * (q.a * (1.0 - Z) + q.b * u2) * q.dt + ev


cdef inline double _grad_axis(Prm* q, double X, double Y, double Z,
                              int axis, double step) noexcept nogil:
    cdef double px = X, py = Y, pz = Z, mx = X, my = Y, mz = Z
    cdef double span
    if axis == 0:
        px += step
        mx -= step
    elif axis == 1:
        py += step
        my -= step
    else:
        pz += step
        mz -= step
    _clamp(&px, &py, &pz)
    _clamp(&mx, &my, &mz)
    if axis == 0:
        span = px - mx
    elif axis == 1:
        span = py - my
    else:
        span = pz - mz
    if fabs(span) <= 1e-12:
        return 0.0
    return (_tri(q.V, q.nx, q.ny, q.nz, q.lx, q.ly, q.lz, q.hx, q.hy, q.hz, px, py, pz)
            - _tri(q.V, q.nx, q.ny, q.nz, q.lx, q.ly, q.lz, q.hx, q.hy, q.hz, mx, my, mz)) / span


cdef inline void _closed_form(Prm* q, double X, double Y, double Z,
                              double* ur, double* ui) noexcept nogil:
    cdef double gx = _grad_axis(q, X, Y, Z, 0, q.hx)
    cdef double gy = _grad_axis(q, X, Y, Z, 1, q.hy)
    cdef double gz = _grad_axis(q, X, Y, Z, 2, q.hz)
    cdef double scale, v0, mag, s
    if q.mode == 0:
        if q.mu == 0:
            ur[0] = 0.0
            ui[0] = 0.0
            return
        v0 = _tri(q.V, q.nx, q.ny, q.nz, q.lx, q.ly, q.lz, q.hx, q.hy, q.hz, X, Y, Z)
        scale = 2.0 * q.kf / (q.mu * q.b * v0)
    else:
        scale = 2.0 * q.kf / q.b
    ur[0] = scale * (X * gz - Z * gx)
    ui[0] = scale * (Z * gy - Y * gz)
    mag = sqrt(ur[0] * ur[0] + ui[0] * ui[0])
    if mag > q.umax:
        s = q.umax / mag
        ur[0] *= s
        ui[0] *= s


cdef Prm _make_prm(tuple prm, const double[::1] lo, const double[::1] h,
                   const double[:, :, ::1] V):
    cdef Prm q
    q.V = &V[0, 0, 0]
    q.nx, q.ny, q.nz = V.shape[0], V.shape[1], V.shape[2]
    q.kf, q.g, q.mu, q.a, q.b, q.dt, q.umax = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    q.mode = prm[7]
    q.lx, q.ly, q.lz = lo[0], lo[1], lo[2]
    q.hx, q.hy, q.hz = h[0], h[1], h[2]
    return q


def clamp_ball(X, Y, Z):
    from . import _kernels_py
    return _kernels_py.clamp_ball(X, Y, Z)


def trilinear(const double[:, :, ::1] V, lo, h, X, Y, Z):
    """Trilinear interpolation at arrays of points (no clamping)."""
    shape = np.shape(X)
    cdef double[::1] xs = np.ascontiguousarray(np.ravel(X), dtype=float)
    cdef double[::1] ys = np.ascontiguousarray(np.ravel(Y), dtype=float)
    cdef double[::1] zs = np.ascontiguousarray(np.ravel(Z), dtype=float)
    cdef double[::1] lo_ = np.ascontiguousarray(lo, dtype=float)
    cdef double[::1] h_ = np.ascontiguousarray(h, dtype=float)
    out = np.empty(xs.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t n
    for n in range(xs.shape[0]):
        o[n] = _tri(&V[0, 0, 0], V.shape[0], V.shape[1], V.shape[2], lo_[0], lo_[1], lo_[2], h_[0], h_[1], h_[2], xs[n], ys[n], zs[n])
    return out.reshape(shape)


def objective(const double[:, :, ::1] V, lo, h, X, Y, Z, ur, ui, tuple prm):
    X, Y, Z, ur, ui = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (X, Y, Z, ur, ui)))
    shape = X.shape
    cdef double[::1] xs = np.ascontiguousarray(X.ravel())
    cdef double[::1] ys = np.ascontiguousarray(Y.ravel())
    cdef double[::1] zs = np.ascontiguousarray(Z.ravel())
    cdef double[::1] rs = np.ascontiguousarray(ur.ravel())
    cdef double[::1] is_ = np.ascontiguousarray(ui.ravel())
    cdef Prm q = _make_prm(prm, np.ascontiguousarray(lo, dtype=float), np.ascontiguousarray(h, dtype=float), V)
    out = np.empty(xs.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t n
    for n in range(xs.shape[0]):
        o[n] = _objective(&q, xs[n], ys[n], zs[n], rs[n], is_[n])
    return out.reshape(shape)


def closed_form(const double[:, :, ::1] V, lo, h, X, Y, Z, tuple prm):
    X, Y, Z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (X, Y, Z)))
    shape = X.shape
    cdef double[::1] xs = np.ascontiguousarray(X.ravel())
    cdef double[::1] ys = np.ascontiguousarray(Y.ravel())
    cdef double[::1] zs = np.ascontiguousarray(Z.ravel())
    cdef Prm q = _make_prm(prm, np.ascontiguousarray(lo, dtype=float), np.ascontiguousarray(h, dtype=float), V)
    ur = np.empty(xs.shape[0])
    ui = np.empty(xs.shape[0])
    cdef double[::1] o_r = ur
    cdef double[::1] o_i = ui
    cdef Py_ssize_t n
    for n in range(xs.shape[0]):
        _closed_form(&q, xs[n], ys[n], zs[n], &o_r[n], &o_i[n])
    return ur.reshape(shape), ui.reshape(shape)


def backward_step(const double[:, :, ::1] V_next, const double[:, :, ::1] ur_next,
                  const double[:, :, ::1] ui_next, const Py_ssize_t[:, ::1] idx,
                  const double[::1] X, const double[::1] Y, const double[::1] Z,
                  const double[::1] lo, const double[::1] h, const double[:, ::1] controls,
                  tuple prm, int do_search,
                  double[:, :, ::1] V_out, double[:, :, ::1] ur_out, double[:, :, ::1] ui_out):
    """One backward-induction step over the active nodes, written in place."""
    cdef Prm q = _make_prm(prm, lo, h, V_next)
    cdef Py_ssize_t n, c, i, j, k
    cdef Py_ssize_t n_nodes = idx.shape[0], n_ctrl = controls.shape[0]
    cdef double best, bur, bui, val, cr, ci, x, y, z
    with nogil:
        for n in range(n_nodes):
            i = idx[n, 0]
            j = idx[n, 1]
            k = idx[n, 2]
            x = X[n]
            y = Y[n]
            z = Z[n]
            best = INFINITY
            bur = 0.0
            bui = 0.0
            if do_search:
                for c in range(n_ctrl):
                    val = _objective(&q, x, y, z, controls[c, 0], controls[c, 1])
                    if val < best:
                        best = val
                        bur = controls[c, 0]
                        bui = controls[c, 1]
            cr = ur_next[i, j, k]
            ci = ui_next[i, j, k]
            val = _objective(&q, x, y, z, cr, ci)
            if val < best:
                best = val
                bur = cr
                bui = ci
            val = _objective(&q, x, y, z, 0.0, 0.0)
            if val < best:
                best = val
                bur = 0.0
                bui = 0.0
            _closed_form(&q, x, y, z, &cr, &ci)
            val = _objective(&q, x, y, z, cr, ci)
            if val < best:
                best = val
                bur = cr
                bui = ci
            V_out[i, j, k] = best
            ur_out[i, j, k] = bur
            ui_out[i, j, k] = bui
