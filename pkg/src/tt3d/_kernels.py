"""Hot inner loops for trilinear interpolation.

Compiled with numba when available (single-threaded, strict IEEE arithmetic,
so results stay deterministic and finite-difference checks pass); otherwise
vectorized numpy fallbacks with the same semantics run.

Convention: tables are (res**3, F) with flat index (ix*res + iy)*res + iz;
queries clamp to the [lo, hi] cube and the clamp zeroes the x-gradient.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


# -- vectorized numpy versions (fallback + oracle for the compiled path) --------

_OFFS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def _prep(pts, res, lo, hi, dtype):
    scl = (res - 1) / (hi - lo)
    u = np.clip((pts - lo) * scl, 0.0, res - 1).astype(dtype)
    i0 = np.minimum(u.astype(np.int64), res - 2)
    f = u - i0
    inside = ((u > 0.0) & (u < res - 1)).astype(dtype)
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    ax = (np.array(1.0, dtype) - f[:, 0], f[:, 0])
    ay = (np.array(1.0, dtype) - f[:, 1], f[:, 1])
    az = (np.array(1.0, dtype) - f[:, 2], f[:, 2])
    return scl, inside, base, ax, ay, az


def _np_trilerp_fwd(tv, pts, res, lo, hi):
    scl, inside, base, ax, ay, az = _prep(pts, res, lo, hi, tv.dtype)
    out = np.zeros((pts.shape[0], tv.shape[1]), dtype=tv.dtype)
    for dx, dy, dz in _OFFS:
        wk = ax[dx] * ay[dy] * az[dz]
        out += wk[:, None] * tv[base + (dx * res + dy) * res + dz]
    return out


def _np_trilerp_vjp(tv, pts, g, res, lo, hi):
    scl, inside, base, ax, ay, az = _prep(pts, res, lo, hi, tv.dtype)
    nfeat = tv.shape[1]
    gtable = np.zeros_like(tv)
    gx = np.zeros_like(pts, dtype=tv.dtype)
    size = res ** 3
    for dx, dy, dz in _OFFS:
        ik = base + (dx * res + dy) * res + dz
        wgf = (ax[dx] * ay[dy] * az[dz])[:, None] * g
        for c in range(nfeat):
            gtable[:, c] += np.bincount(ik, weights=wgf[:, c], minlength=size)
        gdotc = (tv[ik] * g).sum(axis=1)
        gx[:, 0] += (1.0 if dx else -1.0) * (gdotc * ay[dy] * az[dz])
        gx[:, 1] += (1.0 if dy else -1.0) * (gdotc * ax[dx] * az[dz])
        gx[:, 2] += (1.0 if dz else -1.0) * (gdotc * ax[dx] * ay[dy])
    gx *= scl * inside
    return gtable, gx


def _np_trilerp_jac(tv, pts, res, lo, hi):
    scl, inside, base, ax, ay, az = _prep(pts, res, lo, hi, tv.dtype)
    nfeat = tv.shape[1]
    jac = np.zeros((pts.shape[0], nfeat, 3), dtype=tv.dtype)
    for dx, dy, dz in _OFFS:
        corner = tv[base + (dx * res + dy) * res + dz]
        jac[:, :, 0] += (1.0 if dx else -1.0) * (ay[dy] * az[dz])[:, None] * corner
        jac[:, :, 1] += (1.0 if dy else -1.0) * (ax[dx] * az[dz])[:, None] * corner
        jac[:, :, 2] += (1.0 if dz else -1.0) * (ax[dx] * ay[dy])[:, None] * corner
    jac *= scl * inside[:, None, :]
    return jac


# -- compiled versions -------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_trilerp_fwd(tv, pts, res, lo, hi):
        n = pts.shape[0]
        nf = tv.shape[1]
        out = np.zeros((n, nf), dtype=tv.dtype)
        scl = (res - 1.0) / (hi - lo)
        top = res - 1.0
        r2 = res * res
        for i in range(n):
            ux = min(max((pts[i, 0] - lo) * scl, 0.0), top)
            uy = min(max((pts[i, 1] - lo) * scl, 0.0), top)
            uz = min(max((pts[i, 2] - lo) * scl, 0.0), top)
            ix = min(int(ux), res - 2)
            iy = min(int(uy), res - 2)
            iz = min(int(uz), res - 2)
            fx = ux - ix
            fy = uy - iy
            fz = uz - iz
            base = (ix * res + iy) * res + iz
            for c in range(nf):
                c00 = tv[base, c] + fz * (tv[base + 1, c] - tv[base, c])
                c01 = tv[base + res, c] + fz * (tv[base + res + 1, c] - tv[base + res, c])
                c10 = tv[base + r2, c] + fz * (tv[base + r2 + 1, c] - tv[base + r2, c])
                c11 = tv[base + r2 + res, c] + fz * (tv[base + r2 + res + 1, c] - tv[base + r2 + res, c])
                c0 = c00 + fy * (c01 - c00)
                c1 = c10 + fy * (c11 - c10)
                out[i, c] = c0 + fx * (c1 - c0)
        return out

    @njit(cache=True)
    def _nb_trilerp_vjp(tv, pts, g, res, lo, hi):
        n = pts.shape[0]
        nf = tv.shape[1]
        gtable = np.zeros_like(tv)
        gx = np.zeros((n, 3), dtype=tv.dtype)
        scl = (res - 1.0) / (hi - lo)
        top = res - 1.0
        r2 = res * res
        for i in range(n):
            ux = min(max((pts[i, 0] - lo) * scl, 0.0), top)
            uy = min(max((pts[i, 1] - lo) * scl, 0.0), top)
            uz = min(max((pts[i, 2] - lo) * scl, 0.0), top)
            in_x = 0.0 < ux < top
            in_y = 0.0 < uy < top
            in_z = 0.0 < uz < top
            ix = min(int(ux), res - 2)
            iy = min(int(uy), res - 2)
            iz = min(int(uz), res - 2)
            fx = ux - ix
            fy = uy - iy
            fz = uz - iz
            base = (ix * res + iy) * res + iz
            gxx = 0.0
            gyy = 0.0
            gzz = 0.0
            for c in range(nf):
                gc = g[i, c]
                c000 = tv[base, c]
                c001 = tv[base + 1, c]
                c010 = tv[base + res, c]
                c011 = tv[base + res + 1, c]
                c100 = tv[base + r2, c]
                c101 = tv[base + r2 + 1, c]
                c110 = tv[base + r2 + res, c]
                c111 = tv[base + r2 + res + 1, c]
                gtable[base, c] += (1.0 - fx) * (1.0 - fy) * (1.0 - fz) * gc
                gtable[base + 1, c] += (1.0 - fx) * (1.0 - fy) * fz * gc
                gtable[base + res, c] += (1.0 - fx) * fy * (1.0 - fz) * gc
                gtable[base + res + 1, c] += (1.0 - fx) * fy * fz * gc
                gtable[base + r2, c] += fx * (1.0 - fy) * (1.0 - fz) * gc
                gtable[base + r2 + 1, c] += fx * (1.0 - fy) * fz * gc
                gtable[base + r2 + res, c] += fx * fy * (1.0 - fz) * gc
                gtable[base + r2 + res + 1, c] += fx * fy * fz * gc
                gxx += gc * ((1.0 - fy) * (1.0 - fz) * (c100 - c000)
                             + (1.0 - fy) * fz * (c101 - c001)
                             + fy * (1.0 - fz) * (c110 - c010)
                             + fy * fz * (c111 - c011))
                gyy += gc * ((1.0 - fx) * (1.0 - fz) * (c010 - c000)
                             + (1.0 - fx) * fz * (c011 - c001)
                             + fx * (1.0 - fz) * (c110 - c100)
                             + fx * fz * (c111 - c101))
                gzz += gc * ((1.0 - fx) * (1.0 - fy) * (c001 - c000)
                             + (1.0 - fx) * fy * (c011 - c010)
                             + fx * (1.0 - fy) * (c101 - c100)
                             + fx * fy * (c111 - c110))
            if in_x:
                gx[i, 0] = gxx * scl
            if in_y:
                gx[i, 1] = gyy * scl
            if in_z:
                gx[i, 2] = gzz * scl
        return gtable, gx

    @njit(cache=True)
    def _nb_trilerp_jac(tv, pts, res, lo, hi):
        n = pts.shape[0]
        nf = tv.shape[1]
        jac = np.zeros((n, nf, 3), dtype=tv.dtype)
        scl = (res - 1.0) / (hi - lo)
        top = res - 1.0
        r2 = res * res
        for i in range(n):
            ux = min(max((pts[i, 0] - lo) * scl, 0.0), top)
            uy = min(max((pts[i, 1] - lo) * scl, 0.0), top)
            uz = min(max((pts[i, 2] - lo) * scl, 0.0), top)
            in_x = 0.0 < ux < top
            in_y = 0.0 < uy < top
            in_z = 0.0 < uz < top
            ix = min(int(ux), res - 2)
            iy = min(int(uy), res - 2)
            iz = min(int(uz), res - 2)
            fx = ux - ix
            fy = uy - iy
            fz = uz - iz
            base = (ix * res + iy) * res + iz
            for c in range(nf):
                c000 = tv[base, c]
                c001 = tv[base + 1, c]
                c010 = tv[base + res, c]
                c011 = tv[base + res + 1, c]
                c100 = tv[base + r2, c]
                c101 = tv[base + r2 + 1, c]
                c110 = tv[base + r2 + res, c]
                c111 = tv[base + r2 + res + 1, c]
                if in_x:
                    jac[i, c, 0] = scl * ((1.0 - fy) * (1.0 - fz) * (c100 - c000)
                                          + (1.0 - fy) * fz * (c101 - c001)
                                          + fy * (1.0 - fz) * (c110 - c010)
                                          + fy * fz * (c111 - c011))
                if in_y:
                    jac[i, c, 1] = scl * ((1.0 - fx) * (1.0 - fz) * (c010 - c000)
                                          + (1.0 - fx) * fz * (c011 - c001)
                                          + fx * (1.0 - fz) * (c110 - c100)
                                          + fx * fz * (c111 - c101))
                if in_z:
                    jac[i, c, 2] = scl * ((1.0 - fx) * (1.0 - fy) * (c001 - c000)
                                          + (1.0 - fx) * fy * (c011 - c010)
                                          + fx * (1.0 - fy) * (c101 - c100)
                                          + fx * fy * (c111 - c110))
        return jac


def trilerp_forward(tv: np.ndarray, pts: np.ndarray, res: int, lo: float, hi: float) -> np.ndarray:
    if HAVE_NUMBA:
        return _nb_trilerp_fwd(tv, np.ascontiguousarray(pts), res, float(lo), float(hi))
    return _np_trilerp_fwd(tv, pts, res, lo, hi)


def trilerp_vjp(tv: np.ndarray, pts: np.ndarray, g: np.ndarray, res: int, lo: float, hi: float):
    if HAVE_NUMBA:
        return _nb_trilerp_vjp(tv, np.ascontiguousarray(pts), np.ascontiguousarray(g),
                               res, float(lo), float(hi))
    return _np_trilerp_vjp(tv, pts, g, res, lo, hi)


def trilerp_jacobian(tv: np.ndarray, pts: np.ndarray, res: int, lo: float, hi: float) -> np.ndarray:
    if HAVE_NUMBA:
        return _nb_trilerp_jac(tv, np.ascontiguousarray(pts), res, float(lo), float(hi))
    return _np_trilerp_jac(tv, pts, res, lo, hi)
