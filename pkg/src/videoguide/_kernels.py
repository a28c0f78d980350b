"""Compiled inner loops: z-buffer rasterization, convex signed distances,
contact generation and the projected Gauss-Seidel contact solve.

Every kernel is ``nogil`` so population rollouts can share threads.
Array layouts are documented in ``videoguide.sim._SceneArrays``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NEAR = 1e-3

KIND_STATIC = 0
KIND_KINEMATIC = 1
KIND_DYNAMIC = 2

MAX_CONTACTS = 8192


# ---------------------------------------------------------------------------
# rasterization


@njit(cache=True, nogil=True)
def raster(tri_cam, tri_label, sph_cam, sph_rad, sph_label, fx, fy, cx, cy, row0, col0, depth, label):
    """Draw camera-frame triangles and spheres into ``depth``/``label`` (in place).

    ``depth`` starts at +inf. Pixel centers sit at integer (u, v); the window
    covers rows ``row0..row0+h`` and cols ``col0..col0+w``. Equal depths go
    to the lower label.
    """
    h, w = depth.shape
    for k in range(tri_cam.shape[0]):
        z0 = tri_cam[k, 0, 2]
        z1 = tri_cam[k, 1, 2]
        z2 = tri_cam[k, 2, 2]
        if z0 < NEAR or z1 < NEAR or z2 < NEAR:
            continue
        u0 = fx * tri_cam[k, 0, 0] / z0 + cx
        v0 = fy * tri_cam[k, 0, 1] / z0 + cy
        u1 = fx * tri_cam[k, 1, 0] / z1 + cx
        v1 = fy * tri_cam[k, 1, 1] / z1 + cy
        u2 = fx * tri_cam[k, 2, 0] / z2 + cx
        v2 = fy * tri_cam[k, 2, 1] / z2 + cy
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area) < 1e-12:
            continue
        cmin = max(int(math.ceil(min(u0, u1, u2))) - col0, 0)
        cmax = min(int(math.floor(max(u0, u1, u2))) - col0, w - 1)
        rmin = max(int(math.ceil(min(v0, v1, v2))) - row0, 0)
        rmax = min(int(math.floor(max(v0, v1, v2))) - row0, h - 1)
        if cmin > cmax or rmin > rmax:
            continue
        inv_area = 1.0 / area
        iz0 = 1.0 / z0
        iz1 = 1.0 / z1
        iz2 = 1.0 / z2
        lab = tri_label[k]
        for r in range(rmin, rmax + 1):
            pv = r + row0
            for c in range(cmin, cmax + 1):
                pu = c + col0
                w0 = ((u2 - u1) * (pv - v1) - (v2 - v1) * (pu - u1)) * inv_area
                w1 = ((u0 - u2) * (pv - v2) - (v0 - v2) * (pu - u2)) * inv_area
                w2 = ((u1 - u0) * (pv - v0) - (v1 - v0) * (pu - u0)) * inv_area
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                d = depth[r, c]
                if z < d or (z == d and lab < label[r, c]):
                    depth[r, c] = z
                    label[r, c] = lab
    for k in range(sph_cam.shape[0]):
        sx = sph_cam[k, 0]
        sy = sph_cam[k, 1]
        sz = sph_cam[k, 2]
        rad = sph_rad[k]
        if sz - rad < NEAR:
            continue
        uc = fx * sx / sz + cx
        vc = fy * sy / sz + cy
        # generous screen bound for the projected sphere
        pr = max(fx, fy) * rad / (sz - rad) + 1.0
        cmin = max(int(math.ceil(uc - pr)) - col0, 0)
        cmax = min(int(math.floor(uc + pr)) - col0, w - 1)
        rmin = max(int(math.ceil(vc - pr)) - row0, 0)
        rmax = min(int(math.floor(vc + pr)) - row0, h - 1)
        lab = sph_label[k]
        cc2 = sx * sx + sy * sy + sz * sz - rad * rad
        hit_any = False
        for r in range(rmin, rmax + 1):
            dy = (r + row0 - cy) / fy
            for c in range(cmin, cmax + 1):
                dx = (c + col0 - cx) / fx
                dd = dx * dx + dy * dy + 1.0
                dc = dx * sx + dy * sy + sz
                disc = dc * dc - dd * cc2
                if disc < 0.0:
                    continue
                hit_any = True
                z = (dc - math.sqrt(disc)) / dd
                d = depth[r, c]
                if z < d or (z == d and lab < label[r, c]):
                    depth[r, c] = z
                    label[r, c] = lab
        if not hit_any:
            # sub-pixel particle: at least the nearest pixel
            c = int(math.floor(uc + 0.5)) - col0
            r = int(math.floor(vc + 0.5)) - row0
            if 0 <= r < h and 0 <= c < w:
                z = sz - rad
                d = depth[r, c]
                if z < d or (z == d and lab < label[r, c]):
                    depth[r, c] = z
                    label[r, c] = lab


# ---------------------------------------------------------------------------
# small vector helpers


@njit(cache=True, nogil=True, inline="always")
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True, nogil=True)
def quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1 - 2 * (y * y + z * z)
    out[0, 1] = 2 * (x * y - w * z)
    out[0, 2] = 2 * (x * z + w * y)
    out[1, 0] = 2 * (x * y + w * z)
    out[1, 1] = 1 - 2 * (x * x + z * z)
    out[1, 2] = 2 * (y * z - w * x)
    out[2, 0] = 2 * (x * z - w * y)
    out[2, 1] = 2 * (y * z + w * x)
    out[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True, nogil=True)
def quat_mul(a, b, out):
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    out[0] = aw * bw - ax * bx - ay * by - az * bz
    out[1] = aw * bx + ax * bw + ay * bz - az * by
    out[2] = aw * by - ax * bz + ay * bw + az * bx
    out[3] = aw * bz + ax * by - ay * bx + az * bw


@njit(cache=True, nogil=True)
def rotvec_to_quat(rx, ry, rz, out):
    angle = math.sqrt(rx * rx + ry * ry + rz * rz)
    if angle < 1e-12:
        out[0] = 1.0 - angle * angle / 8.0
        out[1] = 0.5 * rx
        out[2] = 0.5 * ry
        out[3] = 0.5 * rz
        n = math.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
        for i in range(4):
            out[i] /= n
        return
    s = math.sin(angle / 2) / angle
    out[0] = math.cos(angle / 2)
    out[1] = rx * s
    out[2] = ry * s
    out[3] = rz * s


@njit(cache=True, nogil=True)
def quat_to_rotvec(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < 1e-12:
        out[0] = 2 * x
        out[1] = 2 * y
        out[2] = 2 * z
        return
    angle = 2.0 * math.atan2(s, w)
    out[0] = x / s * angle
    out[1] = y / s * angle
    out[2] = z / s * angle


@njit(cache=True, nogil=True)
def _normalize_quat(q):
    n = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    for i in range(4):
        q[i] /= n
    if q[0] < 0:
        for i in range(4):
            q[i] = -q[i]


# ---------------------------------------------------------------------------
# signed distance to a convex-piece mesh


@njit(cache=True, nogil=True)
def _closest_on_triangle(px, py, pz, tv):
    """Closest point on triangle ``tv`` (3x3) to p (Ericson, RTCD 5.1.5)."""
    ax, ay, az = tv[0, 0], tv[0, 1], tv[0, 2]
    bx, by, bz = tv[1, 0], tv[1, 1], tv[1, 2]
    cx, cy, cz = tv[2, 0], tv[2, 1], tv[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0 and d2 <= 0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return ax + t * abx, ay + t * aby, az + t * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return ax + t * acx, ay + t * acy, az + t * acz
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + t * (cx - bx), by + t * (cy - by), bz + t * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True, nogil=True)
def body_sdf(px, py, pz, b, pos, rot, c_start, c_center, c_radius, c_tstart, t_v, t_n, t_d, cutoff):
    """Signed distance of world point p to rigid body ``b`` plus outward world normal.

    Components farther than ``cutoff`` are skipped; if every component is
    skipped the returned distance is ``inf``.
    """
    R = rot[b]
    dx = px - pos[b, 0]
    dy = py - pos[b, 1]
    dz = pz - pos[b, 2]
    # R^T (p - pos)
    lx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
    ly = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
    lz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
    best = np.inf
    bnx = 0.0
    bny = 0.0
    bnz = 1.0
    for c in range(c_start[b], c_start[b + 1]):
        ox = lx - c_center[c, 0]
        oy = ly - c_center[c, 1]
        oz = lz - c_center[c, 2]
        if math.sqrt(ox * ox + oy * oy + oz * oz) - c_radius[c] > min(cutoff, best):
            continue
        mx = -np.inf
        mi = -1
        for t in range(c_tstart[c], c_tstart[c + 1]):
            s = t_n[t, 0] * lx + t_n[t, 1] * ly + t_n[t, 2] * lz - t_d[t]
            if s > mx:
                mx = s
                mi = t
        if mx > min(cutoff, best):
            continue  # the largest plane value bounds the distance from below
        if mx <= 0.0:
            if mx < best:
                best = mx
                bnx, bny, bnz = t_n[mi, 0], t_n[mi, 1], t_n[mi, 2]
        else:
            dmin = np.inf
            qx = 0.0
            qy = 0.0
            qz = 0.0
            for t in range(c_tstart[c], c_tstart[c + 1]):
                cx, cy, cz = _closest_on_triangle(lx, ly, lz, t_v[t])
                d2 = (lx - cx) ** 2 + (ly - cy) ** 2 + (lz - cz) ** 2
                if d2 < dmin:
                    dmin = d2
                    qx, qy, qz = cx, cy, cz
            d = math.sqrt(dmin)
            if d < best:
                best = d
                if d > 1e-12:
                    bnx, bny, bnz = (lx - qx) / d, (ly - qy) / d, (lz - qz) / d
                else:
                    bnx, bny, bnz = t_n[mi, 0], t_n[mi, 1], t_n[mi, 2]
    wx = R[0, 0] * bnx + R[0, 1] * bny + R[0, 2] * bnz
    wy = R[1, 0] * bnx + R[1, 1] * bny + R[1, 2] * bnz
    wz = R[2, 0] * bnx + R[2, 1] * bny + R[2, 2] * bnz
    return best, wx, wy, wz


@njit(cache=True, nogil=True)
def rotations(quat):
    out = np.empty((quat.shape[0], 3, 3))
    for b in range(quat.shape[0]):
        quat_to_mat(quat[b], out[b])
    return out


# ---------------------------------------------------------------------------
# contact queries


@njit(cache=True, nogil=True)
def min_separation(pos, quat, ppos, prad, p_blob, s_start, s_local, b_radius,
                   c_start, c_center, c_radius, c_tstart, t_v, t_n, t_d,
                   obj_kind, obj_index, pairs, cutoff):
    """Minimum surface separation for each requested object pair.

    ``obj_kind[o]`` is 0 for a rigid body (``obj_index`` = body id) and 1 for
    a particle blob (``obj_index`` = blob id). Values beyond ``cutoff`` are
    reported as ``inf``.
    """
    rot = rotations(quat)
    out = np.full(pairs.shape[0], np.inf)
    for k in range(pairs.shape[0]):
        oa = pairs[k, 0]
        ob = pairs[k, 1]
        best = np.inf
        for side in range(2):
            o1 = oa if side == 0 else ob
            o2 = ob if side == 0 else oa
            if obj_kind[o2] != 0:
                continue
            b2 = obj_index[o2]
            if obj_kind[o1] == 0:
                b1 = obj_index[o1]
                dcx = pos[b1, 0] - pos[b2, 0]
                dcy = pos[b1, 1] - pos[b2, 1]
                dcz = pos[b1, 2] - pos[b2, 2]
                if math.sqrt(dcx * dcx + dcy * dcy + dcz * dcz) - b_radius[b1] - b_radius[b2] > cutoff:
                    continue
                R = rot[b1]
                for s in range(s_start[b1], s_start[b1 + 1]):
                    lx, ly, lz = s_local[s, 0], s_local[s, 1], s_local[s, 2]
                    px = R[0, 0] * lx + R[0, 1] * ly + R[0, 2] * lz + pos[b1, 0]
                    py = R[1, 0] * lx + R[1, 1] * ly + R[1, 2] * lz + pos[b1, 1]
                    pz = R[2, 0] * lx + R[2, 1] * ly + R[2, 2] * lz + pos[b1, 2]
                    d, _, _, _ = body_sdf(px, py, pz, b2, pos, rot, c_start, c_center, c_radius,
                                          c_tstart, t_v, t_n, t_d, min(cutoff, best))
                    if d < best:
                        best = d
            else:
                blob = obj_index[o1]
                for i in range(ppos.shape[0]):
                    if p_blob[i] != blob:
                        continue
                    d, _, _, _ = body_sdf(ppos[i, 0], ppos[i, 1], ppos[i, 2], b2, pos, rot, c_start,
                                          c_center, c_radius, c_tstart, t_v, t_n, t_d,
                                          min(cutoff, best) + prad[i])
                    d -= prad[i]
                    if d < best:
                        best = d
        if obj_kind[oa] == 1 and obj_kind[ob] == 1:
            ba = obj_index[oa]
            bb = obj_index[ob]
            for i in range(ppos.shape[0]):
                if p_blob[i] != ba:
                    continue
                for j in range(ppos.shape[0]):
                    if p_blob[j] != bb:
                        continue
                    d = math.sqrt((ppos[i, 0] - ppos[j, 0]) ** 2 + (ppos[i, 1] - ppos[j, 1]) ** 2
                                  + (ppos[i, 2] - ppos[j, 2]) ** 2) - prad[i] - prad[j]
                    if d < best:
                        best = d
        out[k] = best
    return out


# ---------------------------------------------------------------------------
# simulation step


@njit(cache=True, nogil=True)
def _add_contact(cbuf, ci, ncont, a, b, px, py, pz, nx, ny, nz, depth):
    if ncont >= cbuf.shape[0]:
        return ncont
    ci[ncont, 0] = a
    ci[ncont, 1] = b
    cbuf[ncont, 0] = px
    cbuf[ncont, 1] = py
    cbuf[ncont, 2] = pz
    cbuf[ncont, 3] = nx
    cbuf[ncont, 4] = ny
    cbuf[ncont, 5] = nz
    cbuf[ncont, 6] = depth
    return ncont + 1


@njit(cache=True, nogil=True)
def _apply(V, W, minv, iinv, X, a, px, py, pz, jx, jy, jz, sign):
    V[a, 0] += sign * (minv[a, 0, 0] * jx + minv[a, 0, 1] * jy + minv[a, 0, 2] * jz)
    V[a, 1] += sign * (minv[a, 1, 0] * jx + minv[a, 1, 1] * jy + minv[a, 1, 2] * jz)
    V[a, 2] += sign * (minv[a, 2, 0] * jx + minv[a, 2, 1] * jy + minv[a, 2, 2] * jz)
    if iinv[a] > 0.0:
        rx, ry, rz = px - X[a, 0], py - X[a, 1], pz - X[a, 2]
        tx, ty, tz = _cross(rx, ry, rz, jx, jy, jz)
        W[a, 0] += sign * iinv[a] * tx
        W[a, 1] += sign * iinv[a] * ty
        W[a, 2] += sign * iinv[a] * tz


@njit(cache=True, nogil=True)
def _point_velocity(V, W, X, a, px, py, pz):
    rx, ry, rz = px - X[a, 0], py - X[a, 1], pz - X[a, 2]
    cx, cy, cz = _cross(W[a, 0], W[a, 1], W[a, 2], rx, ry, rz)
    return V[a, 0] + cx, V[a, 1] + cy, V[a, 2] + cz


@njit(cache=True, nogil=True)
def _eff_inv_mass(minv, iinv, X, a, px, py, pz, nx, ny, nz):
    k = (nx * (minv[a, 0, 0] * nx + minv[a, 0, 1] * ny + minv[a, 0, 2] * nz)
         + ny * (minv[a, 1, 0] * nx + minv[a, 1, 1] * ny + minv[a, 1, 2] * nz)
         + nz * (minv[a, 2, 0] * nx + minv[a, 2, 1] * ny + minv[a, 2, 2] * nz))
    if iinv[a] > 0.0:
        rx, ry, rz = px - X[a, 0], py - X[a, 1], pz - X[a, 2]
        cx, cy, cz = _cross(rx, ry, rz, nx, ny, nz)
        k += iinv[a] * (cx * cx + cy * cy + cz * cz)
    return k


@njit(cache=True, nogil=True)
def _solve(V, W, minv, iinv, X, ci, cbuf, ncont, lam, tlam, targets, iters, mu):
    """PGS over contacts. With ``mu > 0`` each sweep also solves Coulomb
    friction on accumulated tangent impulses clamped to the cone."""
    for k in range(ncont):
        a = ci[k, 0]
        b = ci[k, 1]
        cbuf[k, 7] = (_eff_inv_mass(minv, iinv, X, a, cbuf[k, 0], cbuf[k, 1], cbuf[k, 2],
                                    cbuf[k, 3], cbuf[k, 4], cbuf[k, 5])
                      + _eff_inv_mass(minv, iinv, X, b, cbuf[k, 0], cbuf[k, 1], cbuf[k, 2],
                                      cbuf[k, 3], cbuf[k, 4], cbuf[k, 5]))
    for _ in range(iters):
        for k in range(ncont):
            kk = cbuf[k, 7]
            if kk < 1e-12:
                continue
            a = ci[k, 0]
            b = ci[k, 1]
            px, py, pz = cbuf[k, 0], cbuf[k, 1], cbuf[k, 2]
            nx, ny, nz = cbuf[k, 3], cbuf[k, 4], cbuf[k, 5]
            if kk < 1e-12:
                continue
            vax, vay, vaz = _point_velocity(V, W, X, a, px, py, pz)
            vbx, vby, vbz = _point_velocity(V, W, X, b, px, py, pz)
            vn = (vax - vbx) * nx + (vay - vby) * ny + (vaz - vbz) * nz
            new = max(0.0, lam[k] - (vn - targets[k]) / kk)
            d = new - lam[k]
            lam[k] = new
            if d != 0.0:
                _apply(V, W, minv, iinv, X, a, px, py, pz, d * nx, d * ny, d * nz, 1.0)
                _apply(V, W, minv, iinv, X, b, px, py, pz, d * nx, d * ny, d * nz, -1.0)
            if mu <= 0.0:
                continue
            vax, vay, vaz = _point_velocity(V, W, X, a, px, py, pz)
            vbx, vby, vbz = _point_velocity(V, W, X, b, px, py, pz)
            rx, ry, rz = vax - vbx, vay - vby, vaz - vbz
            vn = rx * nx + ry * ny + rz * nz
            tx, ty, tz = rx - vn * nx, ry - vn * ny, rz - vn * nz
            vt = math.sqrt(tx * tx + ty * ty + tz * tz)
            if vt < 1e-12:
                continue
            if iinv[a] == 0.0 and iinv[b] == 0.0 and minv[a, 0, 1] == 0.0 and minv[b, 0, 1] == 0.0 \
                    and minv[a, 0, 0] == minv[a, 1, 1] == minv[a, 2, 2] \
                    and minv[b, 0, 0] == minv[b, 1, 1] == minv[b, 2, 2]:
                kt = kk  # isotropic point masses
            else:
                kt = (_eff_inv_mass(minv, iinv, X, a, px, py, pz, tx / vt, ty / vt, tz / vt)
                      + _eff_inv_mass(minv, iinv, X, b, px, py, pz, tx / vt, ty / vt, tz / vt))
            if kt < 1e-12:
                continue
            jx = tlam[k, 0] - tx / kt
            jy = tlam[k, 1] - ty / kt
            jz = tlam[k, 2] - tz / kt
            jm = math.sqrt(jx * jx + jy * jy + jz * jz)
            cap = mu * lam[k]
            if jm > cap:
                s = cap / jm
                jx *= s
                jy *= s
                jz *= s
            dx = jx - tlam[k, 0]
            dy = jy - tlam[k, 1]
            dz = jz - tlam[k, 2]
            tlam[k, 0] = jx
            tlam[k, 1] = jy
            tlam[k, 2] = jz
            _apply(V, W, minv, iinv, X, a, px, py, pz, dx, dy, dz, 1.0)
            _apply(V, W, minv, iinv, X, b, px, py, pz, dx, dy, dz, -1.0)


@njit(cache=True, nogil=True)
def _pd_axis(x, v, target, kp, kd, vmax, dt):
    v = v + (kp * (target - x) - kd * v) * dt
    if v > vmax:
        v = vmax
    elif v < -vmax:
        v = -vmax
    return x + v * dt, v


@njit(cache=True, nogil=True)
def actuator_update(pos, quat, vel, angvel, b, mode, axis, pivot, limits, p0, q0,
                    tgt_p, tgt_q, kp, kd, vmax, wmax, dt):
    """Advance kinematic actuator ``b`` one step toward the commanded pose.

    mode 0: free 6-DoF PD; 1: prismatic along ``axis``; 2: hinge about
    ``axis`` through ``pivot``. Constrained modes project the target onto
    the joint coordinate and run the PD law in joint space.
    """
    tmp = np.empty(4)
    rv = np.empty(3)
    if mode == 0:
        ex = tgt_p[0] - pos[b, 0]
        ey = tgt_p[1] - pos[b, 1]
        ez = tgt_p[2] - pos[b, 2]
        vel[b, 0] += (kp * ex - kd * vel[b, 0]) * dt
        vel[b, 1] += (kp * ey - kd * vel[b, 1]) * dt
        vel[b, 2] += (kp * ez - kd * vel[b, 2]) * dt
        s = math.sqrt(vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
        if s > vmax:
            for i in range(3):
                vel[b, i] *= vmax / s
        for i in range(3):
            pos[b, i] += vel[b, i] * dt
        qc = np.empty(4)
        qc[0] = quat[b, 0]
        qc[1] = -quat[b, 1]
        qc[2] = -quat[b, 2]
        qc[3] = -quat[b, 3]
        quat_mul(tgt_q, qc, tmp)
        quat_to_rotvec(tmp, rv)
        for i in range(3):
            angvel[b, i] += (kp * rv[i] - kd * angvel[b, i]) * dt
        s = math.sqrt(angvel[b, 0] ** 2 + angvel[b, 1] ** 2 + angvel[b, 2] ** 2)
        if s > wmax:
            for i in range(3):
                angvel[b, i] *= wmax / s
        dq = np.empty(4)
        rotvec_to_quat(angvel[b, 0] * dt, angvel[b, 1] * dt, angvel[b, 2] * dt, dq)
        quat_mul(dq, quat[b], tmp)
        _normalize_quat(tmp)
        for i in range(4):
            quat[b, i] = tmp[i]
        return
    if mode == 1:
        s_cur = ((pos[b, 0] - p0[0]) * axis[0] + (pos[b, 1] - p0[1]) * axis[1]
                 + (pos[b, 2] - p0[2]) * axis[2])
        sd = vel[b, 0] * axis[0] + vel[b, 1] * axis[1] + vel[b, 2] * axis[2]
        s_tgt = ((tgt_p[0] - p0[0]) * axis[0] + (tgt_p[1] - p0[1]) * axis[1]
                 + (tgt_p[2] - p0[2]) * axis[2])
        s_tgt = min(max(s_tgt, limits[0]), limits[1])
        s_new, sd = _pd_axis(s_cur, sd, s_tgt, kp, kd, vmax, dt)
        s_new = min(max(s_new, limits[0]), limits[1])
        for i in range(3):
            pos[b, i] = p0[i] + s_new * axis[i]
            vel[b, i] = sd * axis[i]
            angvel[b, i] = 0.0
        return
    # hinge: joint angle = twist of (q q0^-1) about axis
    q0c = np.empty(4)
    q0c[0] = q0[0]
    q0c[1] = -q0[1]
    q0c[2] = -q0[2]
    q0c[3] = -q0[3]
    quat_mul(quat[b], q0c, tmp)
    th = 2.0 * math.atan2(tmp[1] * axis[0] + tmp[2] * axis[1] + tmp[3] * axis[2], tmp[0])
    quat_mul(tgt_q, q0c, tmp)
    th_t = 2.0 * math.atan2(tmp[1] * axis[0] + tmp[2] * axis[1] + tmp[3] * axis[2], tmp[0])
    th_t = min(max(th_t, limits[0]), limits[1])
    thd = angvel[b, 0] * axis[0] + angvel[b, 1] * axis[1] + angvel[b, 2] * axis[2]
    th_new, thd = _pd_axis(th, thd, th_t, kp, kd, wmax, dt)
    th_new = min(max(th_new, limits[0]), limits[1])
    dq = np.empty(4)
    rotvec_to_quat(axis[0] * th_new, axis[1] * th_new, axis[2] * th_new, dq)
    quat_mul(dq, q0, tmp)
    _normalize_quat(tmp)
    for i in range(4):
        quat[b, i] = tmp[i]
    R = np.empty((3, 3))
    quat_to_mat(dq, R)
    for i in range(3):
        off = R[i, 0] * (p0[0] - pivot[0]) + R[i, 1] * (p0[1] - pivot[1]) + R[i, 2] * (p0[2] - pivot[2])
        pos[b, i] = pivot[i] + off
        angvel[b, i] = thd * axis[i]
    # v = w x (pos - pivot)
    vx, vy, vz = _cross(angvel[b, 0], angvel[b, 1], angvel[b, 2],
                        pos[b, 0] - pivot[0], pos[b, 1] - pivot[1], pos[b, 2] - pivot[2])
    vel[b, 0] = vx
    vel[b, 1] = vy
    vel[b, 2] = vz


@njit(cache=True, nogil=True)
def simulate(pos, quat, vel, angvel, ppos, pvel, nsteps,
             # static rigid data
             kind, inv_mass, inv_inertia, lin_axis, lin_mode, hold, rest_pos, lin_limits,
             s_start, s_local, b_radius, c_start, c_center, c_radius, c_tstart, t_v, t_n, t_d,
             # particles
             prad, pinv_mass, pact, l_i, l_j, l_rest, l_k, l_c,
             # actuator
             act_body, act_mode, act_axis, act_pivot, act_limits, act_p0, act_q0,
             tgt_p, tgt_q, tgt_pv,
             # parameters
             gravity, dt, kp, kd, vmax, wmax, beta, slop, mu, iters):
    """Advance the state arrays in place by ``nsteps``.

    Returns -1 on success, otherwise the index of the first non-finite
    entity (rigid bodies first, then particles offset by the body count).
    """
    nb = pos.shape[0]
    npart = ppos.shape[0]
    n = nb + npart
    V = np.zeros((n, 3))
    W = np.zeros((n, 3))
    Vp = np.zeros((n, 3))
    Wp = np.zeros((n, 3))
    X = np.zeros((n, 3))
    minv = np.zeros((n, 3, 3))
    iinv = np.zeros(n)
    cbuf = np.zeros((MAX_CONTACTS, 8))
    ci = np.zeros((MAX_CONTACTS, 2), dtype=np.int64)
    lam = np.zeros(MAX_CONTACTS)
    tlam = np.zeros((MAX_CONTACTS, 3))
    targets = np.zeros(MAX_CONTACTS)
    dq = np.empty(4)
    tmp = np.empty(4)
    for step in range(nsteps):
        if act_body >= 0:
            actuator_update(pos, quat, vel, angvel, act_body, act_mode, act_axis, act_pivot,
                            act_limits, act_p0, act_q0, tgt_p, tgt_q, kp, kd, vmax, wmax, dt)
        rot = rotations(quat)
        # external forces
        for b in range(nb):
            if kind[b] == KIND_DYNAMIC and not hold[b]:
                for i in range(3):
                    vel[b, i] += gravity[i] * dt
        for p in range(npart):
            if pact[p]:
                for i in range(3):
                    pvel[p, i] = tgt_pv[i]
            else:
                for i in range(3):
                    pvel[p, i] += gravity[i] * dt
        for l in range(l_i.shape[0]):
            i = l_i[l]
            j = l_j[l]
            dx = ppos[j, 0] - ppos[i, 0]
            dy = ppos[j, 1] - ppos[i, 1]
            dz = ppos[j, 2] - ppos[i, 2]
            L = math.sqrt(dx * dx + dy * dy + dz * dz)
            if L < 1e-12:
                continue
            dx /= L
            dy /= L
            dz /= L
            rel = (pvel[j, 0] - pvel[i, 0]) * dx + (pvel[j, 1] - pvel[i, 1]) * dy + (pvel[j, 2] - pvel[i, 2]) * dz
            f = l_k[l] * (L - l_rest[l]) + l_c[l] * rel
            if not pact[i]:
                s = f * pinv_mass[i] * dt
                pvel[i, 0] += s * dx
                pvel[i, 1] += s * dy
                pvel[i, 2] += s * dz
            if not pact[j]:
                s = f * pinv_mass[j] * dt
                pvel[j, 0] -= s * dx
                pvel[j, 1] -= s * dy
                pvel[j, 2] -= s * dz
        # unified body table
        for b in range(nb):
            for i in range(3):
                V[b, i] = vel[b, i]
                W[b, i] = angvel[b, i]
                X[b, i] = pos[b, i]
                for j in range(3):
                    minv[b, i, j] = 0.0
            iinv[b] = 0.0
            if kind[b] == KIND_DYNAMIC:
                if lin_mode[b] == 1:
                    for i in range(3):
                        for j in range(3):
                            minv[b, i, j] = inv_mass[b] * lin_axis[b, i] * lin_axis[b, j]
                else:
                    for i in range(3):
                        minv[b, i, i] = inv_mass[b]
                    iinv[b] = inv_inertia[b]
        for p in range(npart):
            q = nb + p
            iinv[q] = 0.0
            for i in range(3):
                V[q, i] = pvel[p, i]
                W[q, i] = 0.0
                X[q, i] = ppos[p, i]
                for j in range(3):
                    minv[q, i, j] = 0.0
                if not pact[p]:
                    minv[q, i, i] = pinv_mass[p]
        # contact generation
        ncont = 0
        for a in range(nb):
            for b in range(a + 1, nb):
                if kind[a] != KIND_DYNAMIC and kind[b] != KIND_DYNAMIC:
                    continue
                dcx = pos[a, 0] - pos[b, 0]
                dcy = pos[a, 1] - pos[b, 1]
                dcz = pos[a, 2] - pos[b, 2]
                if math.sqrt(dcx * dcx + dcy * dcy + dcz * dcz) > b_radius[a] + b_radius[b]:
                    continue
                for side in range(2):
                    b1 = a if side == 0 else b
                    b2 = b if side == 0 else a
                    R = rot[b1]
                    for s in range(s_start[b1], s_start[b1 + 1]):
                        lx, ly, lz = s_local[s, 0], s_local[s, 1], s_local[s, 2]
                        px = R[0, 0] * lx + R[0, 1] * ly + R[0, 2] * lz + pos[b1, 0]
                        py = R[1, 0] * lx + R[1, 1] * ly + R[1, 2] * lz + pos[b1, 1]
                        pz = R[2, 0] * lx + R[2, 1] * ly + R[2, 2] * lz + pos[b1, 2]
                        d, nx, ny, nz = body_sdf(px, py, pz, b2, pos, rot, c_start, c_center, c_radius,
                                                 c_tstart, t_v, t_n, t_d, 0.0)
                        if d < 0.0:
                            ncont = _add_contact(cbuf, ci, ncont, b1, b2, px, py, pz, nx, ny, nz, -d)
        for p in range(npart):
            q = nb + p
            for b in range(nb):
                if pact[p] and kind[b] != KIND_DYNAMIC:
                    continue
                d, nx, ny, nz = body_sdf(ppos[p, 0], ppos[p, 1], ppos[p, 2], b, pos, rot, c_start,
                                         c_center, c_radius, c_tstart, t_v, t_n, t_d, prad[p])
                d -= prad[p]
                if d < 0.0:
                    ncont = _add_contact(cbuf, ci, ncont, q, b, ppos[p, 0] - nx * prad[p],
                                         ppos[p, 1] - ny * prad[p], ppos[p, 2] - nz * prad[p],
                                         nx, ny, nz, -d)
        for p in range(npart):
            for r in range(p + 1, npart):
                if pact[p] and pact[r]:
                    continue
                dx = ppos[p, 0] - ppos[r, 0]
                dy = ppos[p, 1] - ppos[r, 1]
                dz = ppos[p, 2] - ppos[r, 2]
                rr = prad[p] + prad[r]
                if abs(dx) > rr or abs(dy) > rr or abs(dz) > rr:
                    continue
                L = math.sqrt(dx * dx + dy * dy + dz * dz)
                if L >= rr:
                    continue
                if L > 1e-12:
                    nx, ny, nz = dx / L, dy / L, dz / L
                else:
                    nx, ny, nz = 0.0, 0.0, 1.0
                ncont = _add_contact(cbuf, ci, ncont, nb + p, nb + r, ppos[r, 0] + nx * prad[r],
                                     ppos[r, 1] + ny * prad[r], ppos[r, 2] + nz * prad[r],
                                     nx, ny, nz, rr - L)
        # velocity solve, then split-impulse position solve on pseudo velocities
        for k in range(ncont):
            lam[k] = 0.0
            targets[k] = 0.0
            for i in range(3):
                tlam[k, i] = 0.0
        _solve(V, W, minv, iinv, X, ci, cbuf, ncont, lam, tlam, targets, iters, mu)
        for q in range(n):
            for i in range(3):
                Vp[q, i] = 0.0
                Wp[q, i] = 0.0
        for k in range(ncont):
            lam[k] = 0.0
            targets[k] = beta * max(cbuf[k, 6] - slop, 0.0) / dt
        _solve(Vp, Wp, minv, iinv, X, ci, cbuf, ncont, lam, tlam, targets, iters, 0.0)
        # integrate
        for b in range(nb):
            if kind[b] != KIND_DYNAMIC:
                continue
            if lin_mode[b] == 1:
                s = V[b, 0] * lin_axis[b, 0] + V[b, 1] * lin_axis[b, 1] + V[b, 2] * lin_axis[b, 2]
                sp = Vp[b, 0] * lin_axis[b, 0] + Vp[b, 1] * lin_axis[b, 1] + Vp[b, 2] * lin_axis[b, 2]
                off = ((pos[b, 0] - rest_pos[b, 0]) * lin_axis[b, 0] + (pos[b, 1] - rest_pos[b, 1]) * lin_axis[b, 1]
                       + (pos[b, 2] - rest_pos[b, 2]) * lin_axis[b, 2])
                new = min(max(off + (s + sp) * dt, lin_limits[b, 0]), lin_limits[b, 1])
                if new == lin_limits[b, 0] or new == lin_limits[b, 1]:
                    s = 0.0
                for i in range(3):
                    pos[b, i] = rest_pos[b, i] + new * lin_axis[b, i]
                    vel[b, i] = 0.0 if hold[b] else s * lin_axis[b, i]
                    angvel[b, i] = 0.0
                continue
            for i in range(3):
                pos[b, i] += (V[b, i] + Vp[b, i]) * dt
                vel[b, i] = 0.0 if hold[b] else V[b, i]
                angvel[b, i] = 0.0 if hold[b] else W[b, i]
            rotvec_to_quat((W[b, 0] + Wp[b, 0]) * dt, (W[b, 1] + Wp[b, 1]) * dt,
                           (W[b, 2] + Wp[b, 2]) * dt, dq)
            quat_mul(dq, quat[b], tmp)
            _normalize_quat(tmp)
            for i in range(4):
                quat[b, i] = tmp[i]
        for p in range(npart):
            q = nb + p
            for i in range(3):
                ppos[p, i] += (V[q, i] + Vp[q, i]) * dt
                pvel[p, i] = V[q, i]
        for b in range(nb):
            for i in range(3):
                if not (math.isfinite(pos[b, i]) and math.isfinite(vel[b, i]) and math.isfinite(angvel[b, i])):
                    return b
        for p in range(npart):
            for i in range(3):
                if not (math.isfinite(ppos[p, i]) and math.isfinite(pvel[p, i])):
                    return nb + p
    return -1
