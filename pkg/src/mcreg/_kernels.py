"""Compiled inner loops: depth buffer and the fused linearization pass.

Cue codes: 0 intensity, 1 depth, 2 range, 3 normal.
Projection codes: 0 pinhole, 1 spherical.
"""

import math

import numpy as np
from numba import njit

INTENSITY, DEPTH, RANGE, NORMAL = 0, 1, 2, 3
PINHOLE, SPHERICAL = 0, 1


@njit(cache=True, nogil=True)
def _project(model, fx, fy, cx, cy, W, H, gmin, gmax, x, y, z):
    if model == PINHOLE:
        if z <= 0.0:
            return 0.0, 0.0, z, False
        u = fx * x / z + cx
        v = fy * y / z + cy
        g = z
    else:
        g = math.sqrt(x * x + y * y + z * z)
        if g <= 0.0:
            return 0.0, 0.0, g, False
        u = fx * math.atan2(y, x) + cx
        v = fy * math.atan2(z, math.sqrt(x * x + y * y)) + cy
    ok = g >= gmin and g <= gmax and u >= 0.0 and u < W and v >= 0.0 and v < H
    return u, v, g, ok


@njit(cache=True, nogil=True)
def zbuffer(points, R, t, model, fx, fy, cx, cy, W, H, gmin, gmax, depth, index):
    """Strict less-than depth buffer; the earliest point wins ties.

    ``depth`` must be filled with inf and ``index`` with -1 by the caller.
    """
    n = points.shape[0]
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        u, v, g, ok = _project(model, fx, fy, cx, cy, W, H, gmin, gmax, x, y, z)
        if not ok:
            continue
        cu = min(int(u + 0.5), W - 1)
        cv = min(int(v + 0.5), H - 1)
        if g < depth[cv, cu]:
            depth[cv, cu] = g
            index[cv, cu] = i


@njit(cache=True, nogil=True)
def linearize(idx, positions, intensity, normals, R, t,
              model, fx, fy, cx, cy, W, H, gmin, gmax,
              vg, cellok, kinds, offsets, sqrt_omegas,
              kernel_threshold, Hout, bout, chi2_out, used_out):
    """Accumulate the weighted normal equations over the points ``idx``.

    ``vg[v, u, ch]`` holds (value, d/du, d/dv) per channel column;
    ``cellok[v, u, c]`` says whether the 2x2 cell with top-left pixel
    ``(u, v)`` has valid values and gradients for cue ``c`` (the last entry:
    for any cue). ``sqrt_omegas[c]`` is upper triangular with
    ``S^T S = Omega_c``; each term is whitened to rows of ``S J`` and
    residuals ``S e``.

    ``Hout`` / ``bout`` receive ``sum w J^T O J`` and ``-sum w J^T O e``.
    ``chi2_out[k]`` is the point's total chi2 over usable terms and
    ``used_out[k]`` the number of usable terms (0 = point skipped).
    """
    nc = kinds.shape[0]
    rows = np.zeros((3 * nc, 6))
    res = np.zeros(3 * nc)
    h00 = h01 = h02 = h03 = h04 = h05 = h11 = h12 = h13 = h14 = h15 = 0.0
    h22 = h23 = h24 = h25 = h33 = h34 = h35 = h44 = h45 = h55 = 0.0
    b0 = b1 = b2 = b3 = b4 = b5 = 0.0
    for k in range(idx.shape[0]):
        i = idx[k]
        chi2_out[k] = 0.0
        used_out[k] = 0
        px = positions[i, 0]
        py = positions[i, 1]
        pz = positions[i, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        if model == PINHOLE:
            if z <= 0.0:
                continue
            iz = 1.0 / z
            u = fx * x * iz + cx
            v = fy * y * iz + cy
            g = z
        else:
            g = math.sqrt(x * x + y * y + z * z)
            if g <= 0.0:
                continue
            u = fx * math.atan2(y, x) + cx
            v = fy * math.atan2(z, math.sqrt(x * x + y * y)) + cy
        if not (g >= gmin and g <= gmax and u >= 0.0 and u <= W - 1 and v >= 0.0 and v <= H - 1):
            continue
        u0 = min(int(u), W - 2)
        v0 = min(int(v), H - 2)
        if not cellok[v0, u0, nc]:
            continue
        if model == PINHOLE:
            j00 = fx * iz
            j01 = 0.0
            j02 = -fx * x * iz * iz
            j10 = 0.0
            j11 = fy * iz
            j12 = -fy * y * iz * iz
        else:
            a2sq = x * x + y * y
            if a2sq <= 0.0:
                continue
            a2 = math.sqrt(a2sq)
            r2 = a2sq + z * z
            j00 = -y / a2sq * fx
            j01 = x / a2sq * fx
            j02 = 0.0
            j10 = -x * z / a2 / r2 * fy
            j11 = -y * z / a2 / r2 * fy
            j12 = a2 / r2 * fy
        # A = J_proj [I | -skew(q)]
        a03 = -j01 * z + j02 * y
        a04 = j00 * z - j02 * x
        a05 = -j00 * y + j01 * x
        a13 = -j11 * z + j12 * y
        a14 = j10 * z - j12 * x
        a15 = -j10 * y + j11 * x
        a = u - u0
        b = v - v0
        w00 = (1.0 - a) * (1.0 - b)
        w01 = a * (1.0 - b)
        w10 = (1.0 - a) * b
        w11 = a * b
        nrows = 0
        nused = 0
        for c in range(nc):
            if not cellok[v0, u0, c]:
                continue
            kind = kinds[c]
            dim = 1
            m0 = 0.0
            m1 = 0.0
            m2 = 0.0
            m3 = 0.0
            m4 = 0.0
            m5 = 0.0
            if kind == INTENSITY:
                pred = intensity[i]
                if math.isnan(pred):
                    continue
            elif kind == DEPTH:
                pred = z
                m2 = 1.0
                m3 = y
                m4 = -x
            elif kind == RANGE:
                if g <= 1e-6:
                    continue
                pred = g
                m0 = x / g
                m1 = y / g
                m2 = z / g
            else:
                if math.isnan(normals[i, 0]):
                    continue
                dim = 3
            off = offsets[c]
            if dim == 1:
                meas = (w00 * vg[v0, u0, off, 0] + w01 * vg[v0, u0 + 1, off, 0]
                        + w10 * vg[v0 + 1, u0, off, 0] + w11 * vg[v0 + 1, u0 + 1, off, 0])
                gu = (w00 * vg[v0, u0, off, 1] + w01 * vg[v0, u0 + 1, off, 1]
                      + w10 * vg[v0 + 1, u0, off, 1] + w11 * vg[v0 + 1, u0 + 1, off, 1])
                gv = (w00 * vg[v0, u0, off, 2] + w01 * vg[v0, u0 + 1, off, 2]
                      + w10 * vg[v0 + 1, u0, off, 2] + w11 * vg[v0 + 1, u0 + 1, off, 2])
                s = sqrt_omegas[c, 0, 0]
                res[nrows] = s * (pred - meas)
                rows[nrows, 0] = s * (m0 - gu * j00 - gv * j10)
                rows[nrows, 1] = s * (m1 - gu * j01 - gv * j11)
                rows[nrows, 2] = s * (m2 - gu * j02 - gv * j12)
                rows[nrows, 3] = s * (m3 - gu * a03 - gv * a13)
                rows[nrows, 4] = s * (m4 - gu * a04 - gv * a14)
                rows[nrows, 5] = s * (m5 - gu * a05 - gv * a15)
                nrows += 1
            else:
                nx = normals[i, 0]
                ny = normals[i, 1]
                nz = normals[i, 2]
                rn0 = R[0, 0] * nx + R[0, 1] * ny + R[0, 2] * nz
                rn1 = R[1, 0] * nx + R[1, 1] * ny + R[1, 2] * nz
                rn2 = R[2, 0] * nx + R[2, 1] * ny + R[2, 2] * nz
                for r in range(3):
                    ch = off + r
                    meas = (w00 * vg[v0, u0, ch, 0] + w01 * vg[v0, u0 + 1, ch, 0]
                            + w10 * vg[v0 + 1, u0, ch, 0] + w11 * vg[v0 + 1, u0 + 1, ch, 0])
                    gu = (w00 * vg[v0, u0, ch, 1] + w01 * vg[v0, u0 + 1, ch, 1]
                          + w10 * vg[v0 + 1, u0, ch, 1] + w11 * vg[v0 + 1, u0 + 1, ch, 1])
                    gv = (w00 * vg[v0, u0, ch, 2] + w01 * vg[v0, u0 + 1, ch, 2]
                          + w10 * vg[v0 + 1, u0, ch, 2] + w11 * vg[v0 + 1, u0 + 1, ch, 2])
                    # map Jacobian of R n is -skew(R n) on the rotation part
                    n = nrows + r
                    if r == 0:
                        res[n] = rn0 - meas
                        m3, m4, m5 = 0.0, rn2, -rn1
                    elif r == 1:
                        res[n] = rn1 - meas
                        m3, m4, m5 = -rn2, 0.0, rn0
                    else:
                        res[n] = rn2 - meas
                        m3, m4, m5 = rn1, -rn0, 0.0
                    rows[n, 0] = -gu * j00 - gv * j10
                    rows[n, 1] = -gu * j01 - gv * j11
                    rows[n, 2] = -gu * j02 - gv * j12
                    rows[n, 3] = m3 - gu * a03 - gv * a13
                    rows[n, 4] = m4 - gu * a04 - gv * a14
                    rows[n, 5] = m5 - gu * a05 - gv * a15
                # whiten in place with the upper-triangular S (S^T S = Omega);
                # row r only reads rows q >= r, which are still unwhitened
                for r in range(3):
                    n = nrows + r
                    s = sqrt_omegas[c, r, r]
                    res[n] *= s
                    for col in range(6):
                        rows[n, col] *= s
                    for q in range(r + 1, 3):
                        s = sqrt_omegas[c, r, q]
                        if s != 0.0:
                            res[n] += s * res[nrows + q]
                            for col in range(6):
                                rows[n, col] += s * rows[nrows + q, col]
                nrows += 3
            nused += 1
        if nused == 0:
            continue
        chi2 = 0.0
        for r in range(nrows):
            chi2 += res[r] * res[r]
        chi2_out[k] = chi2
        used_out[k] = nused
        w = 1.0 if chi2 <= kernel_threshold else kernel_threshold / chi2
        # H and b accumulate in scalars; spelled out so they stay in registers
        for r in range(nrows):
            r0 = rows[r, 0]
            r1 = rows[r, 1]
            r2 = rows[r, 2]
            r3 = rows[r, 3]
            r4 = rows[r, 4]
            r5 = rows[r, 5]
            er = res[r]
            wr = w * r0
            b0 -= wr * er
            h00 += wr * r0
            h01 += wr * r1
            h02 += wr * r2
            h03 += wr * r3
            h04 += wr * r4
            h05 += wr * r5
            wr = w * r1
            b1 -= wr * er
            h11 += wr * r1
            h12 += wr * r2
            h13 += wr * r3
            h14 += wr * r4
            h15 += wr * r5
            wr = w * r2
            b2 -= wr * er
            h22 += wr * r2
            h23 += wr * r3
            h24 += wr * r4
            h25 += wr * r5
            wr = w * r3
            b3 -= wr * er
            h33 += wr * r3
            h34 += wr * r4
            h35 += wr * r5
            wr = w * r4
            b4 -= wr * er
            h44 += wr * r4
            h45 += wr * r5
            wr = w * r5
            b5 -= wr * er
            h55 += wr * r5
    Hout[0, 0] += h00
    Hout[0, 1] += h01
    Hout[1, 0] += h01
    Hout[0, 2] += h02
    Hout[2, 0] += h02
    Hout[0, 3] += h03
    Hout[3, 0] += h03
    Hout[0, 4] += h04
    Hout[4, 0] += h04
    Hout[0, 5] += h05
    Hout[5, 0] += h05
    Hout[1, 1] += h11
    Hout[1, 2] += h12
    Hout[2, 1] += h12
    Hout[1, 3] += h13
    Hout[3, 1] += h13
    Hout[1, 4] += h14
    Hout[4, 1] += h14
    Hout[1, 5] += h15
    Hout[5, 1] += h15
    Hout[2, 2] += h22
    Hout[2, 3] += h23
    Hout[3, 2] += h23
    Hout[2, 4] += h24
    Hout[4, 2] += h24
    Hout[2, 5] += h25
    Hout[5, 2] += h25
    Hout[3, 3] += h33
    Hout[3, 4] += h34
    Hout[4, 3] += h34
    Hout[3, 5] += h35
    Hout[5, 3] += h35
    Hout[4, 4] += h44
    Hout[4, 5] += h45
    Hout[5, 4] += h45
    Hout[5, 5] += h55
    bout[0] += b0
    bout[1] += b1
    bout[2] += b2
    bout[3] += b3
    bout[4] += b4
    bout[5] += b5
