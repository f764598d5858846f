# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: FK chain frames, capsule distances, control ticks.

Mirror of crane_sim._kernels.pure, operation for operation, so the two
backends return bit-identical doubles.  Keep both files in sync.
"""

from libc.math cimport cos, sin, sqrt, floor, INFINITY

BACKEND_NAME = "compiled"

cdef int F_CARRIAGE_C = 0
cdef int F_MOUNT_C = 3
cdef int F_ELBOW1_C = 6
cdef int F_ELBOW2_C = 9
cdef int F_ARMEND_C = 12
cdef int F_HUB_C = 15
cdef int F_TIP_C = 18
cdef int F_AXIS5_C = 21
cdef int F_AXIS6_C = 24
cdef int F_AXIS7_C = 27
cdef int F_NEEDLE_C = 30

F_CARRIAGE = F_CARRIAGE_C
F_MOUNT = F_MOUNT_C
F_ELBOW1 = F_ELBOW1_C
F_ELBOW2 = F_ELBOW2_C
F_ARMEND = F_ARMEND_C
F_HUB = F_HUB_C
F_TIP = F_TIP_C
F_AXIS5 = F_AXIS5_C
F_AXIS6 = F_AXIS6_C
F_AXIS7 = F_AXIS7_C
F_NEEDLE = F_NEEDLE_C
FRAMES_LEN = 33
N_LINK_CAPSULES = 5


def chain_frames(double[::1] q, double[::1] params, double[::1] out):
    cdef double L0 = params[0]
    cdef double L1 = params[1]
    cdef double L2 = params[2]
    cdef double L3 = params[3]
    cdef double d0 = params[4]

    cdef double ox = q[0]
    cdef double oy = q[1]
    cdef double oz = q[2]
    out[F_CARRIAGE_C] = ox
    out[F_CARRIAGE_C + 1] = oy
    out[F_CARRIAGE_C + 2] = oz

    cdef double c4 = cos(q[3])
    cdef double s4 = sin(q[3])
    cdef double r0x = c4, r0y = s4, r0z = 0.0
    cdef double r1x = -s4, r1y = c4, r1z = 0.0
    cdef double r2x = 0.0, r2y = 0.0, r2z = 1.0
    cdef double t0x, t0y, t0z, t1x, t1y, t1z, t2x, t2y, t2z

    ox = ox + L0 * r2x
    oy = oy + L0 * r2y
    oz = oz + L0 * r2z
    out[F_MOUNT_C] = ox
    out[F_MOUNT_C + 1] = oy
    out[F_MOUNT_C + 2] = oz

    cdef double c5 = cos(q[4])
    cdef double s5 = sin(q[4])
    t1x = r1x * c5 + r2x * s5
    t1y = r1y * c5 + r2y * s5
    t1z = r1z * c5 + r2z * s5
    t2x = r2x * c5 - r1x * s5
    t2y = r2y * c5 - r1y * s5
    t2z = r2z * c5 - r1z * s5
    r1x = t1x; r1y = t1y; r1z = t1z
    r2x = t2x; r2y = t2y; r2z = t2z
    out[F_AXIS5_C] = r0x
    out[F_AXIS5_C + 1] = r0y
    out[F_AXIS5_C + 2] = r0z

    ox = ox + L1 * r2x
    oy = oy + L1 * r2y
    oz = oz + L1 * r2z
    out[F_ELBOW1_C] = ox
    out[F_ELBOW1_C + 1] = oy
    out[F_ELBOW1_C + 2] = oz

    cdef double c6 = cos(q[5])
    cdef double s6 = sin(q[5])
    t0x = r0x * c6 - r2x * s6
    t0y = r0y * c6 - r2y * s6
    t0z = r0z * c6 - r2z * s6
    t2x = r2x * c6 + r0x * s6
    t2y = r2y * c6 + r0y * s6
    t2z = r2z * c6 + r0z * s6
    r0x = t0x; r0y = t0y; r0z = t0z
    r2x = t2x; r2y = t2y; r2z = t2z
    out[F_AXIS6_C] = r1x
    out[F_AXIS6_C + 1] = r1y
    out[F_AXIS6_C + 2] = r1z

    ox = ox + L2 * r2x
    oy = oy + L2 * r2y
    oz = oz + L2 * r2z
    out[F_ELBOW2_C] = ox
    out[F_ELBOW2_C + 1] = oy
    out[F_ELBOW2_C + 2] = oz

    cdef double c7 = cos(q[6])
    cdef double s7 = sin(q[6])
    t1x = r1x * c7 + r2x * s7
    t1y = r1y * c7 + r2y * s7
    t1z = r1z * c7 + r2z * s7
    t2x = r2x * c7 - r1x * s7
    t2y = r2y * c7 - r1y * s7
    t2z = r2z * c7 - r1z * s7
    r1x = t1x; r1y = t1y; r1z = t1z
    r2x = t2x; r2y = t2y; r2z = t2z
    out[F_AXIS7_C] = r0x
    out[F_AXIS7_C + 1] = r0y
    out[F_AXIS7_C + 2] = r0z

    ox = ox + L3 * r2x
    oy = oy + L3 * r2y
    oz = oz + L3 * r2z
    out[F_ARMEND_C] = ox
    out[F_ARMEND_C + 1] = oy
    out[F_ARMEND_C + 2] = oz

    cdef double hx = ox + d0 * r2x
    cdef double hy = oy + d0 * r2y
    cdef double hz = oz + d0 * r2z
    out[F_HUB_C] = hx
    out[F_HUB_C + 1] = hy
    out[F_HUB_C + 2] = hz

    cdef double q8 = q[7]
    out[F_TIP_C] = hx + q8 * r2x
    out[F_TIP_C + 1] = hy + q8 * r2y
    out[F_TIP_C + 2] = hz + q8 * r2z

    out[F_NEEDLE_C] = r2x
    out[F_NEEDLE_C + 1] = r2y
    out[F_NEEDLE_C + 2] = r2z


cdef inline double _clamp01(double x) nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


cdef double _seg_seg(double ax, double ay, double az,
                     double bx, double by, double bz,
                     double cx, double cy, double cz,
                     double dx, double dy, double dz) nogil:
    cdef double d1x = bx - ax
    cdef double d1y = by - ay
    cdef double d1z = bz - az
    cdef double d2x = dx - cx
    cdef double d2y = dy - cy
    cdef double d2z = dz - cz
    cdef double rx = ax - cx
    cdef double ry = ay - cy
    cdef double rz = az - cz

    cdef double aa = d1x * d1x + d1y * d1y + d1z * d1z
    cdef double ee = d2x * d2x + d2y * d2y + d2z * d2z
    cdef double ff = d2x * rx + d2y * ry + d2z * rz
    cdef double s, t, cc, bb, denom

    if aa <= 1e-30 and ee <= 1e-30:
        return sqrt(rx * rx + ry * ry + rz * rz)
    if aa <= 1e-30:
        s = 0.0
        t = _clamp01(ff / ee)
    else:
        cc = d1x * rx + d1y * ry + d1z * rz
        if ee <= 1e-30:
            t = 0.0
            s = _clamp01(-cc / aa)
        else:
            bb = d1x * d2x + d1y * d2y + d1z * d2z
            denom = aa * ee - bb * bb
            if denom > 0.0:
                s = _clamp01((bb * ff - cc * ee) / denom)
            else:
                s = 0.0
            t = (bb * s + ff) / ee
            if t < 0.0:
                t = 0.0
                s = _clamp01(-cc / aa)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((bb - cc) / aa)

    cdef double px = rx + d1x * s - d2x * t
    cdef double py = ry + d1y * s - d2y * t
    cdef double pz = rz + d1z * s - d2z * t
    return sqrt(px * px + py * py + pz * pz)


def seg_seg_distance(double[::1] a, double[::1] b, double[::1] c, double[::1] d):
    return _seg_seg(a[0], a[1], a[2], b[0], b[1], b[2],
                    c[0], c[1], c[2], d[0], d[1], d[2])


cdef inline double _radial(double px, double py, double pz, double[::1] bore) nogil:
    cdef double wx = px - bore[0]
    cdef double wy = py - bore[1]
    cdef double wz = pz - bore[2]
    cdef double proj = wx * bore[3] + wy * bore[4] + wz * bore[5]
    cdef double vx = wx - proj * bore[3]
    cdef double vy = wy - proj * bore[4]
    cdef double vz = wz - proj * bore[5]
    return sqrt(vx * vx + vy * vy + vz * vz)


cdef int[5] _CAP_A = [F_CARRIAGE_C, F_MOUNT_C, F_ELBOW1_C, F_ELBOW2_C, F_ARMEND_C]
cdef int[5] _CAP_B = [F_MOUNT_C, F_ELBOW1_C, F_ELBOW2_C, F_ARMEND_C, F_HUB_C]


def min_clearance(double[::1] frames, double[::1] radii,
                  double[::1] obstacles, int n_obs,
                  double[::1] bore, double needle_len):
    cdef double best = INFINITY
    cdef double bore_r = bore[6]
    cdef int i, j, ia, ib, o
    cdef double ri, ax, ay, az, bx, by, bz, da, db, dmax, c, dist
    cdef double hx, hy, hz, tx, ty, tz, ex, ey, ez, full, f

    for i in range(5):
        ia = _CAP_A[i]
        ib = _CAP_B[i]
        ri = radii[i]
        ax = frames[ia]
        ay = frames[ia + 1]
        az = frames[ia + 2]
        bx = frames[ib]
        by = frames[ib + 1]
        bz = frames[ib + 2]
        da = _radial(ax, ay, az, bore)
        db = _radial(bx, by, bz, bore)
        dmax = da if da > db else db
        c = bore_r - dmax - ri
        if c < best:
            best = c
        for j in range(n_obs):
            o = 7 * j
            dist = _seg_seg(ax, ay, az, bx, by, bz,
                            obstacles[o], obstacles[o + 1], obstacles[o + 2],
                            obstacles[o + 3], obstacles[o + 4], obstacles[o + 5])
            c = dist - ri - obstacles[o + 6]
            if c < best:
                best = c

    if needle_len != 0.0:
        hx = frames[F_HUB_C]
        hy = frames[F_HUB_C + 1]
        hz = frames[F_HUB_C + 2]
        tx = frames[F_TIP_C]
        ty = frames[F_TIP_C + 1]
        tz = frames[F_TIP_C + 2]
        if needle_len > 0.0:
            ex = tx - hx
            ey = ty - hy
            ez = tz - hz
            full = sqrt(ex * ex + ey * ey + ez * ez)
            if full > needle_len:
                f = needle_len / full
                tx = hx + f * ex
                ty = hy + f * ey
                tz = hz + f * ez
        da = _radial(hx, hy, hz, bore)
        db = _radial(tx, ty, tz, bore)
        dmax = da if da > db else db
        c = bore_r - dmax
        if c < best:
            best = c
        for j in range(n_obs):
            o = 7 * j
            dist = _seg_seg(hx, hy, hz, tx, ty, tz,
                            obstacles[o], obstacles[o + 1], obstacles[o + 2],
                            obstacles[o + 3], obstacles[o + 4], obstacles[o + 5])
            c = dist - obstacles[o + 6]
            if c < best:
                best = c

    return best


def joint_tick(double[::1] x, double[::1] v, double[::1] integ,
               double[::1] prev_meas, double[::1] setp,
               double[::1] kp, double[::1] ki, double[::1] kd,
               double[::1] i_clamp, double[::1] u_clamp,
               double[::1] inertia, double[::1] friction,
               double[::1] eff_max, double[::1] enc_res,
               double dt, int substeps, bint enabled, bint have_prev,
               double[::1] eff_out, double[::1] meas_out):
    cdef int n = x.shape[0]
    cdef double h = dt / substeps
    cdef int i, k
    cdef double res, meas, e, dterm, cand, u, eff, xi, vi, inert, fric

    for i in range(n):
        res = enc_res[i]
        meas = floor(x[i] / res) * res
        meas_out[i] = meas
        if enabled:
            e = setp[i] - meas
            if have_prev:
                dterm = -kd[i] * ((meas - prev_meas[i]) / dt)
            else:
                dterm = 0.0
            cand = integ[i] + e * dt
            if cand > i_clamp[i]:
                cand = i_clamp[i]
            elif cand < -i_clamp[i]:
                cand = -i_clamp[i]
            u = kp[i] * e + ki[i] * cand + dterm
            if (u > u_clamp[i] and e > 0.0) or (u < -u_clamp[i] and e < 0.0):
                u = kp[i] * e + ki[i] * integ[i] + dterm
            else:
                integ[i] = cand
            if u > u_clamp[i]:
                u = u_clamp[i]
            elif u < -u_clamp[i]:
                u = -u_clamp[i]
        else:
            u = 0.0
            integ[i] = 0.0
        prev_meas[i] = meas
        eff = u
        if eff > eff_max[i]:
            eff = eff_max[i]
        elif eff < -eff_max[i]:
            eff = -eff_max[i]
        eff_out[i] = eff
        xi = x[i]
        vi = v[i]
        inert = inertia[i]
        fric = friction[i]
        for k in range(substeps):
            vi = vi + h * (eff - fric * vi) / inert
            xi = xi + h * vi
        x[i] = xi
        v[i] = vi
