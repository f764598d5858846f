"""Pure-Python kernels: FK chain frames, capsule distances, control ticks.

This is the fallback backend for crane_sim._kernels and the reference the
compiled backend is checked against.  Both backends use plain IEEE double
arithmetic in the same operation order, so results agree bit for bit.

All vector arguments are flat float64 buffers (numpy arrays in practice).
"""

import math

BACKEND_NAME = "pure"

# chain_frames output layout: 11 consecutive 3-vectors.
F_CARRIAGE = 0   # back-end carriage origin (after the X-Y-Z stage)
F_MOUNT = 3      # arm mount point (after trunnion roll + L0 offset)
F_ELBOW1 = 6     # end of link 1
F_ELBOW2 = 9     # end of link 2
F_ARMEND = 12    # end of link 3 (insertion stage mount)
F_HUB = 15       # needle hub (stage front at zero insertion)
F_TIP = 18       # needle tip
F_AXIS5 = 21     # world-frame joint axes for the three arm revolutes
F_AXIS6 = 24
F_AXIS7 = 27
F_NEEDLE = 30    # needle direction u (unit)
FRAMES_LEN = 33


def chain_frames(q, params, out):
    """Evaluate the serial chain, writing all frame data into out[0:33].

    q: 8 joint values; params: (L0, L1, L2, L3, d0).
    Chain: Tx(q1) Ty(q2) Tz(q3) Rz(q4) Tz(L0) Rx(q5) Tz(L1) Ry(q6)
           Tz(L2) Rx(q7) Tz(L3 + d0 + q8), needle along final +Z.
    """
    L0 = params[0]
    L1 = params[1]
    L2 = params[2]
    L3 = params[3]
    d0 = params[4]

    ox = q[0]
    oy = q[1]
    oz = q[2]
    out[F_CARRIAGE] = ox
    out[F_CARRIAGE + 1] = oy
    out[F_CARRIAGE + 2] = oz

    # R = Rz(q4), held as three column vectors.
    c4 = math.cos(q[3])
    s4 = math.sin(q[3])
    r0x = c4
    r0y = s4
    r0z = 0.0
    r1x = -s4
    r1y = c4
    r1z = 0.0
    r2x = 0.0
    r2y = 0.0
    r2z = 1.0

    ox = ox + L0 * r2x
    oy = oy + L0 * r2y
    oz = oz + L0 * r2z
    out[F_MOUNT] = ox
    out[F_MOUNT + 1] = oy
    out[F_MOUNT + 2] = oz

    # R <- R * Rx(q5); local x column is the joint-5 axis.
    c5 = math.cos(q[4])
    s5 = math.sin(q[4])
    t1x = r1x * c5 + r2x * s5
    t1y = r1y * c5 + r2y * s5
    t1z = r1z * c5 + r2z * s5
    t2x = r2x * c5 - r1x * s5
    t2y = r2y * c5 - r1y * s5
    t2z = r2z * c5 - r1z * s5
    r1x, r1y, r1z = t1x, t1y, t1z
    r2x, r2y, r2z = t2x, t2y, t2z
    out[F_AXIS5] = r0x
    out[F_AXIS5 + 1] = r0y
    out[F_AXIS5 + 2] = r0z

    ox = ox + L1 * r2x
    oy = oy + L1 * r2y
    oz = oz + L1 * r2z
    out[F_ELBOW1] = ox
    out[F_ELBOW1 + 1] = oy
    out[F_ELBOW1 + 2] = oz

    # R <- R * Ry(q6); local y column is the joint-6 axis.
    c6 = math.cos(q[5])
    s6 = math.sin(q[5])
    t0x = r0x * c6 - r2x * s6
    t0y = r0y * c6 - r2y * s6
    t0z = r0z * c6 - r2z * s6
    t2x = r2x * c6 + r0x * s6
    t2y = r2y * c6 + r0y * s6
    t2z = r2z * c6 + r0z * s6
    r0x, r0y, r0z = t0x, t0y, t0z
    r2x, r2y, r2z = t2x, t2y, t2z
    out[F_AXIS6] = r1x
    out[F_AXIS6 + 1] = r1y
    out[F_AXIS6 + 2] = r1z

    ox = ox + L2 * r2x
    oy = oy + L2 * r2y
    oz = oz + L2 * r2z
    out[F_ELBOW2] = ox
    out[F_ELBOW2 + 1] = oy
    out[F_ELBOW2 + 2] = oz

    # R <- R * Rx(q7).
    c7 = math.cos(q[6])
    s7 = math.sin(q[6])
    t1x = r1x * c7 + r2x * s7
    t1y = r1y * c7 + r2y * s7
    t1z = r1z * c7 + r2z * s7
    t2x = r2x * c7 - r1x * s7
    t2y = r2y * c7 - r1y * s7
    t2z = r2z * c7 - r1z * s7
    r1x, r1y, r1z = t1x, t1y, t1z
    r2x, r2y, r2z = t2x, t2y, t2z
    out[F_AXIS7] = r0x
    out[F_AXIS7 + 1] = r0y
    out[F_AXIS7 + 2] = r0z

    ox = ox + L3 * r2x
    oy = oy + L3 * r2y
    oz = oz + L3 * r2z
    out[F_ARMEND] = ox
    out[F_ARMEND + 1] = oy
    out[F_ARMEND + 2] = oz

    hx = ox + d0 * r2x
    hy = oy + d0 * r2y
    hz = oz + d0 * r2z
    out[F_HUB] = hx
    out[F_HUB + 1] = hy
    out[F_HUB + 2] = hz

    q8 = q[7]
    out[F_TIP] = hx + q8 * r2x
    out[F_TIP + 1] = hy + q8 * r2y
    out[F_TIP + 2] = hz + q8 * r2z

    out[F_NEEDLE] = r2x
    out[F_NEEDLE + 1] = r2y
    out[F_NEEDLE + 2] = r2z


def seg_seg_distance(a, b, c, d):
    """Minimum distance between 3D segments [a,b] and [c,d].

    Degenerate (point) segments are handled.  Closest-point formulation per
    the standard clamped two-parameter minimization.
    """
    d1x = b[0] - a[0]
    d1y = b[1] - a[1]
    d1z = b[2] - a[2]
    d2x = d[0] - c[0]
    d2y = d[1] - c[1]
    d2z = d[2] - c[2]
    rx = a[0] - c[0]
    ry = a[1] - c[1]
    rz = a[2] - c[2]

    aa = d1x * d1x + d1y * d1y + d1z * d1z
    ee = d2x * d2x + d2y * d2y + d2z * d2z
    ff = d2x * rx + d2y * ry + d2z * rz

    if aa <= 1e-30 and ee <= 1e-30:
        return math.sqrt(rx * rx + ry * ry + rz * rz)
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

    px = rx + d1x * s - d2x * t
    py = ry + d1y * s - d2y * t
    pz = rz + d1z * s - d2z * t
    return math.sqrt(px * px + py * py + pz * pz)


def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def _radial_distance(px, py, pz, bore):
    # Distance of a point from the bore axis line (bore: point3, unit dir3, radius).
    wx = px - bore[0]
    wy = py - bore[1]
    wz = pz - bore[2]
    proj = wx * bore[3] + wy * bore[4] + wz * bore[5]
    vx = wx - proj * bore[3]
    vy = wy - proj * bore[4]
    vz = wz - proj * bore[5]
    return math.sqrt(vx * vx + vy * vy + vz * vz)


# Robot capsule i spans frames[_CAP_SEGS[i]] .. frames[_CAP_SEGS[i]+1] offsets.
_CAP_A = (F_CARRIAGE, F_MOUNT, F_ELBOW1, F_ELBOW2, F_ARMEND)
_CAP_B = (F_MOUNT, F_ELBOW1, F_ELBOW2, F_ARMEND, F_HUB)
N_LINK_CAPSULES = 5


def min_clearance(frames, radii, obstacles, n_obs, bore, needle_len):
    """Minimum signed clearance of the robot body against scene geometry.

    frames: chain_frames output; radii: 5 link-capsule radii;
    obstacles: n_obs x 7 flat array (ax ay az bx by bz r);
    bore: point3 + unit dir3 + radius (containment: body must stay inside);
    needle_len: length of needle (from hub) included in patient checks,
    negative for the full exposed needle, 0.0 to skip the needle entirely.
    Negative return value means penetration depth.
    """
    best = math.inf
    bore_r = bore[6]

    for i in range(N_LINK_CAPSULES):
        ia = _CAP_A[i]
        ib = _CAP_B[i]
        ri = radii[i]
        ax = frames[ia]
        ay = frames[ia + 1]
        az = frames[ia + 2]
        bx = frames[ib]
        by = frames[ib + 1]
        bz = frames[ib + 2]
        # Inside-cylinder clearance; radial distance is convex along the
        # segment so the maximum is attained at an endpoint.
        da = _radial_distance(ax, ay, az, bore)
        db = _radial_distance(bx, by, bz, bore)
        dmax = da if da > db else db
        c = bore_r - dmax - ri
        if c < best:
            best = c
        for j in range(n_obs):
            o = 7 * j
            dist = seg_seg_distance(
                (ax, ay, az), (bx, by, bz),
                (obstacles[o], obstacles[o + 1], obstacles[o + 2]),
                (obstacles[o + 3], obstacles[o + 4], obstacles[o + 5]),
            )
            c = dist - ri - obstacles[o + 6]
            if c < best:
                best = c

    if needle_len != 0.0:
        hx = frames[F_HUB]
        hy = frames[F_HUB + 1]
        hz = frames[F_HUB + 2]
        tx = frames[F_TIP]
        ty = frames[F_TIP + 1]
        tz = frames[F_TIP + 2]
        if needle_len > 0.0:
            ex = tx - hx
            ey = ty - hy
            ez = tz - hz
            full = math.sqrt(ex * ex + ey * ey + ez * ez)
            if full > needle_len:
                f = needle_len / full
                tx = hx + f * ex
                ty = hy + f * ey
                tz = hz + f * ez
        da = _radial_distance(hx, hy, hz, bore)
        db = _radial_distance(tx, ty, tz, bore)
        dmax = da if da > db else db
        c = bore_r - dmax
        if c < best:
            best = c
        for j in range(n_obs):
            o = 7 * j
            dist = seg_seg_distance(
                (hx, hy, hz), (tx, ty, tz),
                (obstacles[o], obstacles[o + 1], obstacles[o + 2]),
                (obstacles[o + 3], obstacles[o + 4], obstacles[o + 5]),
            )
            c = dist - obstacles[o + 6]
            if c < best:
                best = c

    return best


def joint_tick(x, v, integ, prev_meas, setp, kp, ki, kd, i_clamp, u_clamp,
               inertia, friction, eff_max, enc_res, dt, substeps, enabled,
               have_prev, eff_out, meas_out):
    """One 1 kHz control period for n position-controlled joints.

    Per joint: encoder quantization, PID with clamped + conditional
    integration and derivative on measurement, then `substeps` semi-implicit
    Euler plant substeps under zero-order-hold effort.  State arrays are
    updated in place.  When not enabled, effort is zero and integrators
    are reset; the plant still integrates.
    """
    n = len(x)
    h = dt / substeps
    for i in range(n):
        res = enc_res[i]
        meas = math.floor(x[i] / res) * res
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
                # Saturated in the direction of the error: hold the integral.
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
        for _ in range(substeps):
            vi = vi + h * (eff - fric * vi) / inert
            xi = xi + h * vi
        x[i] = xi
        v[i] = vi
