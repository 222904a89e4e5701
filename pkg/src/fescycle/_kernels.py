"""Scalar numeric kernels shared by the model, controller and integrator.

Everything here works on plain floats and flat ``float64`` parameter vectors so
it can be JIT-compiled.  The public, validated API lives in the sibling modules.
"""

from __future__ import annotations

from math import acos, atan2, cos, exp, pi, sin, sqrt, tanh

import numpy as np

try:
    from numba import njit
except Exception:  # pragma: no cover - numba is a declared dependency

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


TWO_PI = 2.0 * pi

# model parameter vector layout
L_T, L_S, L_C, L_X, L_Y = 0, 1, 2, 3, 4
M_T, M_S, R_T, R_S, I_T, I_S, I_F = 5, 6, 7, 8, 9, 10, 11
DAMP, P1, P2 = 12, 13, 14
OMEGA0, C_OM1, C_OM2, OM_MODEL = 15, 16, 17, 18
D_AMP, D_FREQ, GRAV = 19, 20, 21
N_MODEL = 22

# controller parameter vector layout
ALPHA, K1, K2, K3, K4 = 0, 1, 2, 3, 4
W_CAD, R_RAMP, T0, Q0 = 5, 6, 7, 8
CLAMP, PHI = 9, 10
N_CTRL = 11

SIDE_NONE, SIDE_R, SIDE_L = 0, 1, 2
SLIDING = 0

# simulation exit status
ST_OK, ST_ESCAPE, ST_STALL, ST_CAPACITY = 0, 1, 2, 3

# event kinds written to the event log
EV_START, EV_REGION, EV_SIGN, EV_SLIDE_IN, EV_SLIDE_OUT = 0, 1, 2, 3, 4


@njit(cache=True)
def side_terms(q, offset, p):
    """Linkage state of one leg.

    Returns (wt, ws, dwt, dws, ax, ay, bx, by, qk, bk) where a = knee - hip,
    b = pedal - knee, wt/ws are the thigh/shank angular rates per unit crank
    angle and dwt/dws their derivatives, qk is the interior knee angle and
    bk the torque transfer ratio.
    """
    lt = p[L_T]
    ls = p[L_S]
    lc = p[L_C]
    hx = -p[L_X]
    hy = p[L_Y]
    ang = q + offset
    c = cos(ang)
    s = sin(ang)
    # pedal at lc*(cos(-q), sin(-q)): clockwise crank angle
    px = lc * c
    py = -lc * s
    dpx = -lc * s
    dpy = -lc * c
    ddpx = -px
    ddpy = -py
    dx = px - hx
    dy = py - hy
    d2 = dx * dx + dy * dy
    dist = sqrt(d2)
    cb = (lt * lt + d2 - ls * ls) / (2.0 * lt * dist)
    if cb > 1.0:
        cb = 1.0
    elif cb < -1.0:
        cb = -1.0
    th = atan2(dy, dx) + acos(cb)
    ax = lt * cos(th)
    ay = lt * sin(th)
    bx = px - hx - ax
    by = py - hy - ay
    cross = ax * by - ay * bx
    # P' = wt*J(a) + ws*J(b) with J(x, y) = (-y, x)
    wt = (dpx * bx + dpy * by) / cross
    ws = -(dpx * ax + dpy * ay) / cross
    rx = ddpx + wt * wt * ax + ws * ws * bx
    ry = ddpy + wt * wt * ay + ws * ws * by
    dwt = (rx * bx + ry * by) / cross
    dws = -(rx * ax + ry * ay) / cross
    ck = (lt * lt + ls * ls - d2) / (2.0 * lt * ls)
    if ck > 1.0:
        ck = 1.0
    elif ck < -1.0:
        ck = -1.0
    qk = acos(ck)
    dd2 = 2.0 * (dx * dpx + dy * dpy)
    bk = -dd2 / (2.0 * lt * ls * sin(qk))
    return wt, ws, dwt, dws, ax, ay, bx, by, qk, bk


@njit(cache=True)
def _side_mass(p, wt, ws, dwt, dws, ax, ay, bx, by):
    lt = p[L_T]
    ls = p[L_S]
    mt = p[M_T]
    ms = p[M_S]
    rt = p[R_T]
    rs = p[R_S]
    at = mt * rt * rt * lt * lt + p[I_T]
    ab = ax * bx + ay * by
    cross = ax * by - ay * bx
    m = (at * wt * wt
         + ms * (lt * lt * wt * wt + rs * rs * ls * ls * ws * ws + 2.0 * rs * wt * ws * ab)
         + p[I_S] * ws * ws)
    dm = (2.0 * at * wt * dwt
          + ms * (2.0 * lt * lt * wt * dwt + 2.0 * rs * rs * ls * ls * ws * dws
                  + 2.0 * rs * ((dwt * ws + wt * dws) * ab + wt * ws * (wt - ws) * cross))
          + 2.0 * p[I_S] * ws * dws)
    # d/dq of COM heights: thigh rt*wt*ax, shank wt*ax + rs*ws*bx
    g = p[GRAV] * (mt * rt * wt * ax + ms * (wt * ax + rs * ws * bx))
    return m, dm, g


@njit(cache=True)
def model_terms(q, p):
    """(M, dM/dq, G, B_R, B_L, qk_R, qk_L) at crank angle q."""
    wt, ws, dwt, dws, ax, ay, bx, by, qkr, bkr = side_terms(q, 0.0, p)
    mr, dmr, gr = _side_mass(p, wt, ws, dwt, dws, ax, ay, bx, by)
    wt, ws, dwt, dws, ax, ay, bx, by, qkl, bkl = side_terms(q, pi, p)
    ml, dml, gl = _side_mass(p, wt, ws, dwt, dws, ax, ay, bx, by)
    return p[I_F] + mr + ml, dmr + dml, gr + gl, bkr, bkl, qkr, qkl


@njit(cache=True)
def model_terms_array(qs, p):
    n = qs.shape[0]
    out = np.empty((n, 7))
    for i in range(n):
        m, dm, g, br, bl, kr, kl = model_terms(qs[i], p)
        out[i, 0] = m
        out[i, 1] = dm
        out[i, 2] = g
        out[i, 3] = br
        out[i, 4] = bl
        out[i, 5] = kr
        out[i, 6] = kl
    return out


@njit(cache=True)
def muscle_gain(qk, p):
    if p[OM_MODEL] == 0.0:
        return p[OMEGA0]
    om = p[OMEGA0] * (0.5 + 0.5 * sin(qk))
    if om < p[C_OM1]:
        om = p[C_OM1]
    elif om > p[C_OM2]:
        om = p[C_OM2]
    return om


@njit(cache=True)
def passive(qdot, p):
    """(P, tau_b)."""
    return -p[P1] * tanh(4.0 * qdot) - p[P2] * qdot, -p[DAMP] * qdot


@njit(cache=True)
def disturbance(t, p):
    return p[D_AMP] * sin(p[D_FREQ] * t)


@njit(cache=True)
def desired(t, cp):
    """(q_d, qdot_d, qddot_d) of the exponential cadence ramp."""
    w = cp[W_CAD]
    r = cp[R_RAMP]
    dt = t - cp[T0]
    ex = exp(-r * dt)
    qd_dot = w * (1.0 - ex)
    return w * dt - qd_dot / r + cp[Q0], qd_dot, w * r * ex


@njit(cache=True)
def errors(t, q, qdot, cp):
    qd, qd_dot, qd_ddot = desired(t, cp)
    e1 = qd - q
    e1dot = qd_dot - qdot
    e2 = e1dot + cp[ALPHA] * e1
    return e1, e1dot, e2, qd, qd_dot, qd_ddot


@njit(cache=True)
def chi_value(t, q, qdot, m, dm, g, p, cp):
    """Auxiliary term chi of the open-loop error system."""
    e1, e1dot, e2, qd, qd_dot, qd_ddot = errors(t, q, qdot, cp)
    pv, tb = passive(qdot, p)
    v = 0.5 * dm * qdot
    return (m * (qd_ddot + cp[ALPHA] * e1dot) + v * (qd_dot + cp[ALPHA] * e1)
            + g + disturbance(t, p) - tb - pv)


@njit(cache=True)
def _clamp(v, cp):
    # physical clamp: only the propulsive polarity (v <= 0, since B_k < 0) passes
    if cp[CLAMP] != 0.0 and v > 0.0:
        return 0.0
    return v


@njit(cache=True)
def robust_gain(zn, cp):
    return cp[K2] + cp[K3] * zn + cp[K4] * zn * zn


@njit(cache=True)
def equivalent_voltage(t, q, qdot, m, dm, g, bk, om, p, cp):
    """Voltage holding e2 stationary, and the clamped extremes for sgn = +1, -1."""
    e1, e1dot, e2, qd, qd_dot, qd_ddot = errors(t, q, qdot, cp)
    zn = sqrt(e1 * e1 + e2 * e2)
    kk = robust_gain(zn, cp)
    chi = chi_value(t, q, qdot, m, dm, g, p, cp)
    v_eq = (chi - 0.5 * dm * qdot * e2) / (bk * om)
    v_plus = _clamp(-cp[K1] * e2 - kk, cp)
    v_minus = _clamp(-cp[K1] * e2 + kk, cp)
    return v_eq, v_plus, v_minus


@njit(cache=True)
def voltage(t, q, qdot, side, smode, m, dm, g, bk, om, p, cp):
    """Commanded voltage for the given region side and sign mode."""
    if side == SIDE_NONE:
        return 0.0
    e1, e1dot, e2, qd, qd_dot, qd_ddot = errors(t, q, qdot, cp)
    zn = sqrt(e1 * e1 + e2 * e2)
    kk = robust_gain(zn, cp)
    if cp[PHI] > 0.0:
        return _clamp(-cp[K1] * e2 - kk * tanh(e2 / cp[PHI]), cp)
    if smode == SLIDING:
        chi = chi_value(t, q, qdot, m, dm, g, p, cp)
        return (chi - 0.5 * dm * qdot * e2) / (bk * om)
    return _clamp(-cp[K1] * e2 - kk * smode, cp)


@njit(cache=True)
def accel(t, q, qdot, side, smode, p, cp):
    m, dm, g, br, bl, kr, kl = model_terms(q, p)
    torque = 0.0
    if side == SIDE_R:
        om = muscle_gain(kr, p)
        torque = br * om * voltage(t, q, qdot, side, smode, m, dm, g, br, om, p, cp)
    elif side == SIDE_L:
        om = muscle_gain(kl, p)
        torque = bl * om * voltage(t, q, qdot, side, smode, m, dm, g, bl, om, p, cp)
    pv, tb = passive(qdot, p)
    return (torque - 0.5 * dm * qdot * qdot - g - disturbance(t, p) + tb + pv) / m


@njit(cache=True)
def rk4(t, q, qd, h, side, smode, p, cp):
    k1q = qd
    k1v = accel(t, q, qd, side, smode, p, cp)
    k2q = qd + 0.5 * h * k1v
    k2v = accel(t + 0.5 * h, q + 0.5 * h * k1q, k2q, side, smode, p, cp)
    k3q = qd + 0.5 * h * k2v
    k3v = accel(t + 0.5 * h, q + 0.5 * h * k2q, k3q, side, smode, p, cp)
    k4q = qd + h * k3v
    k4v = accel(t + h, q + h * k3q, k4q, side, smode, p, cp)
    return (q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
            qd + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))


@njit(cache=True)
def _side_bk_om(q, side, p):
    m, dm, g, br, bl, kr, kl = model_terms(q, p)
    if side == SIDE_R:
        return m, dm, g, br, muscle_gain(kr, p)
    return m, dm, g, bl, muscle_gain(kl, p)


@njit(cache=True)
def slide_margin(t, q, qdot, side, p, cp):
    """min(v_eq - v_plus, v_minus - v_eq); nonnegative iff sliding is admissible."""
    m, dm, g, bk, om = _side_bk_om(q, side, p)
    v_eq, v_plus, v_minus = equivalent_voltage(t, q, qdot, m, dm, g, bk, om, p, cp)
    a = v_eq - v_plus
    b = v_minus - v_eq
    return a if a < b else b, a


@njit(cache=True)
def pick_sign_mode(t, q, qdot, side, p, cp):
    """Sign mode on (or next to) the surface e2 = 0."""
    margin, lo_margin = slide_margin(t, q, qdot, side, p, cp)
    if margin >= 0.0:
        return SLIDING
    if lo_margin < 0.0:
        return 1
    return -1


@njit(cache=True)
def _event_value(kind, t, q, qd, side, smode, lo, hi, p, cp):
    # positive once the event has happened
    if kind == 0:
        return q - hi
    if kind == 1:
        return lo - q
    if kind == 2:
        e2 = errors(t, q, qd, cp)[2]
        return -smode * e2
    margin, lo_margin = slide_margin(t, q, qd, side, p, cp)
    return -margin


@njit(cache=True)
def _locate_event(kind, t, q, qd, h, side, smode, lo, hi, p, cp):
    """Bisection on the step fraction; returns the smallest fraction found past the event."""
    a = 0.0
    b = 1.0
    tol = 1e-11
    for _ in range(200):
        mid = 0.5 * (a + b)
        qm, qdm = rk4(t, q, qd, mid * h, side, smode, p, cp)
        val = _event_value(kind, t + mid * h, qm, qdm, side, smode, lo, hi, p, cp)
        if val > 0.0:
            b = mid
            if val < tol:
                break
        else:
            a = mid
        if (b - a) * h < 1e-16:
            break
    return b


@njit(cache=True)
def locate_interval(q, bounds, tags):
    """Index j and revolution k with bounds[j] + 2*pi*k <= q < bounds[j+1] + 2*pi*k."""
    n = bounds.shape[0]
    k = np.floor((q - bounds[0]) / TWO_PI)
    x = q - TWO_PI * k
    j = n - 1
    for i in range(n - 1):
        if x < bounds[i + 1]:
            j = i
            break
    return j, k


@njit(cache=True)
def interval_limits(j, k, bounds):
    n = bounds.shape[0]
    lo = bounds[j] + TWO_PI * k
    if j + 1 < n:
        hi = bounds[j + 1] + TWO_PI * k
    else:
        hi = bounds[0] + TWO_PI * (k + 1.0)
    return lo, hi


@njit(cache=True)
def _initial_mode(t, q, qd, side, p, cp):
    if side == SIDE_NONE or cp[PHI] > 0.0:
        return 1
    e2 = errors(t, q, qd, cp)[2]
    if abs(e2) > 1e-9:
        return 1 if e2 > 0.0 else -1
    return pick_sign_mode(t, q, qd, side, p, cp)


@njit(cache=True)
def simulate_kernel(p, cp, bounds, tags, q0, qdot0, t0, h, max_steps, revs_target,
                    stride, z_escape, stall_limit, rec, ev, cap_rec, cap_ev):
    """Fixed-step RK4 with bisection-localized region and sign events.

    ``rec`` rows: t, q, qdot, side, smode, is_event.  ``ev`` rows: t, q, kind,
    side_before, side_after.  Returns (status, n_rec, n_ev, n_steps).
    """
    t = t0
    q = q0
    qd = qdot0
    j, kr = locate_interval(q, bounds, tags)
    lo, hi = interval_limits(j, kr, bounds)
    side = tags[j]
    smode = _initial_mode(t, q, qd, side, p, cp)
    n_rec = 0
    n_ev = 0
    rec[0, 0] = t
    rec[0, 1] = q
    rec[0, 2] = qd
    rec[0, 3] = side
    rec[0, 4] = smode
    rec[0, 5] = 1.0
    n_rec = 1
    ev[0, 0] = t
    ev[0, 1] = q
    ev[0, 2] = EV_START
    ev[0, 3] = side
    ev[0, 4] = side
    n_ev = 1
    stall_time = 0.0
    smooth = cp[PHI] > 0.0
    status = ST_OK
    step = 0
    while step < max_steps:
        t_next = t0 + (step + 1) * h
        n_sub = 0
        while True:
            hh = t_next - t
            if hh <= 0.0:
                break
            q1, qd1 = rk4(t, q, qd, hh, side, smode, p, cp)
            best = 2.0
            kind = -1
            if q1 >= hi:
                best = _locate_event(0, t, q, qd, hh, side, smode, lo, hi, p, cp)
                kind = 0
            elif q1 < lo:
                best = _locate_event(1, t, q, qd, hh, side, smode, lo, hi, p, cp)
                kind = 1
            if side != SIDE_NONE and not smooth and n_sub < 64:
                if smode != SLIDING:
                    e2s = errors(t, q, qd, cp)[2]
                    e2e = errors(t_next, q1, qd1, cp)[2]
                    if smode * e2e < 0.0 and smode * e2s > 0.0:
                        th = _locate_event(2, t, q, qd, hh, side, smode, lo, hi, p, cp)
                        if th < best:
                            best = th
                            kind = 2
                    elif smode * e2e < -1e-9:
                        # mode inconsistent over the whole step; resync at step end
                        if kind < 0:
                            smode = -smode
                else:
                    mg = slide_margin(t_next, q1, qd1, side, p, cp)[0]
                    if mg < 0.0:
                        th = _locate_event(3, t, q, qd, hh, side, smode, lo, hi, p, cp)
                        if th < best:
                            best = th
                            kind = 3
            if kind < 0:
                t = t_next
                q = q1
                qd = qd1
                break
            n_sub += 1
            if best >= 1.0:
                t_e = t_next
                q, qd = q1, qd1
            else:
                t_e = t + best * hh
                q, qd = rk4(t, q, qd, best * hh, side, smode, p, cp)
            t = t_e
            old_side = side
            ev_kind = EV_REGION
            if kind == 0 or kind == 1:
                if kind == 0:
                    j += 1
                    if j >= bounds.shape[0]:
                        j = 0
                        kr += 1.0
                else:
                    j -= 1
                    if j < 0:
                        j = bounds.shape[0] - 1
                        kr -= 1.0
                lo, hi = interval_limits(j, kr, bounds)
                side = tags[j]
                smode = _initial_mode(t, q, qd, side, p, cp)
            elif kind == 2:
                smode = pick_sign_mode(t, q, qd, side, p, cp)
                ev_kind = EV_SLIDE_IN if smode == SLIDING else EV_SIGN
            else:
                m_, lo_margin = slide_margin(t, q, qd, side, p, cp)
                smode = 1 if lo_margin < 0.0 else -1
                ev_kind = EV_SLIDE_OUT
            if n_ev >= cap_ev or n_rec >= cap_rec:
                return ST_CAPACITY, n_rec, n_ev, step
            ev[n_ev, 0] = t
            ev[n_ev, 1] = q
            ev[n_ev, 2] = ev_kind
            ev[n_ev, 3] = old_side
            ev[n_ev, 4] = side
            n_ev += 1
            rec[n_rec, 0] = t
            rec[n_rec, 1] = q
            rec[n_rec, 2] = qd
            rec[n_rec, 3] = side
            rec[n_rec, 4] = smode
            rec[n_rec, 5] = 1.0
            n_rec += 1
        step += 1
        t = t_next
        if step % stride == 0:
            if n_rec >= cap_rec:
                return ST_CAPACITY, n_rec, n_ev, step
            rec[n_rec, 0] = t
            rec[n_rec, 1] = q
            rec[n_rec, 2] = qd
            rec[n_rec, 3] = side
            rec[n_rec, 4] = smode
            rec[n_rec, 5] = 0.0
            n_rec += 1
        e1, e1dot, e2, a_, b_, c_ = errors(t, q, qd, cp)
        if not (e1 * e1 + e2 * e2 < z_escape * z_escape):
            status = ST_ESCAPE
            break
        if side == SIDE_NONE and qd <= 0.0:
            stall_time += h
            if stall_time > stall_limit:
                status = ST_STALL
                break
        else:
            stall_time = 0.0
        if revs_target > 0.0 and (q - q0) >= TWO_PI * revs_target:
            break
    # the final state is always the last row
    if step % stride != 0:
        if n_rec >= cap_rec:
            return ST_CAPACITY, n_rec, n_ev, step
        rec[n_rec, 0] = t
        rec[n_rec, 1] = q
        rec[n_rec, 2] = qd
        rec[n_rec, 3] = side
        rec[n_rec, 4] = smode
        rec[n_rec, 5] = 0.0
        n_rec += 1
    return status, n_rec, n_ev, step


@njit(cache=True)
def ballistic_crossing(p, q_entry, q_exit, w, t0, h, t_max):
    """Time for zero-input motion from q_entry at speed w to reach q_exit (inf on stall)."""
    cp = np.zeros(N_CTRL)
    cp[R_RAMP] = 1.0
    n = 0
    t = t0
    q = q_entry
    qd = w
    while t - t0 < t_max:
        q1, qd1 = rk4(t, q, qd, h, SIDE_NONE, 1, p, cp)
        if q1 >= q_exit:
            a = 0.0
            b = 1.0
            for _ in range(200):
                mid = 0.5 * (a + b)
                qm, qdm = rk4(t, q, qd, mid * h, SIDE_NONE, 1, p, cp)
                if qm >= q_exit:
                    b = mid
                    if qm - q_exit < 1e-12:
                        break
                else:
                    a = mid
                if (b - a) * h < 1e-16:
                    break
            return t + b * h - t0
        if qd1 <= 0.0:
            return np.inf
        n += 1
        t = t0 + n * h
        q = q1
        qd = qd1
    return np.inf


@njit(cache=True)
def derived_channels(rec, p, cp):
    """Per-row e1, e1', e2, q_d, q_d', V_L, applied voltage and the unclamped command."""
    n = rec.shape[0]
    out = np.empty((n, 8))
    for i in range(n):
        t = rec[i, 0]
        q = rec[i, 1]
        qd = rec[i, 2]
        side = int(rec[i, 3])
        smode = int(rec[i, 4])
        e1, e1dot, e2, qdes, qdes_dot, qdes_ddot = errors(t, q, qd, cp)
        m, dm, g, br, bl, kr, kl = model_terms(q, p)
        v = 0.0
        raw = 0.0
        if side != SIDE_NONE:
            if side == SIDE_R:
                bk = br
                om = muscle_gain(kr, p)
            else:
                bk = bl
                om = muscle_gain(kl, p)
            v = voltage(t, q, qd, side, smode, m, dm, g, bk, om, p, cp)
            zn = sqrt(e1 * e1 + e2 * e2)
            if cp[PHI] > 0.0:
                raw = -cp[K1] * e2 - robust_gain(zn, cp) * tanh(e2 / cp[PHI])
            elif smode == SLIDING:
                raw = v
            else:
                raw = -cp[K1] * e2 - robust_gain(zn, cp) * smode
        out[i, 0] = e1
        out[i, 1] = e1dot
        out[i, 2] = e2
        out[i, 3] = qdes
        out[i, 4] = qdes_dot
        out[i, 5] = 0.5 * (e1 * e1 + m * e2 * e2)
        out[i, 6] = v
        out[i, 7] = raw
    return out
