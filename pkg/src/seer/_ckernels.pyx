# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: path tracking and recurrent-cell pointwise math.

``track`` reproduces ``planner._pid_update`` + ``vehicle._advance``
operation for operation; build without -ffast-math and with
-ffp-contract=off or the bit-identity tests against the Python backend fail.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan, cos, fabs, copysign, sin, sqrt, tan

cnp.import_array()

NAME = "cython"

cdef double CG_RATIO = 0.5
cdef double HAND_BRAKE_RATIO = 3.0


cdef inline double _clip(double v, double lo, double hi) nogil:
    return lo if v < lo else (hi if v > hi else v)


def track(double[:, ::1] waypoints, double[::1] state, double[::1] pid, gains, params,
          double dt, int n_steps):
    cdef Py_ssize_t n = waypoints.shape[0]
    cdef Py_ssize_t i, best
    cdef int k
    cdef double kp = gains[0], ki = gains[1], kd = gains[2], clamp = gains[3], speed_gain = gains[4]
    cdef double wheelbase = params[0], max_steer = params[1], traction = params[2]
    cdef double grip = params[3], engine_force = params[4], braking_force = params[5]
    cdef double mass = params[6], max_speed = params[7], lat_limit = params[8]
    cdef double steer_tau = params[9]
    cdef double x = state[0], y = state[1], heading = state[2], v = state[3]
    cdef double v_lat = state[4], delta = state[5]
    cdef double integral = pid[0], prev_error = pid[1]
    cdef bint has_prev = pid[2] != 0.0
    cdef double ax, ay, dx, dy, seg2, t, qx, qy, d2, best_d2, best_t, best_seg2
    cdef double bdx, bdy, bax, bay, cross, error, va, vb, v_target
    cdef double derivative, c, steer, dv, throttle, brake
    cdef double tan_d, beta, omega, x_new, y_new, drive, braking, v_new
    if n < 2:
        raise ValueError("path needs at least two waypoints")
    with nogil:
        for k in range(n_steps):
            best = 0
            best_d2 = 0.0
            best_t = 0.0
            best_seg2 = 1.0
            for i in range(n - 1):
                ax = waypoints[i, 0]
                ay = waypoints[i, 1]
                dx = waypoints[i + 1, 0] - ax
                dy = waypoints[i + 1, 1] - ay
                seg2 = dx * dx + dy * dy
                t = ((x - ax) * dx + (y - ay) * dy) / seg2
                t = _clip(t, 0.0, 1.0)
                qx = ax + t * dx
                qy = ay + t * dy
                d2 = (x - qx) * (x - qx) + (y - qy) * (y - qy)
                if i == 0 or d2 < best_d2:
                    best = i
                    best_d2 = d2
                    best_t = t
                    best_seg2 = seg2
            bax = waypoints[best, 0]
            bay = waypoints[best, 1]
            bdx = waypoints[best + 1, 0] - bax
            bdy = waypoints[best + 1, 1] - bay
            cross = bdx * (y - bay) - bdy * (x - bax)
            error = -cross / sqrt(best_seg2)
            va = waypoints[best, 2]
            vb = waypoints[best + 1, 2]
            v_target = va + best_t * (vb - va)

            integral = integral + error * dt
            if integral > clamp:
                integral = clamp
            elif integral < -clamp:
                integral = -clamp
            derivative = (error - prev_error) / dt if has_prev else 0.0
            c = kp * error + ki * integral + kd * derivative
            steer = _clip(c, -1.0, 1.0)
            dv = speed_gain * (v_target - v)
            throttle = _clip(dv, 0.0, 1.0)
            brake = 0.0 if -dv < 0.0 else (1.0 if -dv > 1.0 else -dv)
            prev_error = error
            has_prev = True

            tan_d = tan(delta)
            beta = atan(CG_RATIO * tan_d)
            omega = v * cos(beta) * tan_d / wheelbase
            if fabs(v * omega) > lat_limit:
                omega = copysign(lat_limit / v, omega)
            x_new = x + v * cos(heading + beta) * dt
            y_new = y + v * sin(heading + beta) * dt
            heading = heading + omega * dt
            x = x_new
            y = y_new
            delta = delta + (steer * max_steer - delta) * (dt / steer_tau)
            drive = traction * min(throttle * engine_force, grip)
            braking = traction * min((brake + HAND_BRAKE_RATIO * 0.0) * braking_force, grip)
            v_new = v + (drive - braking) / mass * dt
            v = _clip(v_new, 0.0, max_speed)
            v_lat = v * sin(atan(CG_RATIO * tan(delta)))
    state[0] = x
    state[1] = y
    state[2] = heading
    state[3] = v
    state[4] = v_lat
    state[5] = delta
    pid[0] = integral
    pid[1] = prev_error
    pid[2] = 1.0 if has_prev else 0.0


# The gate nonlinearities are bound by exp/tanh, where numpy's vectorized
# loops beat scalar libm calls (see benchmarks/bench_kernels.py), so the
# forward kernels are shared with the fallback; the backward kernels are
# pure arithmetic and stay compiled.
from ._pykernels import gru_forward, lstm_forward, sigmoid  # noqa: E402,F401


def lstm_backward(double[:, ::1] gates, double[:, ::1] c_prev, double[:, ::1] tanh_c,
                  double[:, ::1] dh, double[:, ::1] dc):
    cdef Py_ssize_t b = gates.shape[0], h = c_prev.shape[1], n, j
    da_arr = np.empty((b, 4 * h))
    dcp_arr = np.empty((b, h))
    cdef double[:, ::1] da = da_arr, dcp = dcp_arr
    cdef double gi, go, gf, gg, tc, dct
    with nogil:
        for n in range(b):
            for j in range(h):
                gi = gates[n, j]
                go = gates[n, h + j]
                gf = gates[n, 2 * h + j]
                gg = gates[n, 3 * h + j]
                tc = tanh_c[n, j]
                dct = dc[n, j] + dh[n, j] * go * (1.0 - tc * tc)
                da[n, j] = dct * gg * gi * (1.0 - gi)
                da[n, h + j] = dh[n, j] * tc * go * (1.0 - go)
                da[n, 2 * h + j] = dct * c_prev[n, j] * gf * (1.0 - gf)
                da[n, 3 * h + j] = dct * gi * (1.0 - gg * gg)
                dcp[n, j] = dct * gf
    return da_arr, dcp_arr


def gru_backward(double[:, ::1] hc, double[:, ::1] z, double[:, ::1] s_prev, double[:, ::1] ds):
    cdef Py_ssize_t b = hc.shape[0], h = hc.shape[1], n, j
    dah_arr = np.empty((b, h))
    daz_arr = np.empty((b, h))
    dsp_arr = np.empty((b, h))
    cdef double[:, ::1] dah = dah_arr, daz = daz_arr, dsp = dsp_arr
    cdef double zz, cand, g
    with nogil:
        for n in range(b):
            for j in range(h):
                zz = z[n, j]
                cand = hc[n, j]
                g = ds[n, j]
                dah[n, j] = g * (1.0 - zz) * (1.0 - cand * cand)
                daz[n, j] = g * (s_prev[n, j] - cand) * zz * (1.0 - zz)
                dsp[n, j] = g * zz
    return dah_arr, daz_arr, dsp_arr
