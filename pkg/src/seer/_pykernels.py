"""Pure-Python/numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``SEER_KERNELS=python``.
The tracking loop runs the same scalar cores as ``pid_control`` and
``step``, so this backend is the reference the compiled kernel must
reproduce bit for bit.
"""

import numpy as np

NAME = "python"


def track(waypoints, state, pid, gains, params, dt, n_steps):
    """Run ``n_steps`` controller + vehicle updates, writing ``state`` and ``pid`` in place.

    ``state`` is ``[x, y, heading, v_lon, v_lat, tire_angle]`` and ``pid`` is
    ``[integral, prev_error, has_prev]``; ``gains`` and ``params`` are the
    packed tuples of :class:`PidGains` and :class:`VehiclePhysicsParams`.
    """
    from .planner import IntentionLabel, Path, _pid_update, cross_track
    from .vehicle import _advance

    path = Path(waypoints, IntentionLabel.LANE_KEEP)
    gains = tuple(float(g) for g in gains)
    params = tuple(float(p) for p in params)
    x, y, heading, v, v_lat, delta = (float(s) for s in state)
    integral, prev_error, has_prev = float(pid[0]), float(pid[1]), bool(pid[2])
    for _ in range(n_steps):
        error, v_target = cross_track(path, x, y)
        throttle, brake, steer, integral = _pid_update(
            error, v_target, v, integral, prev_error, has_prev, gains, dt)
        prev_error, has_prev = error, True
        x, y, heading, v, v_lat, delta = _advance(x, y, heading, v, delta, throttle, brake, 0.0,
                                                  steer, params, dt)
    state[:] = (x, y, heading, v, v_lat, delta)
    pid[:] = (integral, prev_error, 1.0 if has_prev else 0.0)


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(a, c_prev):
    """Gate nonlinearities and state update for pre-activations ``a`` = [i, o, f, g]."""
    h = c_prev.shape[1]
    gates = np.empty_like(a)
    gates[:, :3 * h] = sigmoid(a[:, :3 * h])
    gates[:, 3 * h:] = np.tanh(a[:, 3 * h:])
    i, o, f, g = gates[:, :h], gates[:, h:2 * h], gates[:, 2 * h:3 * h], gates[:, 3 * h:]
    c = i * g + f * c_prev
    tanh_c = np.tanh(c)
    return gates, c, tanh_c, o * tanh_c


def lstm_backward(gates, c_prev, tanh_c, dh, dc):
    h = c_prev.shape[1]
    i, o, f, g = gates[:, :h], gates[:, h:2 * h], gates[:, 2 * h:3 * h], gates[:, 3 * h:]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    da = np.empty_like(gates)
    da[:, :h] = dc_total * g * i * (1.0 - i)
    da[:, h:2 * h] = dh * tanh_c * o * (1.0 - o)
    da[:, 2 * h:3 * h] = dc_total * c_prev * f * (1.0 - f)
    da[:, 3 * h:] = dc_total * i * (1.0 - g * g)
    return da, dc_total * f


def gru_forward(a_h, z, s_prev):
    h = np.tanh(a_h)
    return h, (1.0 - z) * h + z * s_prev


def gru_backward(h, z, s_prev, ds):
    """Returns gradients wrt the candidate pre-activation, the update-gate
    pre-activation and the direct path to the previous state."""
    da_h = ds * (1.0 - z) * (1.0 - h * h)
    da_z = ds * (s_prev - h) * z * (1.0 - z)
    return da_h, da_z, ds * z
