"""Compiled inner loops for the plant + motor integration.

Coefficient vector layout (see ``plant.PlantParams.coefficients``)::

    0 effective mass   1 effective damping   2 stiffness   3 lift scale F0
    4 vdp epsilon      5 shedding omega_s    6 A_w / D      7 rotation gain
    8 wake enabled (1.0 / 0.0)

The rotation gain multiplies dOmega/dt: kappa_r * omega_s * D / (2 V)
collapses to kappa_r * pi * St, which stays finite at V = 0.
"""
import math

import numba
import numpy as np

Q_GUARD = 10.0

OK = 0
DIVERGED = 1


@numba.njit(cache=True)
def rhs(y, yd, q, qd, omega_rate, c):
    ydd = (c[3] * q - c[1] * yd - c[2] * y) / c[0]
    if c[8] == 0.0:
        return yd, ydd, 0.0, 0.0
    ws = c[5]
    qdd = -c[4] * ws * (q * q - 1.0) * qd - ws * ws * q + c[6] * ydd + c[7] * omega_rate
    return yd, ydd, qd, qdd


@numba.njit(cache=True)
def _rk4(y, yd, q, qd, r1, r2, r4, dt, c):
    h = 0.5 * dt
    k1 = rhs(y, yd, q, qd, r1, c)
    k2 = rhs(y + h * k1[0], yd + h * k1[1], q + h * k1[2], qd + h * k1[3], r2, c)
    k3 = rhs(y + h * k2[0], yd + h * k2[1], q + h * k2[2], qd + h * k2[3], r2, c)
    k4 = rhs(y + dt * k3[0], yd + dt * k3[1], q + dt * k3[2], qd + dt * k3[3], r4, c)
    s = dt / 6.0
    return (y + s * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            yd + s * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            q + s * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
            qd + s * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]))


@numba.njit(cache=True)
def _motor_rates(omega, omega_ss, tau, dt):
    """Exact first-order motor: rates at the RK4 stage times and end speed."""
    e_half = math.exp(-0.5 * dt / tau)
    e_full = math.exp(-dt / tau)
    om_half = omega_ss + (omega - omega_ss) * e_half
    om_end = omega_ss + (omega - omega_ss) * e_full
    return ((omega_ss - omega) / tau, (omega_ss - om_half) / tau,
            (omega_ss - om_end) / tau, om_end)


@numba.njit(cache=True)
def _bad(y, yd, q, qd):
    return not (math.isfinite(y) and math.isfinite(yd) and math.isfinite(q)
                and math.isfinite(qd)) or abs(q) >= Q_GUARD


@numba.njit(cache=True)
def advance(state, omega, omega_ss, tau, nsub, dt, c, rec_every, rec):
    """Advance ``nsub`` steps with the motor relaxing toward ``omega_ss``.

    ``state`` is ``[y, ydot, q, qdot]`` and is updated in place. Every
    ``rec_every`` steps (if > 0) a row ``[y, ydot, omega]`` is written to
    ``rec``. Returns ``(status, omega_end, n_rows)``.
    """
    y, yd, q, qd = state[0], state[1], state[2], state[3]
    rows = 0
    for i in range(nsub):
        r1, r2, r4, om_end = _motor_rates(omega, omega_ss, tau, dt)
        y, yd, q, qd = _rk4(y, yd, q, qd, r1, r2, r4, dt, c)
        omega = om_end
        if _bad(y, yd, q, qd):
            state[0], state[1], state[2], state[3] = y, yd, q, qd
            return DIVERGED, omega, rows
        if rec_every > 0 and (i + 1) % rec_every == 0:
            rec[rows, 0] = y
            rec[rows, 1] = yd
            rec[rows, 2] = omega
            rows += 1
    state[0], state[1], state[2], state[3] = y, yd, q, qd
    return OK, omega, rows


@numba.njit(cache=True)
def pid_update(err, integ, prev_err, kp, ki, kd, dt, ilim, limit):
    """One PID step with a clamped integrator; returns (duty, integ)."""
    integ = integ + err * dt
    if integ > ilim:
        integ = ilim
    elif integ < -ilim:
        integ = -ilim
    u = kp * err + ki * integ + kd * (err - prev_err) / dt
    if u > limit:
        u = limit
    elif u < -limit:
        u = -limit
    return u, integ


@numba.njit(cache=True)
def advance_pid(state, omega, nsteps, dt, c, tau, omega_max, duty_limit,
                alpha_ref_amp, fr_hz, speed_scale, kp, ki, kd, ilim, rec_every, rec):
    """Sinusoidal speed tracking: PID on normalized speed, updated every step.

    Reference ``alpha(t) = alpha_ref_amp * cos(2 pi fr t)``; ``speed_scale``
    converts Omega to alpha. Rows are ``[y, ydot, omega, alpha_ref]``.
    """
    y, yd, q, qd = state[0], state[1], state[2], state[3]
    integ = 0.0
    prev = 0.0
    rows = 0
    w = 2.0 * math.pi * fr_hz
    for i in range(nsteps):
        t = i * dt
        err = alpha_ref_amp * math.cos(w * t) - omega * speed_scale
        if i == 0:
            prev = err
        duty, integ = pid_update(err, integ, prev, kp, ki, kd, dt, ilim, duty_limit)
        prev = err
        omega_ss = omega_max * duty / duty_limit
        r1, r2, r4, om_end = _motor_rates(omega, omega_ss, tau, dt)
        y, yd, q, qd = _rk4(y, yd, q, qd, r1, r2, r4, dt, c)
        omega = om_end
        if _bad(y, yd, q, qd):
            state[0], state[1], state[2], state[3] = y, yd, q, qd
            return DIVERGED, omega, rows
        if rec_every > 0 and (i + 1) % rec_every == 0:
            rec[rows, 0] = y
            rec[rows, 1] = yd
            rec[rows, 2] = omega
            rec[rows, 3] = alpha_ref_amp * math.cos(w * (t + dt))
            rows += 1
    state[0], state[1], state[2], state[3] = y, yd, q, qd
    return OK, omega, rows


def empty_rec(n_rows, width=3):
    return np.zeros((max(int(n_rows), 1), width))
