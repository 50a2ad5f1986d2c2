"""Open-loop sinusoidal rotation tracked by a speed PID, and the
forcing-frequency sweep built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .actuator import MotorParams
from .analysis import steady_amplitude
from .errors import DivergenceError, ParameterDomainError
from .plant import STEADY_FRACTION, PlantParams, default_params, min_duration
from .records import RunRecord


@dataclass(frozen=True)
class SineCommand:
    alpha0: float
    fr_hz: float

    def __post_init__(self):
        if not self.alpha0 >= 0:
            raise ParameterDomainError("alpha0 must be non-negative")
        if not self.fr_hz > 0:
            raise ParameterDomainError("fr_hz must be positive")


@dataclass(frozen=True)
class SpeedPidGains:
    kp: float
    ki: float
    kd: float = 0.0
    integral_limit: float = 1.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ParameterDomainError("PID gains must be non-negative")
        if not self.integral_limit > 0:
            raise ParameterDomainError("integral_limit must be positive")

    @classmethod
    def tuned(cls, f_n: float, motor: MotorParams, alpha_per_duty: float,
              bandwidth_factor: float = 5.0) -> "SpeedPidGains":
        """Place the proportional closed-loop pole of the lagged motor at
        ``bandwidth_factor * f_n``; ki = kp * f_n; integral bounded so that
        the integral term alone can reach full duty."""
        wc = 2.0 * math.pi * bandwidth_factor * f_n
        kp = (wc * motor.lag_tau_s - 1.0) / alpha_per_duty
        if kp <= 0:
            raise ParameterDomainError("bandwidth target below the open-loop motor bandwidth")
        ki = kp * f_n
        return cls(kp, ki, 0.0, motor.duty_limit / ki)


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def sinusoidal_reference(t, cmd: SineCommand, velocity_m_per_s: float, diameter_m: float):
    if not velocity_m_per_s > 0:
        raise ParameterDomainError("V must be positive")
    return 2.0 * velocity_m_per_s / diameter_m * cmd.alpha0 * np.cos(2.0 * np.pi * cmd.fr_hz * np.asarray(t))


def pid_speed_control(omega_meas: float, omega_ref: float, gains: SpeedPidGains, dt: float,
                      state: PidState, speed_scale: float = 1.0,
                      duty_limit: float = 0.4):
    """One PID update on the normalized speed error ``speed_scale * (ref - meas)``."""
    if not dt > 0:
        raise ParameterDomainError("dt must be positive")
    err = speed_scale * (omega_ref - omega_meas)
    prev = err if state.prev_error is None else state.prev_error
    duty, integ = K.pid_update(err, state.integral, prev, gains.kp, gains.ki, gains.kd, dt,
                               gains.integral_limit, duty_limit)
    return duty, PidState(integ, err)


def run_sine(cmd: SineCommand, params: PlantParams, motor: MotorParams, gains: SpeedPidGains,
             duration_s: float = 50.0, dt: float = 1e-3, sample_dt: float = 0.01,
             y0_over_d: float = 0.01) -> RunRecord:
    """Plant + motor + PID tracking ``alpha0 cos(2 pi fr t)`` from rest."""
    d = params.cylinder.diameter_m
    scale = params.alpha_scale()
    every = max(1, int(round(sample_dt / dt)))
    n = int(round(duration_s / dt))
    n -= n % every
    state = np.array([y0_over_d * d, 0.0, 0.0, 0.0])
    rec = K.empty_rec(n // every, 4)
    status, _, rows = K.advance_pid(state, 0.0, n, dt, params.coefficients(), motor.lag_tau_s,
                                    motor.omega_max_rad_per_s, motor.duty_limit, cmd.alpha0,
                                    cmd.fr_hz, scale, gains.kp, gains.ki, gains.kd,
                                    gains.integral_limit, every, rec)
    if status != K.OK:
        raise DivergenceError(f"sine run diverged at fr = {cmd.fr_hz} Hz")
    rec = rec[:rows]
    t = (np.arange(rows) + 1) * every * dt
    y = rec[:, 0] / d
    alpha = rec[:, 2] * scale
    # duty is not logged by the kernel; the recorded column carries the reference
    return RunRecord(t, y, rec[:, 1] / (params.f_n * d), rec[:, 3], alpha, -np.abs(y),
                     meta={"f_n_hz": params.f_n, "dt_s": every * dt, "fr_hz": cmd.fr_hz,
                           "alpha0": cmd.alpha0, "duty_column": "alpha_ref"})


def tracking_rms(record: RunRecord, window_fraction: float = STEADY_FRACTION) -> float:
    n0 = int(len(record.t_s) * (1.0 - window_fraction))
    e = record.duty[n0:] - record.alpha[n0:]
    return float(np.sqrt(np.mean(e * e)))


def frequency_sweep(ratios, alpha0: float = 1.0, params: PlantParams | None = None,
                    motor: MotorParams | None = None, gains: SpeedPidGains | None = None,
                    duration_s: float = 50.0):
    """Steady A/D for each forcing ratio f_r/f_n; returns (ratio, A/D, tracking_rms)."""
    params = params or default_params(8.0)
    motor = motor or MotorParams.for_flow(params.velocity, params.cylinder.diameter_m)
    alpha_per_duty = motor.omega_max_rad_per_s * params.alpha_scale() / motor.duty_limit
    gains = gains or SpeedPidGains.tuned(params.f_n, motor, alpha_per_duty)
    duration_s = max(duration_s, min_duration(params))
    out = []
    for r in ratios:
        r = float(r)
        if not 0.2 <= r <= 3.0:
            raise ParameterDomainError(f"ratio {r} outside [0.2, 3.0]")
        rec = run_sine(SineCommand(alpha0, r * params.f_n), params, motor, gains, duration_s)
        out.append((r, steady_amplitude(rec, STEADY_FRACTION), tracking_rms(rec)))
    return out
