"""Rotary actuator: PWM duty command -> cylinder speed through a
first-order lag, with commands held on a fixed grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CommandError, ParameterDomainError, SchedulingError

DEFAULT_LAG_TAU_S = 0.2 / 3.0   # 95 % rise in 200 ms
DEFAULT_DUTY_LIMIT = 0.4
DEFAULT_INTERVAL_S = 0.1


@dataclass(frozen=True)
class MotorParams:
    omega_max_rad_per_s: float
    lag_tau_s: float = DEFAULT_LAG_TAU_S
    duty_limit: float = DEFAULT_DUTY_LIMIT
    command_interval_s: float = DEFAULT_INTERVAL_S
    deadband: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.omega_max_rad_per_s) and self.omega_max_rad_per_s > 0):
            raise ParameterDomainError("omega_max must be positive")
        if not self.lag_tau_s > 0:
            raise ParameterDomainError("lag_tau_s must be positive")
        if not 0 < self.duty_limit <= 1:
            raise ParameterDomainError("duty_limit must lie in (0, 1]")
        if not self.command_interval_s > 0:
            raise ParameterDomainError("command_interval_s must be positive")
        if not 0 <= self.deadband < self.duty_limit:
            raise ParameterDomainError("deadband must lie in [0, duty_limit)")

    @classmethod
    def for_flow(cls, velocity_m_per_s: float, diameter_m: float, alpha_at_limit: float = 1.0,
                 **kw) -> "MotorParams":
        """omega_max such that full duty gives ``alpha_at_limit`` at this flow speed."""
        return cls(alpha_at_limit * 2.0 * velocity_m_per_s / diameter_m, **kw)

    def with_lag(self, tau: float) -> "MotorParams":
        return replace(self, lag_tau_s=tau)


@dataclass
class MotorState:
    omega_rad_per_s: float = 0.0
    held_duty: float = 0.0
    time_since_command_s: float = 0.0


def clamp_duty(duty: float, limit: float = DEFAULT_DUTY_LIMIT) -> float:
    if not math.isfinite(duty):
        raise CommandError(f"non-finite duty command {duty}")
    return min(max(float(duty), -limit), limit)


def steady_speed(duty: float, p: MotorParams) -> float:
    """Linear duty -> speed map; the optional deadband zeroes small commands
    and rescales the rest so the endpoints are unchanged."""
    if abs(duty) > p.duty_limit + 1e-12:
        raise CommandError(f"|duty| = {abs(duty)} exceeds {p.duty_limit}")
    if p.deadband > 0:
        mag = max(abs(duty) - p.deadband, 0.0) * p.duty_limit / (p.duty_limit - p.deadband)
        duty = math.copysign(mag, duty)
    return p.omega_max_rad_per_s * duty / p.duty_limit


def motor_step(m: MotorState, dt: float, p: MotorParams) -> MotorState:
    """Exact exponential relaxation toward the held command's steady speed."""
    if not dt > 0:
        raise ParameterDomainError("dt must be positive")
    target = steady_speed(m.held_duty, p)
    om = target + (m.omega_rad_per_s - target) * math.exp(-dt / p.lag_tau_s)
    return MotorState(om, m.held_duty, m.time_since_command_s + dt)


def on_grid(t_now: float, interval: float, tol: float = 1e-9) -> bool:
    k = round(t_now / interval)
    return abs(t_now - k * interval) <= tol * max(1.0, abs(t_now))


def hold_command(m: MotorState, duty: float, t_now: float, p: MotorParams) -> MotorState:
    if not on_grid(t_now, p.command_interval_s):
        raise SchedulingError(f"command at t = {t_now} s is off the {p.command_interval_s} s grid")
    return MotorState(m.omega_rad_per_s, clamp_duty(duty, p.duty_limit), 0.0)


def normalized_speed(omega, velocity_m_per_s: float, diameter_m: float):
    if not velocity_m_per_s > 0:
        raise ParameterDomainError("normalized speed needs V > 0")
    return np.asarray(omega) * diameter_m / (2.0 * velocity_m_per_s) if np.ndim(omega) \
        else float(omega) * diameter_m / (2.0 * velocity_m_per_s)
