"""Reduced-order VIV plant: a spring-mounted cylinder coupled to a van der
Pol wake oscillator, with cylinder rotation forcing the wake.

Structure::

    (M + Ca*Md) Y'' + (C + c_fluid) Y' + K Y = 1/4 rho V^2 D L CL0 q

Wake::

    q'' + eps*ws*(q^2 - 1) q' + ws^2 q = (A/D) Y'' + kappa*ws*alpha'

with ``ws = 2 pi St V / D``, ``c_fluid = gamma * rho * D^2 * ws * L`` and
``alpha = Omega D / (2 V)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import CalibrationError, DivergenceError, IdentificationError, ParameterDomainError
from .records import RunRecord

TWO_PI = 2.0 * math.pi

# Rig values: D = 17.5 mm, L = 160 mm, M = 1095 g, Md = 36.007 g (m = 30.4),
# f_n = 1.96 Hz (still water), zeta_air = 1.02e-2.
RIG_DIAMETER_M = 0.0175
RIG_LENGTH_M = 0.160
RIG_MASS_KG = 1.095
RIG_DISPLACED_MASS_KG = 0.036007
RIG_FN_HZ = 1.96
RIG_ZETA_AIR = 1.02e-2


def _positive(name, *values):
    for v in values:
        if not (np.isfinite(v) and v > 0):
            raise ParameterDomainError(f"{name} must be positive and finite, got {v}")


def natural_frequency(stiffness: float, mass: float) -> float:
    _positive("stiffness and mass", stiffness, mass)
    return math.sqrt(stiffness / mass) / TWO_PI


def damping_ratio(damping: float, stiffness: float, mass: float) -> float:
    if not (np.isfinite(damping) and damping >= 0):
        raise ParameterDomainError(f"damping must be non-negative, got {damping}")
    _positive("stiffness and mass", stiffness, mass)
    return damping / (2.0 * math.sqrt(stiffness * mass))


def reduced_velocity(velocity: float, f_n: float, diameter: float) -> float:
    _positive("f_n and diameter", f_n, diameter)
    return velocity / (f_n * diameter)


def skop_griffin(strouhal: float, mass_ratio: float, zeta: float) -> float:
    _positive("Strouhal number", strouhal)
    if mass_ratio < 0 or zeta < 0:
        raise ParameterDomainError("mass ratio and damping ratio must be non-negative")
    return 2.0 * math.pi ** 3 * strouhal ** 2 * (1.0 + mass_ratio) * zeta


# -- parameter containers ----------------------------------------------------

@dataclass(frozen=True)
class CylinderProperties:
    diameter_m: float
    immersed_length_m: float
    oscillating_mass_kg: float
    displaced_mass_kg: float
    stiffness_N_per_m: float
    structural_damping_Ns_per_m: float

    def __post_init__(self):
        _positive("cylinder properties", self.diameter_m, self.immersed_length_m,
                  self.oscillating_mass_kg, self.displaced_mass_kg,
                  self.stiffness_N_per_m, self.structural_damping_Ns_per_m)
        aspect = self.immersed_length_m / self.diameter_m
        if not 5.0 <= aspect <= 20.0:
            raise ParameterDomainError(f"L/D = {aspect:.2f} outside [5, 20]")
        if self.mass_ratio <= 1.0:
            raise ParameterDomainError(f"mass ratio {self.mass_ratio:.3f} must exceed 1")

    @property
    def mass_ratio(self) -> float:
        return self.oscillating_mass_kg / self.displaced_mass_kg

    @property
    def zeta_air(self) -> float:
        return damping_ratio(self.structural_damping_Ns_per_m, self.stiffness_N_per_m,
                             self.oscillating_mass_kg)

    @classmethod
    def from_frequency(cls, f_n_hz=RIG_FN_HZ, zeta_air=RIG_ZETA_AIR,
                       reference="still_water", added_mass_coeff=1.0,
                       diameter_m=RIG_DIAMETER_M, immersed_length_m=RIG_LENGTH_M,
                       oscillating_mass_kg=RIG_MASS_KG,
                       displaced_mass_kg=RIG_DISPLACED_MASS_KG) -> "CylinderProperties":
        """Derive K and C from a measured frequency and air damping ratio.

        ``reference="still_water"`` places ``f_n_hz`` on the added-mass
        system; ``"air"`` places it on the bare oscillating mass.
        """
        _positive("f_n", f_n_hz)
        mass = _reference_mass(reference, oscillating_mass_kg, displaced_mass_kg, added_mass_coeff)
        k = mass * (TWO_PI * f_n_hz) ** 2
        c = zeta_air * 2.0 * math.sqrt(k * oscillating_mass_kg)
        return cls(diameter_m, immersed_length_m, oscillating_mass_kg, displaced_mass_kg, k, c)


def _reference_mass(reference, m, md, ca):
    if reference == "still_water":
        return m + ca * md
    if reference == "air":
        return m
    raise ParameterDomainError(f"frequency reference must be 'still_water' or 'air', not {reference!r}")


@dataclass(frozen=True)
class FlowConditions:
    velocity_m_per_s: float
    density_kg_per_m3: float = 1000.0
    strouhal: float = 0.21

    def __post_init__(self):
        if not 0.01 <= self.velocity_m_per_s <= 1.0:
            raise ParameterDomainError(f"velocity {self.velocity_m_per_s} outside [0.01, 1.0] m/s")
        _positive("density", self.density_kg_per_m3)
        if not 0.1 <= self.strouhal <= 0.3:
            raise ParameterDomainError(f"Strouhal number {self.strouhal} outside [0.1, 0.3]")


@dataclass(frozen=True)
class WakeModelParams:
    vdp_epsilon: float = 1.66
    coupling_A: float = 22.0
    base_lift_coeff: float = 1.02
    rotation_coupling: float = 7.6
    added_mass_coeff: float = 1.0
    fluid_damping_coeff: float = 1.08

    def __post_init__(self):
        vals = (self.vdp_epsilon, self.coupling_A, self.base_lift_coeff, self.rotation_coupling,
                self.added_mass_coeff, self.fluid_damping_coeff)
        if not all(np.isfinite(v) for v in vals):
            raise ParameterDomainError("wake parameters must be finite")
        _positive("eps_w, A_w and C_L0", self.vdp_epsilon, self.coupling_A, self.base_lift_coeff)
        if self.rotation_coupling < 0 or self.added_mass_coeff < 0 or self.fluid_damping_coeff < 0:
            raise ParameterDomainError("kappa_r, C_a and gamma_f must be non-negative")


@dataclass
class PlantState:
    y_m: float = 0.0
    ydot_m_per_s: float = 0.0
    wake_q: float = 0.0
    wake_qdot: float = 0.0
    time_s: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.y_m, self.ydot_m_per_s, self.wake_q, self.wake_qdot])

    @classmethod
    def from_array(cls, arr, time_s=0.0) -> "PlantState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]), float(time_s))

    def check(self):
        a = self.as_array()
        if not np.all(np.isfinite(a)) or abs(self.wake_q) >= K.Q_GUARD:
            raise DivergenceError(f"plant state diverged at t = {self.time_s:.3f} s: {a}")
        return self


@dataclass(frozen=True)
class PlantParams:
    """Everything the plant needs: geometry, flow, wake model and medium.

    ``medium`` is ``"flow"`` (the default), ``"still_water"`` or ``"air"``.
    ``frequency_reference`` says which system ``f_n`` refers to.
    """

    cylinder: CylinderProperties = field(default_factory=CylinderProperties.from_frequency)
    flow: FlowConditions = field(default_factory=lambda: FlowConditions(
        8.0 * RIG_FN_HZ * RIG_DIAMETER_M))
    wake: WakeModelParams = field(default_factory=WakeModelParams)
    medium: str = "flow"
    frequency_reference: str = "still_water"

    @property
    def f_n(self) -> float:
        """Reference natural frequency used for all normalizations."""
        cyl = self.cylinder
        mass = _reference_mass(self.frequency_reference, cyl.oscillating_mass_kg,
                               cyl.displaced_mass_kg, self.wake.added_mass_coeff)
        return natural_frequency(cyl.stiffness_N_per_m, mass)

    @property
    def velocity(self) -> float:
        return 0.0 if self.medium != "flow" else self.flow.velocity_m_per_s

    @property
    def shedding_omega(self) -> float:
        return TWO_PI * self.flow.strouhal * self.velocity / self.cylinder.diameter_m

    @property
    def reduced_velocity(self) -> float:
        return reduced_velocity(self.velocity, self.f_n, self.cylinder.diameter_m)

    def at_reduced_velocity(self, U: float) -> "PlantParams":
        v = U * self.f_n * self.cylinder.diameter_m
        return replace(self, flow=replace(self.flow, velocity_m_per_s=v), medium="flow")

    def with_wake(self, **changes) -> "PlantParams":
        return replace(self, wake=replace(self.wake, **changes))

    def effective_mass(self) -> float:
        cyl = self.cylinder
        if self.medium == "air":
            return cyl.oscillating_mass_kg
        return cyl.oscillating_mass_kg + self.wake.added_mass_coeff * cyl.displaced_mass_kg

    def coefficients(self) -> np.ndarray:
        cyl, fl, wk = self.cylinder, self.flow, self.wake
        d, length = cyl.diameter_m, cyl.immersed_length_m
        v = self.velocity
        ws = self.shedding_omega
        c_fluid = wk.fluid_damping_coeff * fl.density_kg_per_m3 * d * d * ws * length
        f0 = 0.25 * fl.density_kg_per_m3 * v * v * d * length * wk.base_lift_coeff
        wake_on = 1.0 if v > 0 else 0.0
        return np.array([
            self.effective_mass(), cyl.structural_damping_Ns_per_m + c_fluid,
            cyl.stiffness_N_per_m, f0, wk.vdp_epsilon, ws, wk.coupling_A / d,
            wk.rotation_coupling * math.pi * fl.strouhal * wake_on, wake_on,
        ])

    def alpha_scale(self) -> float:
        """Multiply Omega by this to get alpha = Omega D / (2 V)."""
        if self.velocity <= 0:
            raise ParameterDomainError("normalized rotation needs a non-zero flow speed")
        return self.cylinder.diameter_m / (2.0 * self.velocity)

    def mechanical_energy(self, y, ydot):
        """Structural energy with the effective (added-mass) inertia."""
        return 0.5 * self.effective_mass() * np.square(ydot) + 0.5 * self.cylinder.stiffness_N_per_m * np.square(y)


def default_params(U: float | None = None) -> PlantParams:
    p = PlantParams()
    return p if U is None else p.at_reduced_velocity(U)


# -- dynamics ----------------------------------------------------------------

def plant_derivatives(s: PlantState, omega_rate: float, params: PlantParams) -> np.ndarray:
    """Time derivatives of ``(Y, Y', q, q')``.

    ``omega_rate`` is dOmega/dt of the cylinder rotation in rad/s^2; the
    wake sees it as ``kappa * ws * d/dt[Omega D / (2V)]``.
    """
    s.check()
    return np.array(K.rhs(s.y_m, s.ydot_m_per_s, s.wake_q, s.wake_qdot, float(omega_rate),
                          params.coefficients()))


def rk4_step(s: PlantState, omega_provider, dt: float, params: PlantParams) -> PlantState:
    """Classical RK4 step. ``omega_provider(t)`` returns dOmega/dt at ``t``."""
    if not 0.0 < dt <= 5e-3:
        raise ParameterDomainError(f"dt must lie in (0, 5 ms], got {dt}")
    c = params.coefficients()
    x = s.as_array()
    t = s.time_s

    def f(xx, tt):
        return np.array(K.rhs(xx[0], xx[1], xx[2], xx[3], float(omega_provider(tt)), c))

    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    out = PlantState.from_array(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), t + dt)
    return out.check()


def integrate(state: np.ndarray, params: PlantParams, n_steps: int, dt: float = 1e-3,
              omega: float = 0.0, omega_ss: float = 0.0, tau: float = 0.2 / 3,
              rec_every: int = 0, coefficients=None):
    """Compiled multi-step advance with a first-order motor.

    Mutates ``state`` (length-4 array) and returns ``(omega_end, rows)``
    where ``rows`` holds ``[y, ydot, omega]`` every ``rec_every`` steps.
    """
    c = params.coefficients() if coefficients is None else coefficients
    n_rows = n_steps // rec_every if rec_every > 0 else 0
    rec = K.empty_rec(n_rows)
    status, om, rows = K.advance(state, float(omega), float(omega_ss), float(tau), int(n_steps),
                                 float(dt), c, int(rec_every), rec)
    if status != K.OK:
        raise DivergenceError(f"plant diverged; state = {state}")
    return om, rec[:rows]


# -- experiments -------------------------------------------------------------

STEADY_FRACTION = 0.4
MIN_SETTLE_PERIODS = 20.0


def min_duration(params: PlantParams) -> float:
    """Settling time plus a steady window: 20 T0 must precede the last 40 %."""
    return MIN_SETTLE_PERIODS / params.f_n / (1.0 - STEADY_FRACTION)


def simulate_uncontrolled(U: float, duration_s: float = 50.0, params: PlantParams | None = None,
                          dt: float = 1e-3, sample_dt: float = 0.01,
                          y0_over_d: float = 0.01) -> RunRecord:
    """Free VIV response (no rotation) from ``Y = y0_over_d * D`` at rest."""
    if not 2.0 <= U <= 12.0:
        raise ParameterDomainError(f"reduced velocity {U} outside [2, 12]")
    p = (params or default_params()).at_reduced_velocity(U)
    duration_s = max(duration_s, min_duration(p))
    every = max(1, int(round(sample_dt / dt)))
    n = int(round(duration_s / dt))
    n -= n % every
    d = p.cylinder.diameter_m
    state = np.array([y0_over_d * d, 0.0, 0.0, 0.0])
    _, rows = integrate(state, p, n, dt, rec_every=every)
    t = (np.arange(rows.shape[0]) + 1) * every * dt
    y = rows[:, 0] / d
    z = np.zeros_like(t)
    return RunRecord(t, y, rows[:, 1] / (p.f_n * d), z, z.copy(), -np.abs(y),
                     meta={"f_n_hz": p.f_n, "dt_s": every * dt, "U": U})


def amplitude_sweep(U_values, params: PlantParams | None = None, duration_s: float = 50.0):
    from .analysis import steady_amplitude
    out = []
    for U in U_values:
        rec = simulate_uncontrolled(float(U), duration_s, params)
        out.append((float(U), steady_amplitude(rec, STEADY_FRACTION)))
    return out


def free_decay(medium: str, y0_m: float, params: PlantParams | None = None,
               dt: float = 1e-3, n_periods: int = 20):
    """Pluck test without flow; returns ``(f_n_hz, zeta)``.

    Frequency comes from the mean zero-crossing interval (corrected from
    damped to undamped), damping from the log decrement over the peaks.
    """
    if medium not in ("air", "still_water"):
        raise ParameterDomainError(f"medium must be 'air' or 'still_water', not {medium!r}")
    p = replace(params or default_params(), medium=medium)
    if not 0.0 < y0_m <= p.cylinder.diameter_m:
        raise ParameterDomainError("initial displacement must lie in (0, D]")
    c = p.coefficients()
    f_guess = math.sqrt(c[2] / c[0]) / TWO_PI
    n = int(math.ceil(n_periods / f_guess / dt))
    state = np.array([y0_m, 0.0, 0.0, 0.0])
    _, rows = integrate(state, p, n, dt, rec_every=1, coefficients=c)
    y = np.concatenate([[y0_m], rows[:, 0]])
    return identify_decay(y, dt)


def identify_decay(y, dt: float, min_peaks: int = 5):
    y = np.asarray(y, dtype=float)
    s = np.sign(y)
    idx = np.where((s[:-1] > 0) & (s[1:] <= 0) | (s[:-1] < 0) & (s[1:] >= 0))[0]
    if idx.size < 3:
        raise IdentificationError("too few zero crossings")
    # linear interpolation of each crossing
    tc = (idx + y[idx] / (y[idx] - y[idx + 1])) * dt
    half_period = np.mean(np.diff(tc))
    f_damped = 1.0 / (2.0 * half_period)
    peaks = []
    for a, b in zip(idx[:-1], idx[1:]):
        seg = np.abs(y[a + 1:b + 1])
        if seg.size == 0:
            continue
        k = a + 1 + int(np.argmax(seg))
        if 0 < k < y.size - 1:
            # parabolic refinement of the extremum
            y0, y1, y2 = abs(y[k - 1]), abs(y[k]), abs(y[k + 1])
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            peaks.append(y1 - 0.25 * (y0 - y2) * off)
    peaks = np.array(peaks)
    peaks = peaks[peaks > 0]
    if peaks.size < min_peaks:
        raise IdentificationError(f"only {peaks.size} peaks detected; need {min_peaks}")
    # successive extrema are half a period apart
    delta = 2.0 * math.log(peaks[0] / peaks[-1]) / (peaks.size - 1)
    zeta = delta / math.sqrt(4.0 * math.pi ** 2 + delta ** 2)
    return f_damped / math.sqrt(1.0 - zeta ** 2), zeta


# -- calibration -------------------------------------------------------------

LOCKIN_U_GRID = tuple(np.round(np.arange(3.0, 10.01, 0.5), 2))
SWEEP_RATIOS = (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)


@dataclass(frozen=True)
class CalibrationTargets:
    peak_a_over_d: float = 0.6
    peak_tol: float = 0.05
    band: tuple = (4.5, 9.0)
    band_threshold: float = 0.1
    sweep_peak: float = 0.65
    sweep_tol: float = 0.1
    sweep_high_max: float = 0.1
    dip_margin: float = 0.1
    U_train: float = 8.0
    U_values: tuple = LOCKIN_U_GRID
    epsilon_grid: tuple = (1.5, 1.66, 1.8)
    coupling_grid: tuple = (18.0, 20.0, 22.0, 24.0)
    kappa_grid: tuple = tuple(np.round(np.arange(6.6, 8.41, 0.2), 2))


def lockin_score(U_values, amps, t: CalibrationTargets):
    """Squared peak error plus one unit per band point below threshold."""
    U = np.asarray(U_values, dtype=float)
    a = np.asarray(amps, dtype=float)
    lo, hi = t.band
    in_band = (U >= lo - 1e-9) & (U <= hi + 1e-9)
    misses = int(np.sum(a[in_band] <= t.band_threshold))
    high = np.where(a > t.band_threshold)[0]
    gaps = int(np.sum(np.diff(high) > 1)) if high.size else 1
    peak = float(a.max()) if a.size else 0.0
    return (peak - t.peak_a_over_d) ** 2 + misses + gaps, peak, misses + gaps == 0


def sweep_ok(amps, t: CalibrationTargets) -> bool:
    """Lock-on response shape on the standard ratio grid: single peak at 1.0, dip at 0.8, small at 1.6."""
    s = dict(zip(SWEEP_RATIOS, amps))
    top = max(amps)
    return (s[1.0] == top and abs(s[1.0] - t.sweep_peak) <= t.sweep_tol
            and s[0.8] < s[0.6] - t.dip_margin and s[0.8] < s[1.0] - t.dip_margin and s[1.6] < t.sweep_high_max)


def calibrate(targets: CalibrationTargets | None = None, params: PlantParams | None = None,
              log=None):
    """Two-stage grid search.

    Stage one picks (eps_w, A_w) against the lock-in targets; stage two
    picks kappa_r from the middle of the widest run of grid values that
    give the lock-on sweep shape. Returns ``(WakeModelParams, report)``;
    raises CalibrationError with the best candidate when a stage misses.
    """
    from .baseline import frequency_sweep

    t = targets or CalibrationTargets()
    base = params or default_params()
    report = {"targets": asdict(t), "stage1": [], "stage2": []}
    best = None
    for eps in t.epsilon_grid:
        for a_w in t.coupling_grid:
            p = base.with_wake(vdp_epsilon=float(eps), coupling_A=float(a_w))
            try:
                amps = [a for _, a in amplitude_sweep(t.U_values, p)]
            except DivergenceError:
                continue
            score, peak, ok = lockin_score(t.U_values, amps, t)
            report["stage1"].append({"vdp_epsilon": eps, "coupling_A": a_w, "score": score,
                                     "peak": peak, "band_ok": ok, "amplitudes": amps})
            if log:
                log(f"stage1 eps={eps} A={a_w} peak={peak:.3f} band_ok={ok}")
            if best is None or score < best[0]:
                best = (score, peak, ok, p)
    if best is None:
        raise CalibrationError("every stage-one candidate diverged", None, report)
    _, peak, ok, p1 = best
    if not ok or abs(peak - t.peak_a_over_d) > t.peak_tol:
        raise CalibrationError(f"lock-in targets not met: best peak {peak:.3f}, band_ok={ok}",
                               p1.wake, report)
    feasible = []
    for kappa in t.kappa_grid:
        p = p1.with_wake(rotation_coupling=float(kappa)).at_reduced_velocity(t.U_train)
        try:
            amps = [a for _, a, _ in frequency_sweep(SWEEP_RATIOS, 1.0, p)]
        except DivergenceError:
            amps = None
        good = amps is not None and sweep_ok(amps, t)
        report["stage2"].append({"rotation_coupling": kappa, "amplitudes": amps, "shape_ok": good})
        if log:
            log(f"stage2 kappa={kappa} shape_ok={good}")
        feasible.append(good)
    runs, start = [], None
    for i, g in enumerate(feasible + [False]):
        if g and start is None:
            start = i
        elif not g and start is not None:
            runs.append((i - start, start, i - 1))
            start = None
    if not runs:
        raise CalibrationError("no rotation coupling reproduces the lock-on sweep shape",
                               p1.wake, report)
    _, i0, i1 = max(runs, key=lambda r: (r[0], -r[1]))
    kappa = float(t.kappa_grid[(i0 + i1) // 2])
    wake = replace(p1.wake, rotation_coupling=kappa)
    report["selected"] = asdict(wake)
    return wake, report
