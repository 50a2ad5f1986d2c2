"""Flat ``section.key = value`` experiment configuration.

Lines starting with ``#`` are comments. Values are parsed to the type of
the schema default; lists are comma separated. Unknown keys and values
that fail validation are reported together.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .actuator import MotorParams
from .control import EpisodeConfig, ObservationSpec
from .errors import ConfigError
from .plant import (RIG_DIAMETER_M, RIG_DISPLACED_MASS_KG, RIG_FN_HZ, RIG_LENGTH_M,
                    RIG_MASS_KG, RIG_ZETA_AIR, CalibrationTargets, CylinderProperties,
                    FlowConditions, PlantParams, WakeModelParams)
from .ppo import PpoConfig


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 < v <= 1


# key -> (default, validator or None, help)
SCHEMA = {
    "plant.diameter_m": (RIG_DIAMETER_M, _pos, "cylinder diameter D"),
    "plant.immersed_length_m": (RIG_LENGTH_M, _pos, "immersed length L"),
    "plant.oscillating_mass_kg": (RIG_MASS_KG, _pos, "oscillating mass M"),
    "plant.displaced_mass_kg": (RIG_DISPLACED_MASS_KG, _pos, "displaced mass M_d"),
    "plant.f_n_hz": (RIG_FN_HZ, _pos, "measured natural frequency"),
    "plant.zeta_air": (RIG_ZETA_AIR, _pos, "structural damping ratio in air"),
    "plant.frequency_reference": ("still_water", lambda v: v in ("still_water", "air"),
                                  "system the measured f_n refers to"),
    "flow.density_kg_per_m3": (1000.0, _pos, "fluid density"),
    "flow.strouhal": (0.21, lambda v: 0.1 <= v <= 0.3, "Strouhal number"),
    "wake.vdp_epsilon": (WakeModelParams.vdp_epsilon, _pos, ""),
    "wake.coupling_A": (WakeModelParams.coupling_A, _pos, ""),
    "wake.base_lift_coeff": (WakeModelParams.base_lift_coeff, _pos, ""),
    "wake.rotation_coupling": (WakeModelParams.rotation_coupling, _nonneg, ""),
    "wake.added_mass_coeff": (WakeModelParams.added_mass_coeff, _nonneg, ""),
    "wake.fluid_damping_coeff": (WakeModelParams.fluid_damping_coeff, _nonneg, ""),
    "motor.lag_tau_s": (0.2 / 3.0, _pos, "first-order motor time constant"),
    "motor.duty_limit": (0.4, _unit, ""),
    "motor.command_interval_s": (0.1, _pos, ""),
    "motor.deadband": (0.0, _nonneg, "duty deadband"),
    "motor.alpha_at_limit": (1.0, _pos, "normalized speed at full duty, training flow"),
    "ppo.gamma": (0.99, _unit, ""),
    "ppo.gae_lambda": (0.95, _unit, ""),
    "ppo.clip_eps": (0.2, lambda v: 0 < v <= 0.5, ""),
    "ppo.epochs_per_update": (10, _pos, ""),
    "ppo.minibatch_size": (32, _pos, ""),
    "ppo.lr_actor": (3e-4, _pos, ""),
    "ppo.lr_critic": (3e-4, _pos, ""),
    "ppo.entropy_coef": (0.003, _nonneg, ""),
    "ppo.value_coef": (0.5, _nonneg, ""),
    "ppo.max_grad_norm": (0.5, _nonneg, "0 disables clipping"),
    "ppo.normalize_advantages": (True, None, ""),
    "ppo.activation": ("tanh", lambda v: v in ("tanh", "relu", "softplus", "identity"), ""),
    "ppo.init_log_std": (-0.5, lambda v: -5 <= v <= 2, ""),
    "loop.n_past_actions": (0, _nonneg, ""),
    "loop.duration_periods": (25.0, _pos, ""),
    "loop.steps_per_episode": (128, _pos, ""),
    "loop.physics_dt_s": (1e-3, lambda v: 0 < v <= 5e-3, ""),
    "loop.eval_duration_s": (50.0, _pos, ""),
    "loop.eval_lead_in_s": (10.0, _nonneg, ""),
    "loop.reduced_velocity": (8.0, lambda v: 2 <= v <= 12, "training flow speed U"),
    "loop.reward_mode": ("end", lambda v: v in ("end", "mean"), ""),
    "loop.obs_noise_y": (0.0, _nonneg, ""),
    "loop.obs_noise_ydot": (0.0, _nonneg, ""),
    "loop.episodes": (400, _nonneg, ""),
    "calibration.peak_a_over_d": (0.6, _nonneg, ""),
    "calibration.peak_tol": (0.05, _pos, ""),
    "calibration.band_lo": (4.5, _pos, ""),
    "calibration.band_hi": (9.0, _pos, ""),
    "calibration.sweep_peak": (0.65, _pos, ""),
    "calibration.epsilon_grid": (CalibrationTargets.epsilon_grid, None, ""),
    "calibration.coupling_grid": (CalibrationTargets.coupling_grid, None, ""),
    "calibration.kappa_grid": (tuple(float(k) for k in CalibrationTargets.kappa_grid), None, ""),
    "lockin.U_values": (tuple(float(u) for u in np.arange(3.0, 10.01, 0.5)), None, ""),
    "lockin.duration_s": (50.0, _pos, ""),
    "sweep.ratios": ((0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6), None, ""),
    "sweep.alpha0": (1.0, _nonneg, ""),
    "sweep.duration_s": (50.0, _pos, ""),
    "decay.y0_over_d": (0.2, lambda v: 0 < v <= 1, ""),
    "run.seed": (0, _nonneg, ""),
    "run.output_dir": ("", None, "empty: $VIVRL_OUT or ./vivrl_out"),
    "run.calibration_file": ("", None, "empty: <output>/calibrate/wake_params.cfg"),
}

# keys that never change results and stay out of the config hash
UNHASHED = ("run.output_dir", "run.seed")


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split(",") if x.strip())
    return text


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kv) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key}", [key])
            vals[key] = v
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    # -- typed views -------------------------------------------------------
    def cylinder(self) -> CylinderProperties:
        v = self.values
        return CylinderProperties.from_frequency(
            v["plant.f_n_hz"], v["plant.zeta_air"], v["plant.frequency_reference"],
            v["wake.added_mass_coeff"], v["plant.diameter_m"], v["plant.immersed_length_m"],
            v["plant.oscillating_mass_kg"], v["plant.displaced_mass_kg"])

    def wake(self) -> WakeModelParams:
        v = self.values
        return WakeModelParams(**{f.name: v[f"wake.{f.name}"] for f in fields(WakeModelParams)})

    def plant(self) -> PlantParams:
        """Plant at the training flow speed."""
        v = self.values
        base = PlantParams(self.cylinder(), FlowConditions(0.1, v["flow.density_kg_per_m3"],
                                                           v["flow.strouhal"]),
                           self.wake(), "flow", v["plant.frequency_reference"])
        return base.at_reduced_velocity(v["loop.reduced_velocity"])

    def motor(self, params: PlantParams | None = None) -> MotorParams:
        v = self.values
        p = params or self.plant()
        return MotorParams.for_flow(p.velocity, p.cylinder.diameter_m, v["motor.alpha_at_limit"],
                                    lag_tau_s=v["motor.lag_tau_s"], duty_limit=v["motor.duty_limit"],
                                    command_interval_s=v["motor.command_interval_s"],
                                    deadband=v["motor.deadband"])

    def ppo(self) -> PpoConfig:
        v = self.values
        return PpoConfig(**{f.name: v[f"ppo.{f.name}"] for f in fields(PpoConfig)})

    def episode(self) -> EpisodeConfig:
        v = self.values
        return EpisodeConfig(
            duration_periods=v["loop.duration_periods"], steps_per_episode=v["loop.steps_per_episode"],
            action_interval_s=v["motor.command_interval_s"], physics_dt_s=v["loop.physics_dt_s"],
            eval_duration_s=v["loop.eval_duration_s"], eval_lead_in_s=v["loop.eval_lead_in_s"],
            reduced_velocity=v["loop.reduced_velocity"], reward_mode=v["loop.reward_mode"],
            obs_noise_y=v["loop.obs_noise_y"], obs_noise_ydot=v["loop.obs_noise_ydot"])

    def observation(self) -> ObservationSpec:
        p = self.plant()
        return ObservationSpec(self.values["loop.n_past_actions"], p.cylinder.diameter_m, p.f_n)

    def calibration_targets(self) -> CalibrationTargets:
        v = self.values
        return CalibrationTargets(
            peak_a_over_d=v["calibration.peak_a_over_d"], peak_tol=v["calibration.peak_tol"],
            band=(v["calibration.band_lo"], v["calibration.band_hi"]),
            sweep_peak=v["calibration.sweep_peak"], U_train=v["loop.reduced_velocity"],
            U_values=v["lockin.U_values"], epsilon_grid=v["calibration.epsilon_grid"],
            coupling_grid=v["calibration.coupling_grid"], kappa_grid=v["calibration.kappa_grid"])

    # -- validation and identity --------------------------------------------
    def invalid_keys(self) -> list:
        bad = []
        for key, (_, check, _) in SCHEMA.items():
            if check is not None:
                try:
                    ok = bool(check(self.values[key]))
                except TypeError:
                    ok = False
                if not ok:
                    bad.append(key)
        return bad

    def validate(self):
        bad = self.invalid_keys()
        if bad:
            raise ConfigError("invalid values for: " + ", ".join(bad), bad)
        # cross-field checks surface as errors from the typed constructors
        try:
            p = self.plant()
            self.motor(p)
            self.ppo()
            self.episode().check_duration(p.f_n)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"inconsistent configuration: {exc}", []) from exc
        return self

    def canonical(self, include_unhashed=True) -> str:
        keys = sorted(k for k in self.values if include_unhashed or k not in UNHASHED)
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in keys)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical(False).encode()).hexdigest()[:12]


def defaults() -> ExperimentConfig:
    return ExperimentConfig({k: v[0] for k, v in SCHEMA.items()})


def parse_text(text: str, base: ExperimentConfig | None = None, allow_partial=True) -> ExperimentConfig:
    vals = dict((base or defaults()).values)
    bad = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line{lineno}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            bad.append(key)
            continue
        try:
            vals[key] = _parse_value(val, SCHEMA[key][0])
        except ValueError:
            bad.append(key)
    cfg = ExperimentConfig(vals)
    bad += [k for k in cfg.invalid_keys() if k not in bad]
    if bad:
        raise ConfigError("malformed, unknown or invalid config entries: " + ", ".join(bad), bad)
    return cfg.validate()


def load(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", [])
    return parse_text(p.read_text(), base)


def write(cfg: ExperimentConfig, path, header: dict | None = None, prefix: str | None = None):
    """Write the config (or only keys under ``prefix``) with ``# key=value`` headers."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}={header[k]}\n" for k in sorted(header or {})]
    for line in cfg.canonical().splitlines(keepends=True):
        if prefix is None or line.startswith(prefix):
            lines.append(line)
    p.write_text("".join(lines))
