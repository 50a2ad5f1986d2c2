"""Agent-environment loop: observations, reward, episodes on the 100 ms
command grid with 1 ms physics, PPO training and deterministic rollouts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as K
from .actuator import MotorParams, MotorState, hold_command, steady_speed
from .analysis import dominant_ratio, steady_amplitude, suppression_ratio
from .errors import DivergenceError, ParameterDomainError, ShapeError, TrainingError
from .plant import PlantParams, PlantState, default_params
from .ppo import ActorCritic, Optimizers, PpoConfig, Trajectory, Transition, act_deterministic, update
from .records import RunRecord, write_csv

ABORT_REWARD = -5.0
TRAIN_LOG_COLUMNS = ("episode", "mean_reward", "mean_alpha", "dominant_freq_ratio",
                     "clip_fraction", "kl")


@dataclass(frozen=True)
class ObservationSpec:
    n_past_actions: int = 0
    diameter_m: float = 0.0175
    f_n_hz: float = 1.96

    def __post_init__(self):
        if self.n_past_actions < 0:
            raise ParameterDomainError("n_past_actions must be >= 0")
        if not (self.diameter_m > 0 and self.f_n_hz > 0):
            raise ParameterDomainError("normalizers must be positive")

    @property
    def dim(self) -> int:
        return 2 + self.n_past_actions


@dataclass(frozen=True)
class EpisodeConfig:
    duration_periods: float = 25.0
    steps_per_episode: int = 128
    action_interval_s: float = 0.1
    physics_dt_s: float = 1e-3
    eval_duration_s: float = 50.0
    eval_lead_in_s: float = 10.0
    reduced_velocity: float = 8.0
    reward_mode: str = "end"           # "end" of interval or interval "mean"
    settle_s: float = 60.0             # uncontrolled run that builds the limit cycle
    obs_noise_y: float = 0.0           # sensor noise std on Y/D
    obs_noise_ydot: float = 0.0        # sensor noise std on Y'/(f_n D)

    def __post_init__(self):
        sub = self.action_interval_s / self.physics_dt_s
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ParameterDomainError("action interval must be a whole number of physics steps")
        if self.steps_per_episode < 1:
            raise ParameterDomainError("steps_per_episode must be >= 1")
        if self.obs_noise_y < 0 or self.obs_noise_ydot < 0:
            raise ParameterDomainError("observation noise must be non-negative")
        if self.reward_mode not in ("end", "mean"):
            raise ParameterDomainError("reward_mode must be 'end' or 'mean'")

    @property
    def substeps(self) -> int:
        return int(round(self.action_interval_s / self.physics_dt_s))

    def check_duration(self, f_n: float):
        """Episode length must match duration_periods * T0 within one interval."""
        span = self.steps_per_episode * self.action_interval_s
        if abs(span - self.duration_periods / f_n) > self.action_interval_s:
            raise ParameterDomainError(
                f"{self.steps_per_episode} steps x {self.action_interval_s} s = {span:.2f} s "
                f"differs from {self.duration_periods} periods ({self.duration_periods / f_n:.2f} s)")


def build_observation(s: PlantState, motor: MotorState, history, spec: ObservationSpec) -> np.ndarray:
    """``[Y/D, Y'/(f_n D), a_{t-1}, ..., a_{t-n}]``, most recent action first.

    Missing history at episode start is zero padded. The motor state is
    not observed; it is accepted so callers pass the full loop state.
    """
    n = spec.n_past_actions
    hist = list(history)[:n]
    hist += [0.0] * (n - len(hist))
    d = spec.diameter_m
    return np.array([s.y_m / d, s.ydot_m_per_s / (spec.f_n_hz * d), *hist], dtype=float)


def reward(y_m, diameter_m: float):
    if not diameter_m > 0:
        raise ParameterDomainError("D must be positive")
    return -np.abs(np.asarray(y_m) / diameter_m) if np.ndim(y_m) else -abs(y_m / diameter_m)


class VivEnv:
    """Cylinder + wake + motor, stepped on the command grid."""

    def __init__(self, params: PlantParams | None = None, motor: MotorParams | None = None,
                 cfg: EpisodeConfig | None = None, spec: ObservationSpec | None = None):
        self.cfg = cfg or EpisodeConfig()
        base = params or default_params()
        self.params = base.at_reduced_velocity(self.cfg.reduced_velocity)
        self.motor = motor or MotorParams.for_flow(self.params.velocity, self.params.cylinder.diameter_m)
        if abs(self.motor.command_interval_s - self.cfg.action_interval_s) > 1e-12:
            raise ParameterDomainError("motor command interval and episode action interval differ")
        d = self.params.cylinder.diameter_m
        self.spec = spec or ObservationSpec(0, d, self.params.f_n)
        if abs(self.spec.diameter_m - d) > 1e-12 or abs(self.spec.f_n_hz - self.params.f_n) > 1e-9:
            self.spec = replace(self.spec, diameter_m=d, f_n_hz=self.params.f_n)
        self.coeffs = self.params.coefficients()
        self.alpha_scale = self.params.alpha_scale()
        self._cycle = None
        self._a_unc = None
        self.noise_rng = None
        self.reset(None)

    # limit cycle --------------------------------------------------------
    def _build_cycle(self):
        dt = self.cfg.physics_dt_s
        d = self.params.cylinder.diameter_m
        st = np.array([0.01 * d, 0.0, 0.0, 0.0])
        n_settle = int(round(self.cfg.settle_s / dt))
        status, _, _ = K.advance(st, 0.0, 0.0, self.motor.lag_tau_s, n_settle, dt, self.coeffs,
                                 0, K.empty_rec(0))
        if status != K.OK:
            raise DivergenceError("uncontrolled settling run diverged")
        # two natural periods of the developed cycle, sampled every step
        n_keep = int(round(2.0 / self.params.f_n / dt))
        rec = K.empty_rec(n_keep, 3)
        full = np.zeros((n_keep, 4))
        for i in range(n_keep):
            full[i] = st
            K.advance(st, 0.0, 0.0, self.motor.lag_tau_s, 1, dt, self.coeffs, 0, rec)
        self._cycle = full

    @property
    def cycle(self) -> np.ndarray:
        if self._cycle is None:
            self._build_cycle()
        return self._cycle

    def initial_state(self, rng=None) -> np.ndarray:
        """Limit-cycle state: random phase when ``rng`` is given, else fixed."""
        cyc = self.cycle
        idx = 0 if rng is None else int(rng.integers(cyc.shape[0]))
        return cyc[idx].copy()

    def uncontrolled_amplitude(self) -> float:
        if self._a_unc is None:
            from .plant import simulate_uncontrolled
            rec = simulate_uncontrolled(self.cfg.reduced_velocity, 50.0, self.params)
            self._a_unc = steady_amplitude(rec)
        return self._a_unc

    # stepping -------------------------------------------------------------
    def reset(self, rng=None, state=None):
        if state is not None:
            self.x = np.array(state, dtype=float)
        elif rng is None and self._cycle is None:
            self.x = np.zeros(4)      # placeholder until the cycle is requested
        else:
            self.x = self.initial_state(rng)
        self.m = MotorState()
        self.t = 0.0
        self.k = 0
        self.history = []
        return self.observation()

    @property
    def plant_state(self) -> PlantState:
        return PlantState.from_array(self.x, self.t)

    def observation(self) -> np.ndarray:
        obs = build_observation(self.plant_state, self.m, self.history, self.spec)
        cfg = self.cfg
        if self.noise_rng is not None and (cfg.obs_noise_y > 0 or cfg.obs_noise_ydot > 0):
            obs[:2] += self.noise_rng.standard_normal(2) * (cfg.obs_noise_y, cfg.obs_noise_ydot)
        return obs

    @property
    def alpha(self) -> float:
        return self.m.omega_rad_per_s * self.alpha_scale

    def step(self, duty: float):
        """Hold ``duty`` for one command interval; returns ``(obs, reward)``."""
        cfg = self.cfg
        self.m = hold_command(self.m, duty, self.k * cfg.action_interval_s, self.motor)
        om_ss = steady_speed(self.m.held_duty, self.motor)
        n = cfg.substeps
        every = 1 if cfg.reward_mode == "mean" else 0
        rec = K.empty_rec(n if every else 0)
        status, om, rows = K.advance(self.x, self.m.omega_rad_per_s, om_ss, self.motor.lag_tau_s,
                                     n, cfg.physics_dt_s, self.coeffs, every, rec)
        self.m = MotorState(om, self.m.held_duty, cfg.action_interval_s)
        self.k += 1
        self.t = self.k * cfg.action_interval_s
        if status != K.OK:
            raise DivergenceError(f"plant diverged at t = {self.t:.1f} s")
        d = self.params.cylinder.diameter_m
        r = float(np.mean(reward(rec[:rows, 0], d))) if every else reward(self.x[0], d)
        if self.spec.n_past_actions:
            self.history = [self.m.held_duty] + self.history[: self.spec.n_past_actions - 1]
        return self.observation(), r


# -- episodes -----------------------------------------------------------------

def _record(rows, env: VivEnv, meta=None) -> RunRecord:
    if not rows:
        return RunRecord.empty({"f_n_hz": env.params.f_n, "dt_s": env.cfg.action_interval_s})
    a = np.array(rows, dtype=float)
    m = {"f_n_hz": env.params.f_n, "dt_s": env.cfg.action_interval_s}
    m.update(meta or {})
    return RunRecord(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], a[:, 5], meta=m)


def _row(env: VivEnv, duty, r):
    o = build_observation(env.plant_state, env.m, [], replace(env.spec, n_past_actions=0))
    return (env.t, o[0], o[1], duty, env.alpha, r)


def run_episode(env: VivEnv, ac: ActorCritic | None, rng, stochastic: bool = True,
                n_steps: int | None = None, random_phase: bool | None = None):
    """One episode from the developed limit cycle.

    ``ac=None`` applies zero duty throughout. Divergence ends the episode
    with a terminal transition carrying ABORT_REWARD.
    """
    cfg = env.cfg
    n_steps = cfg.steps_per_episode if n_steps is None else n_steps
    random_phase = stochastic if random_phase is None else random_phase
    obs = env.reset(rng if random_phase else None, state=env.initial_state(rng if random_phase else None))
    if ac is not None and ac.obs_dim != env.spec.dim:
        raise ShapeError(f"policy expects {ac.obs_dim} inputs, observation has {env.spec.dim}")
    traj = Trajectory()
    rows = []
    aborted = False
    for _ in range(n_steps):
        if ac is None:
            duty, raw, lp, v = 0.0, 0.0, 0.0, 0.0
        elif stochastic:
            duty, raw, lp, v = ac.act(obs, rng)
        else:
            duty = act_deterministic(ac, obs)
            raw, lp, v = duty, 0.0, ac.value(obs)
        try:
            nxt, r = env.step(duty)
        except DivergenceError:
            traj.append(Transition(obs, duty, lp, ABORT_REWARD, v, True, raw))
            rows.append((env.t, np.nan, np.nan, duty, env.alpha, ABORT_REWARD))
            aborted = True
            break
        traj.append(Transition(obs, duty, lp, r, v, False, raw))
        rows.append(_row(env, duty, r))
        obs = nxt
    if not aborted and ac is not None:
        traj.bootstrap_value = ac.value(obs)
    rec = _record(rows, env, {"aborted": int(aborted)})
    return traj, rec


def episode_metrics(rec: RunRecord) -> tuple:
    """(mean reward, mean alpha, dominant actuation frequency / f_n)."""
    fs = 1.0 / rec.dt_s
    return (float(np.mean(rec.reward)), float(np.mean(rec.alpha)),
            dominant_ratio(rec.alpha, fs, rec.meta["f_n_hz"]) if len(rec) >= 64 else float("nan"))


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    rewards: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    final: ActorCritic | None = None
    best: ActorCritic | None = None
    best_reward: float = -math.inf
    error: str | None = None


def _streams(seed: int):
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def train(episodes: int, seed: int, env: VivEnv, ppo_cfg: PpoConfig | None = None,
          activation: str = "tanh", init_log_std: float = -0.5, out_dir=None,
          meta: dict | None = None, progress=None) -> TrainResult:
    """Alternate one stochastic episode and one PPO update.

    Writes ``training_log.csv``, ``best.ckpt`` and ``final.ckpt`` to
    ``out_dir`` when given. Non-finite training state stops the run; the
    checkpoints gathered so far are still written and the error is
    recorded on the result.
    """
    ppo_cfg = ppo_cfg or PpoConfig()
    res = TrainResult()
    if episodes <= 0:
        _write_train_outputs(res, out_dir, meta)
        return res
    init_rng, ep_rng, upd_rng, noise_rng = _streams(seed)
    env.noise_rng = noise_rng
    ac = ActorCritic.create(env.spec.dim, init_rng, activation=activation, init_log_std=init_log_std)
    opt = Optimizers.for_model(ac)
    for ep in range(episodes):
        try:
            traj, rec = run_episode(env, ac, ep_rng, stochastic=True)
            mr, ma, fr = episode_metrics(rec)
            # the update changes the policy; score the one that earned the reward
            if mr > res.best_reward:
                res.best_reward, res.best = mr, ac.copy()
            m = update(ac, traj, ppo_cfg, opt, upd_rng)
        except TrainingError as exc:
            res.error = f"episode {ep}: {exc}"
            break
        res.rewards.append(mr)
        res.log_rows.append((ep, mr, ma, fr, m["clip_fraction"], m["kl"]))
        res.final = ac.copy()
        if progress:
            progress(ep, mr, ma, fr, m)
    _write_train_outputs(res, out_dir, meta)
    return res


def _write_train_outputs(res: TrainResult, out_dir, meta):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "training_log.csv", TRAIN_LOG_COLUMNS, res.log_rows, meta)
    if res.final is not None:
        res.final.save(out / "final.ckpt")
    if res.best is not None:
        res.best.save(out / "best.ckpt")


# -- evaluation ---------------------------------------------------------------

def evaluate_deterministic(ac: ActorCritic | None, env: VivEnv, duration_s: float | None = None,
                           lead_in_s: float | None = None, noise_seed: int = 0) -> RunRecord:
    """Fixed-phase rollout: zero duty during the lead-in, then the policy mean.

    ``meta`` carries the control onset, the steady controlled amplitude
    (last 40 % of the record) and the suppression ratio against the
    uncontrolled plant.
    """
    cfg = env.cfg
    duration_s = cfg.eval_duration_s if duration_s is None else duration_s
    lead_in_s = cfg.eval_lead_in_s if lead_in_s is None else lead_in_s
    if ac is not None and ac.obs_dim != env.spec.dim:
        raise ShapeError(f"policy expects {ac.obs_dim} inputs, observation has {env.spec.dim}")
    n_lead = int(round(lead_in_s / cfg.action_interval_s))
    n_ctrl = int(round(duration_s / cfg.action_interval_s))
    env.noise_rng = np.random.default_rng(noise_seed)
    obs = env.reset(None, state=env.initial_state(None))
    rows = []
    for k in range(n_lead + n_ctrl):
        duty = act_deterministic(ac, obs) if (ac is not None and k >= n_lead) else 0.0
        obs, r = env.step(duty)
        rows.append(_row(env, duty, r))
    rec = _record(rows, env, {"control_start_s": n_lead * cfg.action_interval_s})
    ctrl = rec.slice_time(rec.meta["control_start_s"] + cfg.action_interval_s)
    a_ctrl = steady_amplitude(ctrl)
    a_unc = env.uncontrolled_amplitude()
    fs = 1.0 / cfg.action_interval_s
    rec.meta.update({"a_over_d": a_ctrl, "a_over_d_uncontrolled": a_unc,
                     "suppression": suppression_ratio(a_ctrl, a_unc),
                     "dominant_freq_ratio": dominant_ratio(ctrl.alpha, fs, env.params.f_n),
                     "mean_alpha": float(np.mean(ctrl.alpha))})
    return rec
