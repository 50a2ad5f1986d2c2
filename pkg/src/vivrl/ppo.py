"""Proximal policy optimization with a Gaussian actor and a value critic,
both small dense nets trained with hand-written gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError
from .nn import (AdamState, DenseNet, LOG_2PI, adam_update, backward, forward, forward_cache,
                 gaussian_entropy, gaussian_logprob, init_dense, pack_net, sample_action,
                 unpack_net)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
DUTY_LIMIT = 0.4


@dataclass
class Transition:
    obs: np.ndarray
    action: float         # clamped duty actually applied
    logprob: float        # log-density of the raw (pre-clamp) draw
    reward: float
    value: float
    done: bool = False
    raw_action: float | None = None

    def __post_init__(self):
        if self.raw_action is None:
            self.raw_action = self.action
        vals = (self.action, self.logprob, self.reward, self.value, self.raw_action)
        if not all(np.isfinite(v) for v in vals) or not np.all(np.isfinite(self.obs)):
            raise TrainingError("non-finite transition")
        if abs(self.action) > DUTY_LIMIT + 1e-12:
            raise TrainingError(f"action {self.action} outside the duty limit")


@dataclass
class Trajectory:
    transitions: list = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.transitions)

    def append(self, tr: Transition):
        self.transitions.append(tr)

    def arrays(self):
        ts = self.transitions
        return dict(
            obs=np.array([t.obs for t in ts], dtype=float),
            actions=np.array([t.action for t in ts], dtype=float),
            raw_actions=np.array([t.raw_action for t in ts], dtype=float),
            logprobs=np.array([t.logprob for t in ts], dtype=float),
            rewards=np.array([t.reward for t in ts], dtype=float),
            values=np.array([t.value for t in ts], dtype=float),
            dones=np.array([t.done for t in ts], dtype=bool),
        )


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 32
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    entropy_coef: float = 0.003
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if not 0 < self.clip_eps <= 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5]")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch size must be >= 1")
        if self.entropy_coef < 0 or self.value_coef < 0 or self.max_grad_norm < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class ActorCritic:
    actor: DenseNet
    log_std: np.ndarray
    critic: DenseNet

    def __post_init__(self):
        if self.actor.layer_dims[0] != self.critic.layer_dims[0]:
            raise ShapeError("actor and critic input widths differ")
        if self.critic.layer_dims[-1] != 1:
            raise ShapeError("critic must have a single output")
        self.log_std = np.clip(np.asarray(self.log_std, dtype=float).reshape(-1),
                               LOG_STD_MIN, LOG_STD_MAX)
        if self.log_std.size != self.actor.layer_dims[-1]:
            raise ShapeError("log_std size must match the action width")

    @classmethod
    def create(cls, obs_dim: int, rng, hidden=(64, 64), activation="tanh",
               init_log_std=-0.5, action_dim=1) -> "ActorCritic":
        dims = (obs_dim, *hidden)
        actor = init_dense(dims + (action_dim,), rng, activation, 1.0, 0.01)
        critic = init_dense(dims + (1,), rng, activation, 1.0, 1.0)
        return cls(actor, np.full(action_dim, float(init_log_std)), critic)

    @property
    def obs_dim(self) -> int:
        return self.actor.layer_dims[0]

    def mean(self, obs):
        return forward(self.actor, obs)

    def value(self, obs):
        v = forward(self.critic, obs)
        return float(v[0]) if np.ndim(obs) == 1 else v[:, 0]

    def act(self, obs, rng):
        """Stochastic action: ``(duty, raw, logprob, value)``."""
        obs = np.asarray(obs, dtype=float)
        clamped, raw, lp = sample_action(self.mean(obs), self.log_std, rng, DUTY_LIMIT)
        return float(clamped[0]), float(raw[0]), lp, self.value(obs)

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.actor.copy(), self.log_std.copy(), self.critic.copy())

    def to_bytes(self) -> bytes:
        return pack_net(self.actor, self.log_std) + pack_net(self.critic)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ActorCritic":
        actor, log_std, o = unpack_net(buf, 0)
        critic, _, o = unpack_net(buf, o)
        if o != len(buf):
            raise ShapeError("trailing bytes in checkpoint")
        return cls(actor, log_std, critic)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ActorCritic":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def act_deterministic(ac: ActorCritic, obs) -> float:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1 or obs.size != ac.obs_dim:
        raise ShapeError(f"observation of width {ac.obs_dim} expected, got shape {obs.shape}")
    return float(np.clip(ac.mean(obs)[0], -DUTY_LIMIT, DUTY_LIMIT))


# -- advantages ----------------------------------------------------------------

def normalize(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + 1e-8)


def compute_gae(traj: Trajectory, gamma: float, lam: float, normalize_adv: bool = True):
    """Generalized advantage estimates and value targets.

    ``done`` marks a true terminal step (no bootstrap past it); the end of
    the list is a time truncation that bootstraps ``traj.bootstrap_value``.
    Returns are built from the raw advantages; normalization only affects
    the returned advantages.
    """
    if len(traj) == 0:
        raise TrainingError("empty trajectory")
    a = traj.arrays()
    r, v, done = a["rewards"], a["values"], a["dones"]
    n = r.size
    next_v = np.append(v[1:], traj.bootstrap_value)
    adv = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if done[t] else 1.0
        delta = r[t] + gamma * next_v[t] * live - v[t]
        acc = delta + gamma * lam * live * acc
        adv[t] = acc
    returns = adv + v
    return (normalize(adv) if normalize_adv else adv), returns


# -- loss ------------------------------------------------------------------------

def clipped_surrogate(ratio, adv, eps):
    """Per-sample policy loss ``-min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return -np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)


@dataclass
class Batch:
    obs: np.ndarray
    raw_actions: np.ndarray
    logprobs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.raw_actions[idx], self.logprobs[idx],
                     self.advantages[idx], self.returns[idx])


def ppo_loss(batch: Batch, ac: ActorCritic, cfg: PpoConfig):
    """Clipped-surrogate PPO loss and its exact gradients.

    Returns ``(loss, actor_grads, log_std_grad, critic_grads, info)``.
    """
    B = len(batch)
    mean, acache = forward_cache(ac.actor, batch.obs)
    values, ccache = forward_cache(ac.critic, batch.obs)
    a = batch.raw_actions.reshape(B, -1)
    std = np.exp(ac.log_std)
    z = (a - mean) / std
    lp = gaussian_logprob(mean, ac.log_std, a)
    log_ratio = lp - batch.logprobs
    ratio = np.exp(log_ratio)
    if not np.all(np.isfinite(ratio)):
        bad = int(np.argmax(~np.isfinite(ratio)))
        raise TrainingError(f"non-finite probability ratio at sample {bad}: "
                            f"logprob_new={lp[bad]}, logprob_old={batch.logprobs[bad]}")
    A = batch.advantages
    eps = cfg.clip_eps
    surr = clipped_surrogate(ratio, A, eps)
    pol_loss = surr.mean()
    v = values[:, 0]
    err = v - batch.returns
    v_loss = np.mean(err * err)
    ent = gaussian_entropy(ac.log_std)
    loss = pol_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent

    # the unclipped branch carries gradient whenever it is the active minimum
    active = ratio * A <= np.clip(ratio, 1 - eps, 1 + eps) * A
    dlp = np.where(active, -A * ratio / B, 0.0)[:, None]
    d_mean = dlp * z / std
    d_log_std = (dlp * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef
    actor_grads, _ = backward(ac.actor, acache, d_mean)
    critic_grads, _ = backward(ac.critic, ccache, (2.0 * cfg.value_coef / B * err)[:, None])
    info = dict(policy_loss=float(pol_loss), value_loss=float(v_loss), entropy=ent,
                clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
                kl=float(np.mean(ratio - 1.0 - log_ratio)))
    return float(loss), actor_grads, d_log_std, critic_grads, info


# -- update ----------------------------------------------------------------------

@dataclass
class Optimizers:
    actor: AdamState
    critic: AdamState

    @classmethod
    def for_model(cls, ac: ActorCritic) -> "Optimizers":
        return cls(AdamState.for_params(ac.actor.params + [ac.log_std]),
                   AdamState.for_params(ac.critic.params))


def _clip_norm(grads, max_norm):
    if max_norm <= 0:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        grads = [g * (max_norm / (norm + 1e-12)) for g in grads]
    return grads


def make_batch(trajs, cfg: PpoConfig) -> Batch:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    parts = []
    for tr in trajs:
        adv, ret = compute_gae(tr, cfg.gamma, cfg.gae_lambda, normalize_adv=False)
        a = tr.arrays()
        parts.append((a["obs"], a["raw_actions"], a["logprobs"], adv, ret))
    obs, raw, lp, adv, ret = (np.concatenate(x) for x in zip(*parts))
    if cfg.normalize_advantages:
        adv = normalize(adv)
    return Batch(obs, raw, lp, adv, ret)


def update(ac: ActorCritic, traj, cfg: PpoConfig, opt: Optimizers, rng) -> dict:
    """Several epochs of minibatched PPO on one batch of trajectories.

    Mutates ``ac`` and ``opt`` in place; returns summary metrics.
    """
    batch = make_batch(traj, cfg)
    n = len(batch)
    losses = []
    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = batch.take(perm[start:start + cfg.minibatch_size])
            loss, ga, gls, gc, _ = ppo_loss(mb, ac, cfg)
            losses.append(loss)
            actor_p = ac.actor.params + [ac.log_std]
            adam_update(actor_p, _clip_norm(ga + [gls], cfg.max_grad_norm), opt.actor, cfg.lr_actor)
            adam_update(ac.critic.params, _clip_norm(gc, cfg.max_grad_norm), opt.critic, cfg.lr_critic)
            np.clip(ac.log_std, LOG_STD_MIN, LOG_STD_MAX, out=ac.log_std)
    for p in ac.actor.params + ac.critic.params + [ac.log_std]:
        if not np.all(np.isfinite(p)):
            raise TrainingError("non-finite parameters after update")
    _, _, _, _, info = ppo_loss(batch, ac, cfg)
    return dict(loss=float(np.mean(losses)), kl=info["kl"], clip_fraction=info["clip_fraction"],
                entropy=info["entropy"], value_loss=info["value_loss"])
