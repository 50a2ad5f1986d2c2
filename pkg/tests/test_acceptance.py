"""Acceptance criteria 1-10, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced; they are also repeated in the terminal summary. Criterion 8
(and 9, which reuses its training runs) is the long-running suite and is
marked ``slow``.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import record
from vivrl import config as C
from vivrl.baseline import frequency_sweep
from vivrl.cli import main
from vivrl.control import ObservationSpec, VivEnv, train
from vivrl.nn import gradient_check
from vivrl.plant import (LOCKIN_U_GRID, SWEEP_RATIOS, CylinderProperties, amplitude_sweep,
                         default_params, free_decay, integrate, skop_griffin)
from vivrl.ppo import (ActorCritic, Optimizers, PpoConfig, Trajectory, Transition,
                       act_deterministic, clipped_surrogate, compute_gae, update)
from vivrl.records import read_table


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = root / "experiment.cfg"
    cfg.write_text("# acceptance run: library defaults\n")
    out = root / "out"
    t0 = time.perf_counter()
    status = main(["calibrate", "--config", str(cfg), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert status == 0
    wake = C.load(out / "calibrate" / "wake_params.cfg")
    params = C.load(cfg).with_overrides(**{k.replace(".", "__"): wake[k] for k in wake.values
                                           if k.startswith("wake.")}).plant()
    return cfg, out, params, elapsed


# -- 1 ---------------------------------------------------------------------------

def test_criterion_01_skop_griffin():
    t0 = time.perf_counter()
    got = skop_griffin(0.21, 30.3, 0.012)
    oracle = 2.0 * math.pi ** 3 * 0.21 ** 2 * (1 + 30.3) * 0.012
    exact = abs(got - oracle) <= 1e-12 * abs(oracle)
    rng = np.random.default_rng(1)
    homog = True
    for _ in range(100):
        s, m, z, k = rng.uniform(0.05, 0.5), rng.uniform(1.5, 200), rng.uniform(1e-4, 0.2), rng.uniform(0.1, 10)
        base = skop_griffin(s, m, z)
        homog &= math.isclose(skop_griffin(s, m, k * z), k * base, rel_tol=1e-12)
        homog &= math.isclose(skop_griffin(k * s, m, z), k * k * base, rel_tol=1e-12)
    dt = time.perf_counter() - t0
    ok = record(1, "Skop-Griffin arithmetic and homogeneity", exact and homog and dt < 1.0,
                f"SG={got:.6f}, {dt:.3f} s")
    assert ok


# -- 2 ---------------------------------------------------------------------------

def test_criterion_02_identification():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_f, worst_z = 0.0, 0.0
    for _ in range(20):
        f_n, mass, zeta = rng.uniform(0.5, 5.0), rng.uniform(0.4, 2.0), rng.uniform(2e-3, 5e-2)
        cyl = CylinderProperties.from_frequency(f_n, zeta, reference="air", oscillating_mass_kg=mass)
        p = replace(default_params(), cylinder=cyl)
        f, z = free_decay("air", 0.005, p)
        worst_f = max(worst_f, abs(f / f_n - 1))
        worst_z = max(worst_z, abs(z / zeta - 1))
    f_w, _ = free_decay("still_water", 0.005)
    _, z_a = free_decay("air", 0.005)
    dt = time.perf_counter() - t0
    ok = (worst_f < 0.01 and worst_z < 0.05 and abs(f_w / 1.96 - 1) < 0.01
          and abs(z_a / 1.02e-2 - 1) < 0.05 and dt < 10.0)
    record(2, "free-decay identification", ok,
           f"worst f err {worst_f:.2e}, worst zeta err {worst_z:.2e}, water f={f_w:.4f} Hz, "
           f"air zeta={z_a:.4e}, {dt:.1f} s")
    assert ok


# -- 3 ---------------------------------------------------------------------------

def _linear_error(dt, p, y0=0.005, t_end=4.0):
    c = p.coefficients()
    wn = math.sqrt(c[2] / c[0])
    z = c[1] / (2 * math.sqrt(c[2] * c[0]))
    wd = wn * math.sqrt(1 - z * z)
    n = int(round(t_end / dt))
    state = np.array([y0, 0.0, 0.0, 0.0])
    integrate(state, p, n, dt)
    t = n * dt
    exact = math.exp(-z * wn * t) * y0 * (math.cos(wd * t) + z * wn / wd * math.sin(wd * t))
    return abs(state[0] - exact)


def test_criterion_03_integrator():
    t0 = time.perf_counter()
    p = replace(default_params(), medium="air")
    ratio = _linear_error(4e-3, p) / _linear_error(2e-3, p)
    pf = default_params(8.0)
    c = pf.coefficients()
    c[3] = 0.0
    state = np.array([0.01, 0.0, 0.1, 0.0])
    _, rows = integrate(state, pf, 1_000_000, 1e-3, rec_every=1, coefficients=c)
    e = 0.5 * c[0] * rows[:, 1] ** 2 + 0.5 * c[2] * rows[:, 0] ** 2
    e = np.concatenate([[0.5 * c[2] * 0.01 ** 2], e])
    monotone = bool(np.all(np.diff(e) <= 1e-14 * e[:-1] + 1e-300))
    dt = time.perf_counter() - t0
    ok = ratio >= 8.0 and monotone and dt < 30.0
    record(3, "RK4 order and energy non-increase", ok,
           f"halving ratio {ratio:.1f}, energy monotone over 1e6 steps: {monotone}, {dt:.1f} s")
    assert ok


# -- 4 ---------------------------------------------------------------------------

def test_criterion_04_lockin(calibrated):
    _, _, params, t_cal = calibrated
    t0 = time.perf_counter()
    sweep = amplitude_sweep(LOCKIN_U_GRID, params)
    U = np.array([u for u, _ in sweep])
    a = np.array([x for _, x in sweep])
    peak = float(a.max())
    high = np.where(a > 0.1)[0]
    contiguous = high.size > 0 and bool(np.all(np.diff(high) == 1))
    covers = contiguous and U[high[0]] <= 5.0 and U[high[-1]] >= 8.0
    dt = time.perf_counter() - t0 + t_cal
    ok = 0.55 <= peak <= 0.65 and covers and dt < 300
    band = f"[{U[high[0]]:g}, {U[high[-1]]:g}]" if high.size else "none"
    record(4, "lock-in calibration", ok, f"peak A/D {peak:.3f}, band {band}, {dt:.1f} s")
    assert ok


# -- 5 ---------------------------------------------------------------------------

def test_criterion_05_lockon_sweep(calibrated):
    _, _, params, _ = calibrated
    t0 = time.perf_counter()
    res = frequency_sweep(SWEEP_RATIOS, 1.0, params.at_reduced_velocity(8.0))
    a = {r: x for r, x, _ in res}
    amps = [x for _, x, _ in res]
    ok = (max(amps) == a[1.0] and abs(a[1.0] - 0.65) <= 0.1 and a[0.8] < a[0.6]
          and a[0.8] < a[1.0] and a[1.6] < 0.1)
    dt = time.perf_counter() - t0
    ok = ok and dt < 600
    record(5, "lock-on sweep shape", ok,
           "A/D " + " ".join(f"{r:g}:{x:.3f}" for r, x in a.items()) + f", {dt:.1f} s")
    assert ok


# -- 6 ---------------------------------------------------------------------------

def _gae_brute(r, v, boot, gamma, lam):
    n = len(r)
    vn = list(v[1:]) + [boot]
    delta = [r[t] + gamma * vn[t] - v[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** k * delta[t + k] for k in range(n - t)) for t in range(n)])


def test_criterion_06_ppo_math():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        r, v = rng.standard_normal(8), rng.standard_normal(8)
        boot = float(rng.standard_normal())
        gamma, lam = rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)
        tr = Trajectory(bootstrap_value=boot)
        for ri, vi in zip(r, v):
            tr.append(Transition(np.zeros(1), 0.0, 0.0, float(ri), float(vi)))
        adv, _ = compute_gae(tr, gamma, lam, normalize_adv=False)
        worst = max(worst, float(np.max(np.abs(adv - _gae_brute(r, v, boot, gamma, lam)))))
    clip_ok = clipped_surrogate(1.5, 1.0, 0.2) == -1.2 and clipped_surrogate(0.5, -1.0, 0.2) == 0.8
    ac = ActorCritic.create(4, np.random.default_rng(0))
    for net in (ac.actor, ac.critic):
        for p in net.params:
            p += 0.1 * np.random.default_rng(1).standard_normal(p.shape)
    x = np.random.default_rng(3).standard_normal((2, 4))
    grad_err = max(gradient_check(ac.actor, x, np.ones((2, 1))), gradient_check(ac.critic, x, np.ones((2, 1))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and clip_ok and grad_err < 1e-4 and dt < 60
    record(6, "PPO math", ok, f"GAE max err {worst:.1e}, clip examples {clip_ok}, "
                              f"grad rel err {grad_err:.1e}, {dt:.1f} s")
    assert ok


# -- 7 ---------------------------------------------------------------------------

def _bandit(seed, updates=200, episodes=64, lr=1e-3):
    rng = np.random.default_rng(seed)
    ac = ActorCritic.create(1, rng)
    opt = Optimizers.for_model(ac)
    cfg = PpoConfig(lr_actor=lr, lr_critic=lr)
    obs = np.ones(1)
    for _ in range(updates):
        trajs = []
        for _ in range(episodes):
            duty, raw, lp, v = ac.act(obs, rng)
            tr = Trajectory()
            tr.append(Transition(obs, duty, lp, -abs(duty - 0.2), v, True, raw))
            trajs.append(tr)
        update(ac, trajs, cfg, opt, rng)
    return act_deterministic(ac, obs)


def test_criterion_07_bandit():
    t0 = time.perf_counter()
    means = [_bandit(s) for s in range(5)]
    hits = sum(abs(m - 0.2) <= 0.03 for m in means)
    dt = time.perf_counter() - t0
    ok = hits >= 4 and dt < 120
    record(7, "bandit sanity", ok, f"{hits}/5 seeds within 0.2 +/- 0.03 "
                                   f"({', '.join(f'{m:.3f}' for m in means)}), {dt:.1f} s")
    assert ok


# -- 8 and 9 ----------------------------------------------------------------------

SEEDS = (0, 1, 2)


def _cli(args):
    assert main(args) == 0


@pytest.fixture(scope="module")
def delay_memory(calibrated):
    """Train n = 0 and n = 2 on three seeds each through the CLI, then
    evaluate the final checkpoint of the best seed of each."""
    cfg, out, _, _ = calibrated
    t0 = time.perf_counter()
    res = {}
    for n in (0, 2):
        _cli(["train", "--config", str(cfg), "--out", str(out), "--n-past", str(n),
              "--seeds", ",".join(map(str, SEEDS))])
        runs = {}
        for s in SEEDS:
            found = [p for p in out.glob(f"train/*_seed{s}/*_training_log.csv")
                     if read_table(p)[0].get("n_past_actions") == str(n)]
            (log,) = found
            _, rows = read_table(log)
            tail = rows[-50:]
            runs[s] = dict(final50=float(np.mean([r["mean_reward"] for r in tail])),
                           alpha50=float(np.mean([r["mean_alpha"] for r in tail])),
                           freq50=float(np.nanmedian([r["dominant_freq_ratio"] for r in tail])),
                           episodes=len(rows))
        best = max(SEEDS, key=lambda s: runs[s]["final50"])
        _cli(["eval", "--config", str(cfg), "--out", str(out), "--n-past", str(n), "--seed", str(best)])
        (summary,) = out.glob(f"eval/eval_*_seed{best}_n{n}_final_summary.csv")
        _, rows = read_table(summary)
        res[n] = dict(runs=runs, best=best, eval=rows[0])
    res["elapsed"] = time.perf_counter() - t0
    return res


@pytest.mark.slow
def test_criterion_08_delay_memory(delay_memory):
    r0, r2 = delay_memory[0], delay_memory[2]
    assert all(r["episodes"] == 400 for r in list(r0["runs"].values()) + list(r2["runs"].values()))
    ordering = [r2["runs"][s]["final50"] > r0["runs"][s]["final50"] for s in SEEDS]
    sup0, sup2 = r0["eval"]["suppression"], r2["eval"]["suppression"]
    fr0, fr2 = r0["eval"]["dominant_freq_ratio"], r2["eval"]["dominant_freq_ratio"]
    part_i = all(ordering)
    part_ii = sup2 >= 0.9 and 0.6 <= sup0 <= 0.9
    part_iii = fr0 < 1.0 and fr2 > 1.5
    f0 = ", ".join(f"{r0['runs'][s]['final50']:.4f}" for s in SEEDS)
    f2 = ", ".join(f"{r2['runs'][s]['final50']:.4f}" for s in SEEDS)
    detail = (f"(i) n2>n0 on seeds {[s for s, o in zip(SEEDS, ordering) if o]} [n0 {f0}; n2 {f2}]; "
              f"(ii) suppression n2 {sup2:.3f} (seed {r2['best']}), n0 {sup0:.3f} (seed {r0['best']}); "
              f"(iii) f_r/f_n n0 {fr0:.2f}, n2 {fr2:.2f}; {delay_memory['elapsed'] / 60:.1f} min")
    ok = part_i and part_ii and part_iii
    record(8, "delay-memory claim", ok,
           f"i={'ok' if part_i else 'fail'} ii={'ok' if part_ii else 'fail'} "
           f"iii={'ok' if part_iii else 'fail'}; " + detail)
    assert ok


@pytest.mark.slow
def test_criterion_09_mean_rotation(delay_memory):
    r0 = delay_memory[0]
    best = r0["best"]
    a = r0["runs"][best]["alpha50"]
    others = ", ".join(f"seed {s}: {r0['runs'][s]['alpha50']:+.3f}" for s in SEEDS)
    ok = abs(a) < 0.05
    record(9, "mean rotation converges to zero (n = 0)", ok,
           f"final-50 mean alpha {a:+.3f} on best seed {best} ({others})")
    assert ok


# -- 10 --------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    episodes = 20
    for name in ("a", "b"):
        train(episodes, 42, VivEnv(spec=ObservationSpec(2)), out_dir=tmp_path / name, meta={"seed": 42})
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("training_log.csv", "final.ckpt", "best.ckpt"))
    dt = time.perf_counter() - t0
    record(10, "determinism", same, f"byte-identical log and checkpoints over {episodes} episodes, {dt:.1f} s")
    assert same
