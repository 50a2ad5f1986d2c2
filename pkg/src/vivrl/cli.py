"""Command-line entry point: one subcommand per experiment."""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .analysis import steady_amplitude
from .baseline import frequency_sweep
from .control import VivEnv, evaluate_deterministic, train
from .errors import CalibrationError, ConfigError, VivError
from .plant import SWEEP_RATIOS, amplitude_sweep, calibrate, free_decay, skop_griffin
from .ppo import ActorCritic
from .records import read_table, write_csv, write_run_record

FLOW_COMMANDS = ("lockin-sweep", "sine-sweep", "train", "eval")


class CliError(VivError):
    pass


# -- plumbing ------------------------------------------------------------------

def output_root(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg["run.output_dir"]:
        return Path(cfg["run.output_dir"])
    return Path(os.environ.get("VIVRL_OUT", "vivrl_out"))


def calibration_path(root: Path, cfg) -> Path:
    return Path(cfg["run.calibration_file"]) if cfg["run.calibration_file"] else root / "calibrate" / "wake_params.cfg"


def resolve_config(args):
    cfg = C.load(args.config)
    over = {}
    if args.seed is not None:
        over["run.seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        over["loop.episodes"] = args.episodes
    if getattr(args, "duration", None) is not None:
        over["loop.eval_duration_s"] = args.duration
    if getattr(args, "n_past", None) is not None:
        over["loop.n_past_actions"] = args.n_past
    if over:
        cfg = cfg.with_overrides(**{k.replace(".", "__"): v for k, v in over.items()})
    root = output_root(args, cfg)
    if args.command in FLOW_COMMANDS:
        cal = calibration_path(root, cfg)
        if not cal.is_file():
            raise CliError(f"calibrated wake parameters not found at {cal}; "
                           f"run `vivrl calibrate --config {args.config}` first")
        cal_cfg = C.parse_text(cal.read_text())
        cfg = cfg.with_overrides(**{k.replace(".", "__"): cal_cfg[k]
                                    for k in cfg.values if k.startswith("wake.")})
    return cfg, root


def stamp(command, cfg, seed=None, **extra) -> dict:
    meta = {"subcommand": command, "config_hash": cfg.hash(),
            "seed": cfg["run.seed"] if seed is None else seed}
    meta.update(extra)
    return meta


def prefix(command, cfg, seed=None) -> str:
    s = cfg["run.seed"] if seed is None else seed
    return f"{command}_{cfg.hash()}_seed{s}"


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def log(msg):
    print(msg, file=sys.stderr, flush=True)


# -- subcommands -----------------------------------------------------------------

def cmd_calibrate(args, cfg, root):
    out = root / "calibrate"
    meta = stamp("calibrate", cfg)
    report_path = out / f"{prefix('calibrate', cfg)}_report.csv"
    try:
        wake, report = calibrate(cfg.calibration_targets(), cfg.plant(), log=log)
        status = 0
    except CalibrationError as exc:
        wake, report, status = exc.best, exc.report or {}, 2
        log(f"calibration failed: {exc}")
    rows = []
    for r in report.get("stage1", []):
        rows.append(("lockin", r["vdp_epsilon"], r["coupling_A"], float("nan"), r["peak"], int(r["band_ok"])))
    for r in report.get("stage2", []):
        peak = max(r["amplitudes"]) if r["amplitudes"] else float("nan")
        rows.append(("lockon", float("nan"), float("nan"), r["rotation_coupling"], peak, int(r["shape_ok"])))
    write_csv(report_path, ("stage", "vdp_epsilon", "coupling_A", "rotation_coupling", "peak_a_over_d", "ok"),
              rows, {**meta, "status": "ok" if status == 0 else "failed"})
    if status:
        if wake is not None:
            log(f"best candidate: {wake}")
        return status
    fitted = cfg.with_overrides(**{f"wake__{k}": v for k, v in wake.__dict__.items()})
    C.write(fitted, calibration_path(root, cfg), meta, prefix="wake.")
    log(f"calibrated parameters written to {calibration_path(root, cfg)}")
    return 0


def cmd_decay(args, cfg, root):
    p = cfg.plant()
    y0 = cfg["decay.y0_over_d"] * p.cylinder.diameter_m
    rows = []
    for medium in ("air", "still_water"):
        f, z = free_decay(medium, y0, p)
        rows.append((medium, f, z))
        log(f"{medium}: f = {f:.4f} Hz, zeta = {z:.4e}")
    write_csv(root / "decay" / f"{prefix('decay', cfg)}_decay.csv", ("medium", "f_hz", "zeta"), rows,
              stamp("decay", cfg, f_n_configured=cfg["plant.f_n_hz"], zeta_air_configured=cfg["plant.zeta_air"]))
    return 0


def _lockin_point(job):
    u, cfg_vals = job
    cfg = C.ExperimentConfig(cfg_vals)
    return amplitude_sweep([u], cfg.plant(), cfg["lockin.duration_s"])[0]


def cmd_lockin_sweep(args, cfg, root):
    res = _map(_lockin_point, [(u, cfg.values) for u in cfg["lockin.U_values"]], args.jobs)
    p = cfg.plant()
    peak = max((a for _, a in res), default=float("nan"))
    sg = skop_griffin(cfg["flow.strouhal"], p.cylinder.mass_ratio, p.cylinder.zeta_air)
    write_csv(root / "lockin-sweep" / f"{prefix('lockin-sweep', cfg)}_lockin.csv", ("U", "a_over_d"), res,
              stamp("lockin-sweep", cfg, peak_a_over_d=peak, skop_griffin=sg))
    for u, a in res:
        log(f"U = {u:5.2f}  A/D = {a:.3f}")
    return 0


def _sine_point(job):
    r, cfg_vals = job
    cfg = C.ExperimentConfig(cfg_vals)
    p = cfg.plant()
    return frequency_sweep([r], cfg["sweep.alpha0"], p, cfg.motor(p), duration_s=cfg["sweep.duration_s"])[0]


def cmd_sine_sweep(args, cfg, root):
    res = _map(_sine_point, [(r, cfg.values) for r in cfg["sweep.ratios"]], args.jobs)
    write_csv(root / "sine-sweep" / f"{prefix('sine-sweep', cfg)}_sweep.csv", ("ratio", "a_over_d", "tracking_rms"),
              res, stamp("sine-sweep", cfg, alpha0=cfg["sweep.alpha0"], U=cfg["loop.reduced_velocity"]))
    for r, a, e in res:
        log(f"f_r/f_n = {r:4.2f}  A/D = {a:.3f}  tracking rms = {e:.3f}")
    return 0


def make_env(cfg) -> VivEnv:
    p = cfg.plant()
    return VivEnv(p, cfg.motor(p), cfg.episode(), cfg.observation())


def train_dir(root, cfg, seed) -> Path:
    return root / "train" / prefix("train", cfg, seed)


def _train_one(job):
    seed, cfg_vals, root = job
    cfg = C.ExperimentConfig(cfg_vals)
    env = make_env(cfg)
    out = train_dir(Path(root), cfg, seed)
    meta = stamp("train", cfg, seed, n_past_actions=cfg["loop.n_past_actions"])
    res = train(cfg["loop.episodes"], seed, env, cfg.ppo(), cfg["ppo.activation"], cfg["ppo.init_log_std"],
                out_dir=out, meta=meta)
    # rename to self-describing file names
    base = prefix("train", cfg, seed)
    for name in ("training_log.csv", "best.ckpt", "final.ckpt"):
        src = out / name
        if src.exists():
            src.replace(out / f"{base}_{name}")
    tail = res.rewards[-50:]
    return seed, (float(np.mean(tail)) if tail else float("nan")), res.error


def cmd_train(args, cfg, root):
    seeds = args.seeds if args.seeds else [cfg["run.seed"]]
    results = _map(_train_one, [(s, cfg.values, str(root)) for s in seeds], args.jobs)
    status = 0
    for seed, r, err in results:
        log(f"seed {seed}: final-50 mean reward {r:.4f}" + (f"  HALTED: {err}" if err else ""))
        if err:
            status = 3
    return status


def cmd_eval(args, cfg, root):
    seed = cfg["run.seed"]
    ck = Path(args.checkpoint) if args.checkpoint else \
        train_dir(root, cfg, seed) / f"{prefix('train', cfg, seed)}_{args.which}.ckpt"
    if not ck.is_file():
        raise CliError(f"checkpoint not found: {ck}")
    ac = ActorCritic.load(ck)
    env = make_env(cfg)
    rec = evaluate_deterministic(ac, env, cfg["loop.eval_duration_s"], cfg["loop.eval_lead_in_s"], noise_seed=seed)
    out = root / "eval"
    base = f"{prefix('eval', cfg)}_n{cfg['loop.n_past_actions']}_{args.which}"
    meta = stamp("eval", cfg, checkpoint=ck.name, n_past_actions=cfg["loop.n_past_actions"])
    write_run_record(rec, out / f"{base}_record.csv", meta)
    keys = ("a_over_d", "a_over_d_uncontrolled", "suppression", "dominant_freq_ratio", "mean_alpha")
    write_csv(out / f"{base}_summary.csv", keys, [tuple(rec.meta[k] for k in keys)], meta)
    log("  ".join(f"{k} = {rec.meta[k]:.4f}" for k in keys))
    return 0


# -- report ----------------------------------------------------------------------

def _latest(root: Path, pattern: str):
    hits = sorted(root.glob(pattern), key=lambda p: p.stat().st_mtime)
    return hits[-1] if hits else None


def _final50(path):
    meta, rows = read_table(path)
    rows = rows[-50:]
    if not rows:
        return meta, float("nan"), float("nan"), float("nan")
    r = np.array([[row["mean_reward"], row["mean_alpha"], row["dominant_freq_ratio"]] for row in rows], float)
    return meta, float(np.mean(r[:, 0])), float(np.mean(r[:, 1])), float(np.nanmedian(r[:, 2]))


def cmd_report(args, cfg, root):
    lines, rows = [], []

    def add(fig, metric, value, note=""):
        rows.append((fig, metric, value, note))
        lines.append(f"[{fig}] {metric} = {value:.4g} {note}".rstrip())

    p = _latest(root, "lockin-sweep/*_lockin.csv")
    if p:
        meta, data = read_table(p)
        U = np.array([d["U"] for d in data])
        a = np.array([d["a_over_d"] for d in data])
        hi = U[a > 0.1]
        add("fig4a", "peak_a_over_d", float(a.max()))
        if hi.size:
            add("fig4a", "band_lo_U", float(hi.min()))
            add("fig4a", "band_hi_U", float(hi.max()))
        add("fig4a", "skop_griffin", float(meta.get("skop_griffin", "nan")))
    p = _latest(root, "sine-sweep/*_sweep.csv")
    sweep = None
    if p:
        _, data = read_table(p)
        sweep = [(d["ratio"], d["a_over_d"]) for d in data]
        for r, a in sweep:
            add("fig8", f"a_over_d@{r:g}", a)
    for n, figs in ((0, ("fig6", "fig7")), (2, ("fig10", "fig11"))):
        logs = sorted(root.glob("train/*/*_training_log.csv"))
        per_seed = []
        for lp in logs:
            meta, r50, a50, f50 = _final50(lp)
            if int(meta.get("n_past_actions", -1)) == n:
                per_seed.append((meta.get("seed"), r50, a50, f50))
        for seed, r50, a50, f50 in per_seed:
            add(figs[0] if n == 0 else "fig10", f"n{n}_seed{seed}_final50_reward", r50)
            add(figs[0] if n == 0 else "fig10", f"n{n}_seed{seed}_final50_mean_alpha", a50)
            add("fig10", f"n{n}_seed{seed}_final50_freq_ratio", f50)
        evals = sorted(root.glob(f"eval/*_n{n}_*_summary.csv"))
        for ep in evals:
            _, data = read_table(ep)
            if data:
                d = data[0]
                add(figs[1], f"n{n}_{ep.stem}_suppression", d["suppression"])
                add(figs[1], f"n{n}_{ep.stem}_freq_ratio", d["dominant_freq_ratio"])
                if n == 0 and sweep:
                    rs = np.array([s[0] for s in sweep])
                    ys = np.array([s[1] for s in sweep])
                    fr = d["dominant_freq_ratio"]
                    if math.isfinite(fr) and rs.min() <= fr <= rs.max():
                        env = float(np.interp(fr, rs, ys))
                        add("fig8", f"drl_point_gap_{ep.stem}", abs(d["a_over_d"] - env),
                            "(|A/D - sweep envelope| at the DRL frequency)")
    if not rows:
        raise CliError(f"no experiment outputs found under {root}")
    out = root / "report"
    meta = stamp("report", cfg)
    write_csv(out / f"{prefix('report', cfg)}_summary.csv", ("figure", "metric", "value", "note"), rows, meta)
    text = "\n".join([f"# {k}={v}" for k, v in meta.items()] + lines) + "\n"
    (out / f"{prefix('report', cfg)}_summary.txt").write_text(text)
    print(text, end="")
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate, "decay": cmd_decay, "lockin-sweep": cmd_lockin_sweep,
    "sine-sweep": cmd_sine_sweep, "train": cmd_train, "eval": cmd_eval, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vivrl", description="VIV surrogate, PPO control and lock-on baseline")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="key = value config file")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out", help="output root (default: run.output_dir, $VIVRL_OUT, ./vivrl_out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps and seeds")
        if name in ("train", "eval"):
            sp.add_argument("--n-past", type=int, choices=(0, 1, 2), dest="n_past")
            sp.add_argument("--episodes", type=int)
        if name == "train":
            sp.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                            help="comma-separated seeds trained independently")
        if name == "eval":
            sp.add_argument("--duration", type=float, help="controlled duration in seconds")
            sp.add_argument("--checkpoint", help="checkpoint path (default: this config's train output)")
            sp.add_argument("--which", choices=("final", "best"), default="final")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, root = resolve_config(args)
        return COMMANDS[args.command](args, cfg, root)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return 2
    except (VivError, ValueError, OSError) as exc:
        log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
