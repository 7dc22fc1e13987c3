"""Configuration-driven experiment runner.

Subcommands: forward | invert | rtm | lsrtm | ma-solve | sensitivity |
noise | tomo. Every run is driven by one INI config (see config.py) and
writes CSV tables, FWIGRID1/FWIGATH1 binaries, and PGM images into the
output directory. Randomness comes from a Philox counter-based generator
keyed by the config seed, so repeated runs are bitwise reproducible.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import born as born_mod
from .adjoint import gradient, rtm_image
from .config import ExperimentConfig
from .errors import ConfigError, MaConvergenceError, NumericalError, StabilityError, ValidationError
from .fileio import read_field, write_field, write_shot_file
from .grids import Grid2D, ShotRecord, TimeAxis, VelocityModel
from .misfit import MisfitKind, evaluate
from .mongeampere import Density2D, ma_solve, w2_squared_2d
from .optimize import LbfgsConfig, lbfgs_minimize
from .raypath import SlownessProfile, herglotz_invert, ray_integrals
from .wavesim import SimConfig, forward, max_stable_dt


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox) keyed by the config seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def write_pgm(path, values: np.ndarray, clip_sigma: float = 3.0) -> None:
    """8-bit binary PGM (P5), linear gray, values clipped at +-clip_sigma std."""
    v = np.asarray(values, dtype=np.float64)
    mu, sd = float(v.mean()), float(v.std())
    lo, hi = (mu - clip_sigma * sd, mu + clip_sigma * sd) if sd > 0 else (mu - 1, mu + 1)
    c = np.clip(v, lo, hi)
    span = c.max() - c.min()
    gray = np.zeros_like(c, dtype=np.uint8) if span == 0 else \
        np.round(255 * (c - c.min()) / span).astype(np.uint8)
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def write_csv(path, header: list[str], rows) -> None:
    """Self-describing CSV with %.17g floats (bitwise-stable round trips)."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def _ricker_series(t: np.ndarray, peak_frequency: float, delay: float) -> np.ndarray:
    arg = (np.pi * peak_frequency * (t - delay)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def _double_ricker_setup(cfg: ExperimentConfig):
    """Single synthetic trace with two Ricker events, for sensitivity/noise runs."""
    length = cfg.float_("sensitivity", "trace_length", 3.0)
    dt = cfg.float_("sensitivity", "sample_dt", 0.0025)
    fpeak = cfg.float_("wavelet", "peak_frequency", 15.0)
    events = cfg.str_("sensitivity", "event_times", "1.2, 1.6")
    times = [float(v) for v in events.split(",")]
    nt = int(round(length / dt)) + 1
    axis = TimeAxis(nt, dt)
    t = axis.times()

    def trace(shift=0.0):
        return sum(_ricker_series(t, fpeak, ev + shift) for ev in times)

    return axis, trace


def _check_cfl(model: VelocityModel, time_axis: TimeAxis, sim: SimConfig) -> None:
    limit = max_stable_dt(model, sim)
    if time_axis.dt > limit * (1 + 1e-12):
        raise ConfigError(f"[time] dt = {time_axis.dt} exceeds the stable limit {limit:.6g} "
                          f"for this model and stencil")


def cmd_forward(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    model = cfg.model()
    time_axis = cfg.time_axis()
    sim = cfg.sim_config()
    acq = cfg.acquisition()
    _check_cfl(model, time_axis, sim)
    stride = cfg.int_("output", "movie_stride", 0)
    for s in range(len(acq.sources)):
        shot, movie = forward(model, acq, time_axis, sim, s)
        write_shot_file(shot, out / f"shot_{s:03d}.gather")
        if stride > 0:
            every = max(1, stride // movie.store_stride)
            frames = movie.frames[::every]
            strip = np.concatenate(list(frames[: min(8, len(frames))]), axis=1)
            write_pgm(out / f"wavefield_{s:03d}.pgm", strip)
    print(f"wrote {len(acq.sources)} gathers to {out}")
    return 0


def _observed_or_synth(cfg, out, acq, time_axis, sim):
    obs_dir = cfg.str_("invert", "observed_dir", None)
    if obs_dir:
        from .fileio import read_shot_file
        return [read_shot_file(Path(obs_dir) / f"shot_{s:03d}.gather")
                for s in range(len(acq.sources))], None
    # inverse-crime mode: synthesize from the configured truth model
    truth = cfg.model("truth")
    _check_cfl(truth, time_axis, sim)
    observed = [forward(truth, acq, time_axis, sim, s)[0] for s in range(len(acq.sources))]
    return observed, truth


def cmd_invert(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    start = cfg.model()
    time_axis = cfg.time_axis()
    sim = cfg.sim_config()
    acq = cfg.acquisition()
    kind = cfg.misfit_kind()
    lcfg = cfg.lbfgs_config()
    _check_cfl(start, time_axis, sim)
    observed, truth = _observed_or_synth(cfg, out, acq, time_axis, sim)
    snap_every = cfg.int_("optimizer", "snapshot_every", 10)
    config_start = start

    # resume from the most recent snapshot if one exists
    snaps = sorted(out.glob("model_iter_*.grid"))
    done = 0
    if snaps:
        done = int(snaps[-1].stem.split("_")[-1])
        grid, values = read_field(snaps[-1])
        start = VelocityModel(grid, values, vmin=start.vmin, vmax=start.vmax)
        print(f"resuming from {snaps[-1].name} ({done} iterations done)")
    remaining = max(lcfg.max_iters - done, 1)
    lcfg = LbfgsConfig(memory=lcfg.memory, max_iters=remaining, grad_tol=lcfg.grad_tol,
                       initial_step=lcfg.initial_step)

    def objective(model):
        return gradient(model, acq, time_axis, sim, observed, kind, threads=threads)

    def on_accept(it, model):
        if it % snap_every == 0:
            write_field(model.grid, model.m, out / f"model_iter_{done + it:04d}.grid")

    final, history, status = lbfgs_minimize(objective, start, lcfg, on_accept=on_accept)
    rows = [(h.iter + done, h.misfit, h.relative_misfit, h.grad_norm, h.step_length, h.wall_seconds)
            for h in history]
    write_csv(out / "history.csv",
              ["iter", "J", "J_rel", "grad_norm", "step_length", "wall_seconds"], rows)
    write_field(final.grid, final.m, out / f"model_iter_{done + history[-1].iter:04d}.grid")
    write_pgm(out / "model_final.pgm", final.velocity())
    print(f"inversion {status}: J {history[0].misfit:.6g} -> {history[-1].misfit:.6g}")
    if truth is not None:
        r0 = float(np.sqrt(np.mean((config_start.velocity() - truth.velocity()) ** 2)))
        rf = float(np.sqrt(np.mean((final.velocity() - truth.velocity()) ** 2)))
        write_csv(out / "rmse.csv", ["which", "rmse_mps"],
                  [("initial", r0), ("final", rf), ("ratio", rf / max(r0, 1e-30))])
        print(f"model RMSE vs truth: {r0:.3f} -> {rf:.3f} m/s")
    return 0


def cmd_rtm(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    background = cfg.model()
    time_axis = cfg.time_axis()
    sim = cfg.sim_config()
    acq = cfg.acquisition()
    _check_cfl(background, time_axis, sim)
    observed, _ = _observed_or_synth(cfg, out, acq, time_axis, sim)
    image = rtm_image(background, acq, time_axis, sim, observed, threads=threads)
    write_field(image.grid, image.values, out / "rtm_image.grid")
    write_pgm(out / "rtm_image.pgm", image.values)
    print(f"RTM image written; max |amplitude| = {np.abs(image.values).max():.6g}")
    return 0


def cmd_lsrtm(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    m0 = cfg.model()
    time_axis = cfg.time_axis()
    sim = cfg.sim_config()
    acq = cfg.acquisition()
    _check_cfl(m0, time_axis, sim)
    spec = cfg.str_("lsrtm", "scatterers", required=True)
    refl = np.zeros(m0.grid.shape)
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        xs, zs, amp = (float(v) for v in chunk.split(","))
        ix = int(round((xs - m0.grid.origin[0]) / m0.grid.dx))
        iz = int(round((zs - m0.grid.origin[1]) / m0.grid.dz))
        refl[iz, ix] += amp
    true_m1 = born_mod.Reflectivity(m0.grid, refl)
    observed = born_mod.born_forward(m0, true_m1, acq, time_axis, sim, threads=threads)
    iters = cfg.int_("lsrtm", "iterations", 20)
    est, log = born_mod.lsrtm(m0, acq, time_axis, sim, observed, iters, threads=threads)
    write_field(est.grid, est.values, out / "reflectivity.grid")
    write_pgm(out / "reflectivity.pgm", est.values)
    write_csv(out / "lsrtm_convergence.csv", ["iter", "data_residual"], log)
    print(f"LSRTM: residual {log[0][1]:.6g} -> {log[-1][1]:.6g} in {log[-1][0]} iterations")
    return 0


def cmd_masolve(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    n = cfg.int_("ma", "grid_n", 65)
    kind = cfg.str_("ma", "densities", "uniform")
    h = 1.0 / (n - 1)
    x1 = np.arange(n)[:, None] * h
    x2 = np.arange(n)[None, :] * h
    if kind == "uniform":
        f = Density2D.from_values(np.ones((n, n)))
        g = Density2D.from_values(np.ones((n, n)))
    elif kind == "translate":
        sig = cfg.float_("ma", "sigma", 0.08)
        sep = cfg.float_("ma", "separation", 0.2)
        floor = cfg.float_("ma", "floor_rel", 0.02)
        f = Density2D.from_values(
            np.exp(-(((x1 - 0.5 + sep / 2) ** 2 + (x2 - 0.5) ** 2)) / (2 * sig**2)), floor_rel=floor)
        g = Density2D.from_values(
            np.exp(-(((x1 - 0.5 - sep / 2) ** 2 + (x2 - 0.5) ** 2)) / (2 * sig**2)), floor_rel=floor)
    else:
        raise ConfigError(f"[ma] densities must be 'uniform' or 'translate', got {kind!r}")
    sol = ma_solve(f, g, cfg.ma_params())
    value = w2_squared_2d(f, g, sol)
    gridobj = Grid2D(n, n, h, h)
    write_field(gridobj, np.asarray(sol.u), out / "ma_potential.grid")
    write_csv(out / "ma_diagnostics.csv",
              ["newton_iters", "residual_norm", "delta", "epsilon", "k_estimate", "w2_squared"],
              [(sol.newton_iters, sol.residual_norm, sol.delta_used, sol.epsilon_used,
                sol.k_estimate, value)])
    print(f"MA solve: {sol.newton_iters} Newton iterations, W2^2 = {value:.8g}")
    return 0


def cmd_sensitivity(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    axis, make_trace = _double_ricker_setup(cfg)
    shift_max = cfg.float_("sensitivity", "shift_max", 0.6)
    shift_step = cfg.float_("sensitivity", "shift_step", 0.005)
    norm = cfg.normalization(override_section="sensitivity")
    obs = ShotRecord(axis, make_trace()[None, :])
    shifts = np.arange(-shift_max, shift_max + 1e-12, shift_step)
    rows = []
    for s in shifts:
        sim_rec = ShotRecord(axis, make_trace(s)[None, :])
        jl2 = evaluate(MisfitKind(kind="l2"), sim_rec, obs).value
        jint = evaluate(MisfitKind(kind="integral_l2"), sim_rec, obs).value
        jw2 = evaluate(MisfitKind(kind="w2_trace", normalization=norm), sim_rec, obs).value
        rows.append((float(s), jl2, jint, jw2))
    write_csv(out / "sensitivity.csv", ["shift_s", "J_l2", "J_intl2", "J_w2trace"], rows)
    print(f"sensitivity sweep: {len(rows)} shifts written")
    return 0


def piecewise_constant_noise(rng: np.random.Generator, nt: int, pieces: int, amplitude: float) -> np.ndarray:
    """Piecewise-constant additive noise, uniform in [-amplitude, amplitude] per piece."""
    edges = np.linspace(0, nt, pieces + 1).astype(int)
    values = rng.uniform(-amplitude, amplitude, pieces)
    noise = np.zeros(nt)
    for k in range(pieces):
        noise[edges[k]:edges[k + 1]] = values[k]
    return noise


def cmd_noise(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    length = cfg.float_("noise", "trace_length", 3.0)
    dt = cfg.float_("noise", "sample_dt", length / 8192)
    fpeak = cfg.float_("wavelet", "peak_frequency", 15.0)
    amp_rel = cfg.float_("noise", "amplitude_rel", 0.5)
    n_lo = cfg.int_("noise", "n_min_exp", 4)
    n_hi = cfg.int_("noise", "n_max_exp", 12)
    reps = cfg.int_("noise", "realizations", 8)
    norm = cfg.normalization(override_section="noise")
    nt = int(round(length / dt)) + 1
    axis = TimeAxis(nt, dt)
    t = axis.times()
    clean = _ricker_series(t, fpeak, 1.2) + _ricker_series(t, fpeak, 1.6)
    obs = ShotRecord(axis, clean[None, :])
    amplitude = amp_rel * float(np.abs(clean).max())
    rng = make_rng(seed)
    rows = []
    for k in range(n_lo, n_hi + 1):
        pieces = 2**k
        w2_avg = l2_avg = 0.0
        for _ in range(reps):
            noisy = clean + piecewise_constant_noise(rng, nt, pieces, amplitude)
            sim_rec = ShotRecord(axis, noisy[None, :])
            w2_avg += evaluate(MisfitKind(kind="w2_trace", normalization=norm), sim_rec, obs).value / reps
            l2_avg += float(np.sum((noisy - clean) ** 2) * dt) / reps
        rows.append((pieces, w2_avg, l2_avg))
    write_csv(out / "noise.csv", ["pieces", "w2_squared", "l2_squared"], rows)
    ns = np.array([r[0] for r in rows], dtype=float)
    w2 = np.array([r[1] for r in rows])
    l2 = np.array([r[2] for r in rows])

    def loglog_slope(values):
        if np.any(values <= 0):
            return float("nan")
        return float(np.polyfit(np.log(ns), np.log(values), 1)[0])

    slope_w2 = loglog_slope(w2)
    slope_l2 = loglog_slope(l2)
    write_csv(out / "noise_slopes.csv", ["metric", "loglog_slope"],
              [("w2_squared", slope_w2), ("l2_squared", slope_l2)])
    print(f"noise study: W2^2 slope {slope_w2:.3f}, L2^2 slope {slope_l2:.3f}")
    return 0


def cmd_tomo(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    v0 = cfg.float_("tomo", "v0", 2000.0)
    grad = cfg.float_("tomo", "gradient", 0.5)
    z_max = cfg.float_("tomo", "z_max", 4000.0)
    samples = cfg.int_("tomo", "samples", 25)
    points = cfg.int_("tomo", "profile_points", 4001)
    z = np.linspace(0.0, z_max, points)
    profile = SlownessProfile(z, 1.0 / (v0 + grad * z))
    z_turn = np.linspace(0.0, 0.625 * z_max, samples + 1)[1:]
    ps = 1.0 / (v0 + grad * z_turn)
    rows = []
    xs = []
    for p in ps:
        T, X = ray_integrals(profile, p)
        xs.append(X)
        rows.append((float(p), T, X))
    write_csv(out / "rays.csv", ["p", "T", "X"], rows)
    recovered = herglotz_invert(ps, np.array(xs), s0=1.0 / v0)
    v_rec = recovered.velocity()
    v_true = v0 + grad * recovered.z
    write_csv(out / "profile.csv", ["z", "v_true", "v_recovered"],
              list(zip(recovered.z.tolist(), v_true.tolist(), v_rec.tolist())))
    err = float(np.max(np.abs(v_rec - v_true) / v_true))
    print(f"traveltime round trip: max relative velocity error {err:.3e}")
    return 0


COMMANDS = {
    "forward": cmd_forward,
    "invert": cmd_invert,
    "rtm": cmd_rtm,
    "lsrtm": cmd_lsrtm,
    "ma-solve": cmd_masolve,
    "sensitivity": cmd_sensitivity,
    "noise": cmd_noise,
    "tomo": cmd_tomo,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fwiot", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment INI file")
    parser.add_argument("--output-dir", default=".", help="directory for artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="shot-level worker threads")
    args = parser.parse_args(argv)

    try:
        cfg = ExperimentConfig.load(args.config)
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else cfg.seed()
        return COMMANDS[args.command](cfg, out, seed, max(args.threads, 1))
    except (ConfigError, ValidationError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (StabilityError, MaConvergenceError, NumericalError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
