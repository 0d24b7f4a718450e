"""The headline experiments, bound to machine-readable outputs.

Each runner takes a validated ExperimentConfig and an output directory,
writes CSV artifacts with deterministic formatting, and returns a list of
verdict entries {criterion_id, value, threshold, pass}.  Replica fan-out uses
a thread pool (the compiled kernels release the GIL); results are keyed and
aggregated by replica index, so byte-identical output is independent of the
thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import coupling, oracle, stats
from .config import ExperimentConfig
from .errors import ConfigurationError
from .fv import FvConfig, advance, initial_state, run_until
from .potential import builtin_potential
from .sde import batch_killed_paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return str(path)


def verdict(criterion_id, value, threshold, passed):
    return {"criterion_id": criterion_id, "value": float(value),
            "threshold": float(threshold), "pass": bool(passed)}


def map_replicas(fn, n, threads):
    """Run fn(0..n-1), in order, optionally on a thread pool."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(r) for r in range(n)]


def _lyapunov_for(p, cfg):
    return coupling.build_lyapunov(p, cfg.v0 if cfg.v0 > 0 else None)


# ---------------------------------------------------------------------------
# qsd_accuracy (criterion A1)


def run_qsd_accuracy(cfg: ExperimentConfig, outdir: Path):
    p = builtin_potential(cfg.potential, cfg.potential_params())
    n = cfg.n_particles[0]
    g = oracle.build_operator(p, cfg.oracle_resolution)
    eig = oracle.principal_eigenpair(g)
    edges = stats.coarsened_edges(g.points, 4)
    oracle_hist = stats.density_to_histogram(eig.qsd_density, g.points, edges,
                                             g.cell_volume)

    fv_cfg = FvConfig(n, cfg.dt, cfg.seed)
    state = initial_state(p, fv_cfg, lo=[cfg.init_lo], hi=[cfg.init_hi])
    counts = np.zeros(len(edges) - 1)
    cadence = max(1, round(cfg.snapshot_every / cfg.dt))

    def observe(s):
        if s.time > cfg.burn_in + 1e-12:
            c, _ = np.histogram(s.positions[:, 0], bins=edges)
            counts[:] += c

    final = run_until(p, state, fv_cfg, cfg.horizon, observers=[(cadence,
                                                                 observe)])
    fv_hist = stats.HistogramMeasure(edges, counts / counts.sum())
    tv = stats.tv_distance(fv_hist, oracle_hist)

    files = [write_csv(outdir / "qsd_hist.csv",
                       ["bin_lo", "bin_hi", "fv_mass", "oracle_mass"],
                       [(edges[i], edges[i + 1], fv_hist.masses[i],
                         oracle_hist.masses[i])
                        for i in range(len(edges) - 1)])]
    files.append(write_csv(outdir / "qsd_summary.csv",
                           ["n_particles", "tv", "lambda0", "total_rebirths",
                            "bin_width"],
                           [(n, tv, eig.lambda0, final.total_rebirths,
                             fv_hist.bin_width)]))
    coord_cols = [f"x{k}" for k in range(g.points.shape[1])]
    files.append(write_csv(outdir / "oracle_qsd.csv",
                           coord_cols + ["density"],
                           [(*g.points[i], eig.qsd_density[i])
                            for i in range(g.n_nodes)]))
    with open(outdir / "oracle_qsd.json", "w") as fh:
        json.dump({"lambda0": eig.lambda0, "residual": eig.residual,
                   "resolution": cfg.oracle_resolution}, fh, indent=2,
                  sort_keys=True)
    files.append(str(outdir / "oracle_qsd.json"))
    files.append(write_csv(outdir / "final_state.csv",
                           ["time", "particle_index"] + coord_cols
                           + ["rebirth_count"],
                           [(final.time, i, *final.positions[i],
                             int(final.rebirth_counts[i]))
                            for i in range(n)]))
    return [verdict("A1_qsd_tv", tv, cfg.tv_threshold,
                    tv <= cfg.tv_threshold)], files


# ---------------------------------------------------------------------------
# contraction_vs_N (criterion A3)


def _monotone_decrease_check(d_rows, until=None):
    """(worst standardized increase, overall decrease significance).

    `until` restricts the consecutive-difference check to the first samples
    (the decay phase); the contraction/Lyapunov bounds promise a decreasing
    envelope while the statistic is large, not strict decrease at its floor.
    """
    if until is not None:
        d_rows = d_rows[:, :max(int(until) + 1, 2)]
    diffs = np.diff(d_rows, axis=1)          # replicas x (k-1)
    mean_diff = diffs.mean(axis=0)
    se_diff = diffs.std(axis=0, ddof=1) / math.sqrt(diffs.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_diff > 0, mean_diff / se_diff,
                     np.where(mean_diff > 0, np.inf, 0.0))
    worst_increase = float(np.max(z))
    total = d_rows[:, -1] - d_rows[:, 0]
    se_tot = total.std(ddof=1) / math.sqrt(len(total))
    z_total = total.mean() / se_tot if se_tot > 0 else (
        -np.inf if total.mean() < 0 else np.inf)
    return worst_increase, float(z_total)


def run_contraction_vs_n(cfg: ExperimentConfig, outdir: Path):
    p = builtin_potential(cfg.potential, cfg.potential_params())
    lyap = _lyapunov_for(p, cfg)
    dp = coupling.DistanceParams(cfg.alpha, cfg.beta, lyap.v0)
    cond = dp.condition_report(lyap)
    block_steps = max(1, round(cfg.block_time / cfg.dt))

    medians = {}
    rows_out = []
    quantiles = {}
    worst_increases = {}
    for i, n in enumerate(cfg.n_particles):
        fv_cfg = FvConfig(n, cfg.dt, cfg.seed,
                          replica_id=1000 * i,
                          boundary_collar=lyap.collar_threshold,
                          lyapunov=lyap)
        x0 = np.full((n, 1), cfg.x0)
        y0 = np.full((n, 1), cfg.y0)
        times, d_rows, taus, pair_taus = coupling.contraction_experiment(
            p, lyap, dp, fv_cfg, x0, y0, cfg.horizon, cfg.replicas,
            block_steps=block_steps, threads=cfg.threads)
        mean_d = d_rows.mean(axis=0)
        se = d_rows.std(axis=0, ddof=1) / math.sqrt(cfg.replicas)
        frac = (d_rows == 0.0).mean(axis=0)
        for j, t in enumerate(times):
            rows_out.append((n, t, mean_d[j], mean_d[j] - 1.96 * se[j],
                             mean_d[j] + 1.96 * se[j], frac[j]))
        med = float(np.median(taus))
        medians[n] = med
        quantiles[str(n)] = {
            "median": med,
            "q25": float(np.quantile(taus, 0.25)),
            "q75": float(np.quantile(taus, 0.75)),
            "coupled_fraction": float(np.isfinite(taus).mean()),
            "pairwise_median": float(np.median(pair_taus)),
        }
        worst_increases[n] = _monotone_decrease_check(d_rows)

    files = [write_csv(outdir / "contraction.csv",
                       ["n_particles", "time", "mean_d", "lo95", "hi95",
                        "frac_fully_coupled"], rows_out)]
    with open(outdir / "coupling_times.json", "w") as fh:
        json.dump({"quantiles": quantiles, "condition_report": cond}, fh,
                  indent=2, sort_keys=True)
    files.append(str(outdir / "coupling_times.json"))

    meds = [medians[n] for n in cfg.n_particles]
    ratio = max(meds) / min(meds) if min(meds) > 0 \
        and all(map(math.isfinite, meds)) else math.inf
    pair_meds = [quantiles[str(n)]["pairwise_median"]
                 for n in cfg.n_particles]
    pair_ratio = max(pair_meds) / min(pair_meds) if min(pair_meds) > 0 \
        else math.inf
    worst_z = max(w for w, _ in worst_increases.values())
    total_z = max(z for _, z in worst_increases.values())
    verdicts = [
        verdict("A3_coupling_time_ratio", ratio, cfg.ratio_threshold,
                ratio <= cfg.ratio_threshold),
        # informative companion: the per-pair coupling time isolates the
        # contraction rate from the union-over-N effect in the full vector
        verdict("A3_pairwise_time_ratio", pair_ratio, cfg.ratio_threshold,
                pair_ratio <= cfg.ratio_threshold),
        verdict("A3_mean_d_decreasing", worst_z, 3.0,
                worst_z <= 3.0 and total_z <= -3.0),
    ]
    return verdicts, files


# ---------------------------------------------------------------------------
# chaos_vs_N (criteria A4, A5)


def run_chaos_vs_n(cfg: ExperimentConfig, outdir: Path):
    p = builtin_potential(cfg.potential, cfg.potential_params())
    g = oracle.build_operator(p, cfg.oracle_resolution)
    times = list(cfg.times)
    step_marks = [round(t / cfg.dt) for t in times]
    left = g.points[:, 0] < 0.0

    def f_emp(positions):
        return float(np.mean(positions[:, 0] < 0.0))

    mean_err = {}
    se_err = {}
    rows = []
    for i, n in enumerate(cfg.n_particles):
        base = 2000 * i

        def run_one(r, n=n, base=base):
            fv_cfg = FvConfig(n, cfg.dt, cfg.seed, replica_id=base + r)
            s = initial_state(p, fv_cfg, lo=[cfg.init_lo], hi=[cfg.init_hi])
            mu0 = oracle.histogram_density(g, s.positions)
            emp = []
            done = 0
            for mark in step_marks:
                advance(p, s, fv_cfg, mark - done)
                done = mark
                emp.append(f_emp(s.positions))
            return mu0, emp

        results = map_replicas(run_one, cfg.replicas, cfg.threads)
        mu0_mat = np.stack([mu for mu, _ in results], axis=1)
        emp_mat = np.array([e for _, e in results])      # replicas x times
        evolved = oracle.evolve_raw_multi(g, mu0_mat, times)
        errs = np.empty_like(emp_mat)
        for j, rho in enumerate(evolved):
            expect = rho[left].sum(axis=0) / rho.sum(axis=0)
            errs[:, j] = np.abs(emp_mat[:, j] - expect)
        mean_err[n] = errs.mean(axis=0)
        se_err[n] = errs.std(axis=0, ddof=1) / math.sqrt(cfg.replicas)
        for j, t in enumerate(times):
            rows.append((n, t, mean_err[n][j], se_err[n][j], cfg.replicas))

    files = [write_csv(outdir / "chaos_error.csv",
                       ["n_particles", "time", "mean_error", "stderr",
                        "replicas"], rows)]

    verdicts = []
    if len(cfg.n_particles) >= 3:
        ns = np.array(cfg.n_particles, dtype=float)
        errs0 = np.array([mean_err[n][0] for n in cfg.n_particles])
        slope, band = stats.loglog_slope(ns, errs0)
        ok = slope <= cfg.slope_threshold and slope + band < 0.0
        verdicts.append(verdict("A4_chaos_slope", slope, cfg.slope_threshold,
                                ok))
        files.append(write_csv(outdir / "chaos_slope.csv",
                               ["time", "slope", "band95"],
                               [(times[0], slope, band)]))
    if len(times) >= 2:
        n_max = max(cfg.n_particles)
        factor = mean_err[n_max][-1] / mean_err[n_max][0]
        verdicts.append(verdict("A5_uniform_in_time_factor", factor,
                                cfg.factor_threshold,
                                factor <= cfg.factor_threshold))
    return verdicts, files


# ---------------------------------------------------------------------------
# boundary_fraction (criterion A6)


def run_boundary_fraction(cfg: ExperimentConfig, outdir: Path):
    p = builtin_potential(cfg.potential, cfg.potential_params())
    lyap = _lyapunov_for(p, cfg)
    cadence = max(1, round(cfg.snapshot_every / cfg.dt))
    n_snapshots = max(1, round((cfg.horizon - cfg.burn_in)
                               / cfg.snapshot_every))
    freqs = {}
    rows = []
    for n in cfg.n_particles:
        fv_cfg = FvConfig(n, cfg.dt, cfg.seed,
                          boundary_collar=lyap.collar_threshold,
                          lyapunov=lyap)
        state = initial_state(p, fv_cfg, lo=[cfg.init_lo], hi=[cfg.init_hi])
        state = run_until(p, state, fv_cfg, cfg.burn_in)
        exceed = 0
        seen = 0

        def observe(s, n=n):
            nonlocal exceed, seen
            a = coupling.boundary_count_positions(s.positions, lyap)
            rows.append((n, s.time, a, s.total_rebirths))
            seen += 1
            if a > cfg.boundary_alpha * n:
                exceed += 1

        run_until(p, state, fv_cfg,
                  cfg.burn_in + n_snapshots * cfg.snapshot_every,
                  observers=[(cadence, observe)])
        freqs[n] = exceed / seen

    files = [write_csv(outdir / "boundary_counts.csv",
                       ["n_particles", "time", "A", "total_rebirths"], rows)]
    files.append(write_csv(outdir / "boundary_freq.csv",
                           ["n_particles", "freq_exceed", "alpha",
                            "snapshots"],
                           [(n, freqs[n], cfg.boundary_alpha, n_snapshots)
                            for n in cfg.n_particles]))
    base_freq = freqs[cfg.n_particles[0]]
    monotone = all(freqs[b] <= freqs[a] + 1e-12
                   for a, b in zip(cfg.n_particles, cfg.n_particles[1:]))
    verdicts = [
        verdict("A6_boundary_fraction", base_freq, cfg.freq_threshold,
                base_freq < cfg.freq_threshold),
        verdict("A6_decreasing_in_N", float(monotone), 1.0, monotone),
    ]
    return verdicts, files


# ---------------------------------------------------------------------------
# exit_scaling (criterion A7)


def run_exit_scaling(cfg: ExperimentConfig, outdir: Path):
    u0 = None
    rows = []
    mc_means = []
    lam_inv = []
    for i, eps in enumerate(cfg.epsilons):
        p = builtin_potential(cfg.potential, cfg.potential_params(eps))
        u0 = p.boundary_level
        g = oracle.build_operator(p, cfg.oracle_resolution)
        lam = oracle.principal_eigenpair(g).lambda0
        horizon = 12.0 / lam
        x0 = np.tile([[1.0]], (cfg.paths, 1))
        exit_times, survived = batch_killed_paths(
            p, x0, cfg.dt, horizon, cfg.seed, replica_offset=i)
        exited = exit_times[np.isfinite(exit_times)]
        if len(exited) == 0:
            raise ConfigurationError("no exits observed; horizon too short")
        mean_exit = float(np.mean(exited))
        mc_means.append(mean_exit)
        lam_inv.append(1.0 / lam)
        rows.append((eps, mean_exit,
                     float(np.std(exited, ddof=1) / math.sqrt(len(exited))),
                     1.0 / lam, int(survived.sum()), len(exited)))

    files = [write_csv(outdir / "exit_scaling.csv",
                       ["epsilon", "mc_mean_exit", "mc_stderr",
                        "oracle_inv_lambda0", "censored", "exited"], rows)]
    inv_eps = np.exp(1.0 / np.array(cfg.epsilons))
    slope_mc, _ = stats.loglog_slope(inv_eps, np.array(mc_means))
    slope_or, _ = stats.loglog_slope(inv_eps, np.array(lam_inv))
    rel_mc = abs(slope_mc - u0) / u0
    rel_or = abs(slope_or - u0) / u0
    rel_diff = abs(slope_mc - slope_or) / abs(slope_or)
    files.append(write_csv(outdir / "exit_slopes.csv",
                           ["slope_mc", "slope_oracle", "boundary_level"],
                           [(slope_mc, slope_or, u0)]))
    verdicts = [
        verdict("A7_mc_slope_vs_U0", rel_mc, 0.25, rel_mc <= 0.25),
        verdict("A7_oracle_slope_vs_U0", rel_or, 0.25, rel_or <= 0.25),
        verdict("A7_mc_vs_oracle", rel_diff, 0.15, rel_diff <= 0.15),
    ]
    return verdicts, files


# ---------------------------------------------------------------------------
# uniform_survival (criterion A8)


def run_uniform_survival(cfg: ExperimentConfig, outdir: Path):
    eps_sorted = sorted(cfg.epsilons)
    grid = np.linspace(cfg.grid_lo, cfg.grid_hi,
                       cfg.grid_points).reshape(-1, 1)
    indicators = {}
    for eps in eps_sorted:
        p = builtin_potential(cfg.potential, cfg.potential_params(eps))
        flags = []
        for r in range(cfg.replicas):
            _, survived = batch_killed_paths(p, grid, cfg.dt, cfg.horizon,
                                             cfg.seed, replica_offset=r,
                                             shared_noise=True)
            flags.append(0.0 if survived.all() else 1.0)
        indicators[eps] = np.array(flags)

    lo, hi = eps_sorted[0], eps_sorted[-1]
    diff = indicators[lo] - indicators[hi]
    mean_diff = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 \
        else math.inf
    upper95 = mean_diff + 1.645 * se
    rows = [(eps, float(indicators[eps].mean()), cfg.replicas)
            for eps in eps_sorted]
    files = [write_csv(outdir / "uniform_survival.csv",
                       ["epsilon", "p_bar_estimate", "replications"], rows)]
    files.append(write_csv(outdir / "uniform_survival_paired.csv",
                           ["eps_low", "eps_high", "mean_diff",
                            "upper95_one_sided"],
                           [(lo, hi, mean_diff, upper95)]))
    verdicts = [verdict("A8_pbar_decreases", upper95, 0.0, upper95 < 0.0)]
    return verdicts, files


# ---------------------------------------------------------------------------
# lyapunov_decay (criterion A10)


def run_lyapunov_decay(cfg: ExperimentConfig, outdir: Path):
    p = builtin_potential(cfg.potential, cfg.potential_params())
    lyap = _lyapunov_for(p, cfg)
    n = cfg.n_particles[0]
    cadence = max(1, round(cfg.snapshot_every / cfg.dt))

    def run_one(r):
        fv_cfg = FvConfig(n, cfg.dt, cfg.seed, replica_id=r,
                          boundary_collar=lyap.collar_threshold,
                          lyapunov=lyap)
        state = initial_state(p, fv_cfg, lo=[cfg.init_lo], hi=[cfg.init_hi])
        series = [float(np.mean(lyap.v(state.positions)))]

        def observe(s):
            series.append(float(np.mean(lyap.v(s.positions))))

        run_until(p, state, fv_cfg, cfg.block_time, observers=[(cadence,
                                                                observe)])
        return series

    all_series = np.array(map_replicas(run_one, cfg.replicas, cfg.threads))
    mean_v = all_series.mean(axis=0)
    t_axis = np.arange(all_series.shape[1]) * cadence * cfg.dt
    threshold = 2.0 * lyap.c1
    below = np.flatnonzero(mean_v < threshold)
    decay_end = int(below[0]) if len(below) else all_series.shape[1] - 1
    worst_z, _ = _monotone_decrease_check(all_series, until=decay_end)
    final_v = float(mean_v[-1])
    rows = [(t_axis[j], mean_v[j],
             all_series[:, j].std(ddof=1) / math.sqrt(cfg.replicas))
            for j in range(len(t_axis))]
    files = [write_csv(outdir / "lyapunov_decay.csv",
                       ["time", "mean_V", "stderr"], rows)]
    verdicts = [
        verdict("A10_monotone_decrease", worst_z, 3.0, worst_z <= 3.0),
        verdict("A10_below_2C1", final_v, threshold, final_v < threshold),
    ]
    return verdicts, files


RUNNERS = {
    "qsd_accuracy": run_qsd_accuracy,
    "contraction_vs_N": run_contraction_vs_n,
    "chaos_vs_N": run_chaos_vs_n,
    "boundary_fraction": run_boundary_fraction,
    "exit_scaling": run_exit_scaling,
    "uniform_survival": run_uniform_survival,
    "lyapunov_decay": run_lyapunov_decay,
}


def run_experiment(cfg: ExperimentConfig, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.experiment](cfg, outdir)
