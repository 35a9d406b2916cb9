"""Experiment jobs behind the CLI: one job per seed, results written as CSV/JSON."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .basis import coercivity_constant, coercivity_matrices
from .config import ExperimentConfig
from .learner import best_approximation, evaluate, learn
from .simulator import (fingerprint, histogram_from_distances, pair_distances, read_trajectory,
                        simulate, trajectory_histogram, write_trajectory)

log = logging.getLogger(__name__)

REPORT_FIELDS = ["T", "seed", "E_T", "E_T_excess", "l2_rho_error", "kl", "c_H", "solve_method"]


def _comments(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.config_hash(), "preset": cfg.name, **extra}


def write_csv(path, fields, rows, comments: dict) -> None:
    buf = io.StringIO()
    for k, v in comments.items():
        buf.write(f"# {k}={v}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for k, v in row.items()})
    Path(path).write_text(buf.getvalue())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_pool(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _trajectory(cfg: ExperimentConfig, seed: int, out: Path | None = None):
    """Simulate (or reload a matching stored) trajectory of length max(T_list)."""
    spec, phi = cfg.build_spec(), cfg.build_coupling()
    T = max(int(t) for t in cfg.T_list)
    path = out / f"traj_seed{seed}.bin" if out else None
    if path is not None and path.exists():
        traj = read_trajectory(path)
        if (traj.spec_fingerprint == fingerprint(spec, phi, seed, cfg.burn_in) and traj.T == T
                and traj.thin == 1):
            traj.burn_in = cfg.burn_in
            return spec, phi, traj
    traj = simulate(spec, phi, T, seed, burn_in=cfg.burn_in, thin=cfg.thin,
                    hist_R=cfg.R if cfg.thin > 1 else None, hist_bins=cfg.bins)
    return spec, phi, traj


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def simulate_job(cfg: ExperimentConfig, seed: int, out: str):
    out = Path(out)
    spec, phi, traj = _trajectory(cfg, seed)
    write_trajectory(out / f"traj_seed{seed}.bin", traj)
    for T in cfg.T_list:
        T = int(T)
        if traj.thin == 1:
            hist = trajectory_histogram(traj.prefix(T), spec, cfg.R, cfg.bins)
        else:
            hist = traj.hist
        (out / f"hist_T{T}_seed{seed}.csv").write_text(
            hist.to_csv(_comments(cfg, seed=seed, T=T, overflow=hist.overflow)))
    return seed


def sweep_job(cfg: ExperimentConfig, panel: dict, value, seed: int):
    """Distance histogram counts for one swept parameter value (R fixed later)."""
    param = panel["param"]
    T = int(cfg.T_list[0])
    net_over, cpl_over = {}, {}
    if param in ("eta", "gamma"):
        cpl_over[param] = value
    elif param == "omega":
        net_over["noise"] = {**cfg.network.get("noise", {}), "omega": value}
    elif param == "n":
        net_over["n"] = int(value)
    elif param == "T":
        T = int(value)
    else:
        raise ValueError(f"cannot sweep {param!r}")
    spec = cfg.build_spec(**net_over)
    phi = cfg.build_coupling(**cpl_over)
    traj = simulate(spec, phi, T, seed, burn_in=cfg.burn_in, thin=max(1, T // 10 ** 5))
    if traj.thin == 1:
        r = pair_distances(traj.states[:T], spec)
    else:
        r = pair_distances(traj.states, spec)
    return param, value, r.ravel()


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.sweep:
        return cmd_sweep(cfg, out, threads)
    _run_pool(simulate_job, [(cfg, int(s), str(out)) for s in cfg.seeds], threads)
    return sorted(out.glob("*"))


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    jobs = [(cfg, panel, v, int(cfg.seeds[0])) for panel in cfg.sweep for v in panel["values"]]
    results = _run_pool(sweep_job, jobs, threads)
    written = []
    for panel in cfg.sweep:
        rs = [(v, r) for p, v, r in results if p == panel["param"]]
        R = float(np.max([r.max() for _, r in rs])) * 1.0001
        rows = []
        hists = [(v, histogram_from_distances(r, R, cfg.bins)) for v, r in rs]
        for b in range(cfg.bins):
            row = {"bin_left": hists[0][1].edges[b], "bin_right": hists[0][1].edges[b + 1]}
            for v, hst in hists:
                row[f"{panel['param']}={v}"] = hst.mass[b]
            rows.append(row)
        path = out / f"sweep_{panel['param']}.csv"
        write_csv(path, list(rows[0]), rows, _comments(cfg, seed=cfg.seeds[0]))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# learn / coercivity / figures
# ---------------------------------------------------------------------------

def learn_job(cfg: ExperimentConfig, seed: int, out: str | None):
    out = Path(out) if out else None
    spec, phi, traj = _trajectory(cfg, seed, out)
    basis = cfg.build_basis()
    rows = []
    for T in sorted(int(t) for t in cfg.T_list):
        sub = traj.prefix(T)
        res = learn(sub, spec, basis)
        rep = evaluate(sub, spec, phi, res, R=cfg.R, B=cfg.bins, resimulate=cfg.resimulate)
        U, X = coercivity_matrices(basis, sub, spec)
        coer = coercivity_constant(U, X, basis=basis)
        row = {**rep.row(), "c_H": coer.c_H, "solve_method": res.solve_method}
        rows.append(row)
        if out:
            write_json(out / f"learn_T{T}_seed{seed}.json",
                       {**res.to_dict(), "config_hash": cfg.config_hash(), "seed": seed, "T": T})
            write_json(out / f"coercivity_T{T}_seed{seed}.json",
                       {**coer.to_dict(), "config_hash": cfg.config_hash(), "seed": seed, "T": T})
    return rows


def summarize(rows: list[dict], keys=("E_T", "E_T_excess", "l2_rho_error", "kl", "c_H")):
    """Median and interquartile range per T across seeds."""
    out = []
    for T in sorted({r["T"] for r in rows}):
        sel = [r for r in rows if r["T"] == T]
        row = {"T": T, "n_seeds": len(sel)}
        for k in keys:
            vals = np.array([r[k] for r in sel], dtype=float)
            with np.errstate(invalid="ignore"):    # inf entries (diverged re-simulations)
                q1, med, q3 = np.nanpercentile(vals, [25, 50, 75]) if np.isfinite(vals).any() \
                    else (np.nan,) * 3
            row[k] = med
            row[f"{k}_iqr"] = q3 - q1
        out.append(row)
    return out


def cmd_learn(cfg: ExperimentConfig, out: Path, threads: int = 1):
    out.mkdir(parents=True, exist_ok=True)
    per_seed = _run_pool(learn_job, [(cfg, int(s), str(out)) for s in cfg.seeds], threads)
    rows = sorted((r for rs in per_seed for r in rs), key=lambda r: (r["T"], r["seed"]))
    write_csv(out / "report.csv", REPORT_FIELDS, rows, _comments(cfg, seeds=cfg.seeds))
    summary = summarize(rows)
    write_csv(out / "summary.csv", list(summary[0]), summary, _comments(cfg, seeds=cfg.seeds))
    return rows, summary


def cmd_coercivity(cfg: ExperimentConfig, out: Path, threads: int = 1):
    out.mkdir(parents=True, exist_ok=True)
    per_seed = _run_pool(coercivity_job, [(cfg, int(s)) for s in cfg.seeds], threads)
    rows = sorted((r for rs in per_seed for r in rs), key=lambda r: (r["T"], r["seed"]))
    write_csv(out / "coercivity.csv", ["T", "seed", "c_H", "kernel_dim"], rows,
              _comments(cfg, seeds=cfg.seeds))
    return rows


def coercivity_job(cfg: ExperimentConfig, seed: int):
    spec, phi, traj = _trajectory(cfg, seed)
    basis = cfg.build_basis()
    rows = []
    for T in sorted(int(t) for t in cfg.T_list):
        U, X = coercivity_matrices(basis, traj.prefix(T), spec)
        rep = coercivity_constant(U, X, basis=basis)
        rows.append({"T": T, "seed": seed, "c_H": rep.c_H, "kernel_dim": rep.kernel_dim})
    return rows


FIGURE_FIELDS = ["r", "phi", "phi_hat", "rho", "nu", "sq_err"]


def cmd_figures(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    """Per-T panel data for the first seed, plus the best-in-H projection."""
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.seeds[0])
    spec, phi, traj = _trajectory(cfg, seed, out)
    basis = cfg.build_basis()
    written = []
    for T in sorted(int(t) for t in cfg.T_list):
        sub = traj.prefix(T)
        res = learn(sub, spec, basis)
        rep = evaluate(sub, spec, phi, res, R=cfg.R, B=cfg.bins, resimulate=False)
        c = rep.centers
        ph, ph_hat = phi(c), res.phi_hat(c)
        rows = [{"r": c[b], "phi": ph[b], "phi_hat": ph_hat[b], "rho": rep.rho.density()[b],
                 "nu": rep.nu[b], "sq_err": (ph[b] - ph_hat[b]) ** 2} for b in range(len(c))]
        path = out / f"figure_T{T}_seed{seed}.csv"
        write_csv(path, FIGURE_FIELDS, rows, _comments(cfg, seed=seed, T=T))
        written.append(path)
    best = best_approximation(traj, spec, basis, phi)
    hist = trajectory_histogram(traj, spec, cfg.R, cfg.bins)
    c = hist.centers
    rows = [{"r": c[b], "phi": phi(c)[b], "phi_best": best.phi_hat(c)[b],
             "rho": hist.density()[b]} for b in range(len(c))]
    path = out / f"best_in_H_seed{seed}.csv"
    write_csv(path, ["r", "phi", "phi_best", "rho"], rows,
              _comments(cfg, seed=seed, T=traj.T))
    written.append(path)
    return written
