"""Config-driven experiment runner.

Configs are flat key = value files with [section] headers (configparser
syntax); every runner validates the (alpha, beta, theta) admissibility window
before touching the grid, writes its artifacts atomically (tempfile + rename)
and prints one PASS/FAIL/REPORT-ONLY line per check.  With a fixed seed the
artifacts are byte-identical regardless of thread count.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .besov import (BesovParams, GridFunction, TorusGrid, besov_norm,
                    build_rough_field, dyadic_block, holder_norm,
                    low_freq_cutoff, paraproduct, random_band_limited,
                    remainder, write_gridfunction)
from .density import (admissible_gamma_q, besov_profile, empirical_density,
                      l1_distance, stable_density_oracle)
from .fokker_planck import evolve, initial_bump
from .jump_sim import (StableJumpConfig, band_intensity, increment_moment_slope,
                       krylov_exponent, predictor_error_slope, sample_endpoints,
                       simulate_ensemble, theta0, triple_from_kernel_drift)
from .kernels import kernel_zoo
from .nonlocal_op import (apply_quadrature, apply_variable,
                          build_multiplier_table, freq_max_principle_probe)
from .resolvent import AdmissibilityError, estimate_lambda0, schauder_ratio, solve

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "run", "report", "main"]


class ConfigError(ValueError):
    """Malformed or incomplete experiment config."""


KINDS = ("lp-check", "operator-check", "resolvent", "simulate", "predictor",
         "krylov", "density", "fpe", "report")


@dataclass
class ExperimentConfig:
    kind: str
    out: str
    seed: int
    grid: TorusGrid
    kernel_name: str
    kernel_params: dict
    alpha: float
    beta: float | None
    theta: float
    drift_kind: str
    drift_level: float
    sim: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _get(cp, section, key, cast=str, default=None, path="<config>"):
    if not cp.has_section(section) or not cp.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"{path}: missing [{section}] {key}")
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes")
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"{path}: [{section}] {key} = {raw!r}: {e}") from None


def check_sde_admissible(alpha: float, beta: float | None, theta: float) -> None:
    """Admissibility of the drift regularity for SDE-type experiments."""
    if beta is None:
        return
    if alpha <= 1.0:
        if not (1.0 - alpha < beta < theta):
            raise AdmissibilityError(
                f"beta={beta:g} outside (1-alpha, theta) = ({1-alpha:g}, {theta:g}) "
                f"for alpha={alpha:g}: drift too rough for well-posedness")
    else:
        lo = -min((alpha - 1.0) / 2.0, theta)
        if not (lo < beta < theta):
            raise AdmissibilityError(
                f"beta={beta:g} <= -(alpha-1)/2 ^ theta = {lo:g} for "
                f"alpha={alpha:g}: drift too rough for well-posedness"
                if beta <= lo else
                f"beta={beta:g} >= theta={theta:g}: drift regularity must stay "
                "below the kernel's x-Holder exponent")


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"{path}: cannot read config")
    kind = _get(cp, "experiment", "kind", str, path=path)
    if kind not in KINDS:
        raise ConfigError(f"{path}: unknown experiment kind {kind!r}")
    out = _get(cp, "experiment", "out", str, path=path)
    seed = _get(cp, "experiment", "seed", int, default=0, path=path)
    if kind == "report":
        return ExperimentConfig(kind=kind, out=out, seed=seed, grid=None,
                                kernel_name="", kernel_params={}, alpha=0.0,
                                beta=None, theta=0.0, drift_kind="none",
                                drift_level=0.0)
    grid = TorusGrid(d=_get(cp, "grid", "d", int, default=1, path=path),
                     N=_get(cp, "grid", "N", int, path=path),
                     L=_get(cp, "grid", "L", float, path=path))
    kname = _get(cp, "kernel", "name", str, path=path)
    alpha = _get(cp, "kernel", "alpha", float, path=path)
    theta = _get(cp, "kernel", "theta", float, default=0.9, path=path)
    kparams = {"theta": theta}
    for opt in ("amp", "delta", "value", "scale"):
        if cp.has_option("kernel", opt):
            kparams[opt] = cp.getfloat("kernel", opt)
    if cp.has_option("kernel", "m"):
        kparams["m"] = cp.getint("kernel", "m")
    drift_kind = _get(cp, "drift", "kind", str, default="none", path=path)
    beta = cp.getfloat("drift", "beta") if cp.has_option("drift", "beta") else None
    drift_level = cp.getfloat("drift", "level") if cp.has_option("drift", "level") else 1.0
    sim = {}
    if cp.has_section("sim"):
        for key, cast in (("n_paths", int), ("T", float), ("dt", float),
                          ("eps_cut", float), ("R_cut", float)):
            if cp.has_option("sim", key):
                sim[key] = cast(cp.get("sim", key))
    extra = {}
    for sec in ("resolvent", "density", "fpe", "predictor", "krylov"):
        if cp.has_section(sec):
            extra[sec] = dict(cp.items(sec))

    cfg = ExperimentConfig(kind=kind, out=out, seed=seed, grid=grid,
                           kernel_name=kname, kernel_params=kparams, alpha=alpha,
                           beta=beta, theta=theta, drift_kind=drift_kind,
                           drift_level=drift_level, sim=sim, extra=extra)
    if kind in ("simulate", "predictor", "krylov", "density", "fpe"):
        check_sde_admissible(alpha, beta, theta)
    return cfg


# ---------------------------------------------------------------------------
# atomic artifact writers
# ---------------------------------------------------------------------------

def _atomic_bytes(path: str, payload: bytes) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    _atomic_bytes(path, buf.getvalue().encode())


def write_json(path: str, obj) -> None:
    _atomic_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode() + b"\n")


# ---------------------------------------------------------------------------
# experiment runners (each returns [(check, status, measured), ...])
# ---------------------------------------------------------------------------

def _make_kernel(cfg: ExperimentConfig):
    return kernel_zoo(cfg.kernel_name, cfg.alpha, cfg.grid.L, **cfg.kernel_params)


def _make_drift(cfg: ExperimentConfig):
    if cfg.drift_kind == "none":
        return None
    if cfg.drift_kind == "constant":
        return GridFunction(cfg.grid, np.full(cfg.grid.shape, cfg.drift_level))
    if cfg.drift_kind == "rough":
        if cfg.beta is None:
            raise ConfigError("rough drift needs [drift] beta")
        b = build_rough_field(cfg.grid, cfg.beta, seed=cfg.seed + 101)
        b = b * (cfg.drift_level / holder_norm(b, cfg.beta))
        if cfg.beta <= 0:
            b = low_freq_cutoff(b, cfg.grid.j_max - 1)
        return b
    raise ConfigError(f"unknown drift kind {cfg.drift_kind!r}")


def run_lp_check(cfg: ExperimentConfig):
    from .besov import _CUTOFFS
    grid = cfg.grid
    r = grid.freq_radii()
    tot = _CUTOFFS.chi(2 * r)
    for j in range(0, grid.j_max + 1):
        tot = tot + _CUTOFFS.phi(r / 2.0**j)
    part_err = float(np.max(np.abs(tot - _CUTOFFS.chi(r / 2.0**grid.j_max))))
    u = random_band_limited(grid, seed=cfg.seed)
    v = random_band_limited(grid, seed=cfg.seed + 1)
    bony = paraproduct(u, v).values + paraproduct(v, u).values + remainder(u, v).values
    bony_err = float(np.max(np.abs(bony - u.values * v.values)))
    orth = float(dyadic_block(dyadic_block(u, 2), 5).sup_norm())
    rows = [("partition-identity", part_err, 1e-12),
            ("bony-reconstruction", bony_err, 1e-10),
            ("block-orthogonality", orth, 1e-12)]
    write_csv(os.path.join(cfg.out, "lp_check.csv"),
              ["check", "measured", "bound"], rows)
    return [(name, "PASS" if m <= b else "FAIL", m) for (name, m, b) in rows]


def run_operator_check(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    grid = cfg.grid
    table = build_multiplier_table(grid, kernel.x_averaged(grid))
    table.to_csv(os.path.join(cfg.out, "multiplier.csv"))
    expo = table.fitted_exponent(4.0, min(400.0, grid.nyquist / 4))
    u = random_band_limited(grid, j_hi=min(5, grid.j_max), seed=cfg.seed)
    Lu = apply_variable(kernel, u)
    errs = []
    for i in np.linspace(0, grid.N - 1, 9).astype(int):
        q = apply_quadrature(kernel, u, grid.axis_points()[i])
        errs.append(abs(q.value - Lu.values[i]))
    rel = max(errs) / max(Lu.sup_norm(), 1e-300)
    rows = [("exponent-fit", expo, cfg.alpha),
            ("quad-vs-multiplier-rel", rel, 1e-3)]
    write_csv(os.path.join(cfg.out, "operator_check.csv"),
              ["check", "measured", "reference"], rows)
    status = [("exponent-fit", "PASS" if abs(expo - cfg.alpha) < 0.02 else "FAIL", expo),
              ("quad-vs-multiplier", "PASS" if rel <= 1e-3 else "FAIL", rel)]
    probe = freq_max_principle_probe(kernel, grid, R=min(16, 2.0**(grid.j_max - 1)),
                                     trials=20, seed=cfg.seed)
    status.append(("max-principle-chat", "PASS" if probe.c_hat > 0 else "FAIL",
                   probe.c_hat))
    return status


def run_resolvent(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    beta = cfg.beta if cfg.beta is not None else 0.0
    b = _make_drift(cfg)
    if b is None:
        b = GridFunction(cfg.grid, np.zeros(cfg.grid.shape))
    f = random_band_limited(cfg.grid, j_hi=min(4, cfg.grid.j_max), seed=cfg.seed + 7)
    opts = cfg.extra.get("resolvent", {})
    tol = float(opts.get("tol", 1e-9))
    lam0 = estimate_lambda0(kernel, b, beta, cfg.grid)
    lam = float(opts.get("lam", 4.0 * lam0))
    sol = solve(lam, kernel, b, f, beta, tol=tol)
    r = schauder_ratio(sol, f, beta, cfg.alpha, lam, lam0)
    write_gridfunction(os.path.join(cfg.out, "solution.gfn"), sol.u)
    write_json(os.path.join(cfg.out, "solution.json"),
               {"lam": lam, "residual": sol.residual, "iterations": sol.iterations,
                "lambda0_est": lam0, "r1": r[0] if r else None,
                "r2": r[1] if r else None})
    return [("resolvent-residual", "PASS" if sol.residual <= tol else "FAIL",
             sol.residual),
            ("lambda0-est", "REPORT-ONLY", lam0)]


def _sim_config(cfg: ExperimentConfig) -> StableJumpConfig:
    sim = cfg.sim
    return StableJumpConfig(alpha=cfg.alpha,
                            eps_cut=sim.get("eps_cut", 0.02),
                            R_cut=sim.get("R_cut", cfg.grid.L / 4.0),
                            lambda2=_make_kernel(cfg).lambda2)


def run_simulate(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    b = _make_drift(cfg)
    jcfg = _sim_config(cfg)
    sim = cfg.sim
    triple = triple_from_kernel_drift(kernel, b, cfg.grid)
    ens = simulate_ensemble(0.0, triple, jcfg, sim.get("T", 1.0),
                            sim.get("dt", 0.01), cfg.seed,
                            sim.get("n_paths", 10000), label=cfg.kernel_name)
    os.makedirs(cfg.out, exist_ok=True)
    ens.save(os.path.join(cfg.out, "ensemble"))
    lags = [sim.get("dt", 0.01) * 2**j for j in range(5)]
    p = 0.5 if cfg.alpha <= 1.0 else 1.0
    slope, mom = increment_moment_slope(ens, p, lags)
    write_csv(os.path.join(cfg.out, "moments.csv"), ["lag", "moment"],
              list(zip(lags, mom)))
    return [("ensemble", "REPORT-ONLY", float(ens.n_paths)),
            ("moment-slope", "REPORT-ONLY", slope)]


def run_predictor(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    b = _make_drift(cfg)
    jcfg = _sim_config(cfg)
    sim = cfg.sim
    T, dt = sim.get("T", 1.0), sim.get("dt", 1.0 / 256)
    triple = triple_from_kernel_drift(kernel, b, cfg.grid)
    eps_list = [2.0**-k for k in range(3, 9)]
    ens = simulate_ensemble(0.0, triple, jcfg, T, dt, cfg.seed,
                            sim.get("n_paths", 10000),
                            record_jumps_from=T - max(eps_list) - 1e-9)
    th1 = float(cfg.extra.get("predictor", {}).get("th1", 1.0))
    p = 0.5 if cfg.alpha <= 1.0 else 1.0
    slope, mom = predictor_error_slope(ens, triple, jcfg, p, eps_list,
                                       th1=th1 if cfg.alpha < 1 else None)
    write_csv(os.path.join(cfg.out, "predictor.csv"), ["eps", "moment"],
              list(zip(eps_list, mom)))
    return [("predictor-slope", "REPORT-ONLY", slope)]


def run_krylov(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    b = _make_drift(cfg)
    jcfg = _sim_config(cfg)
    sim = cfg.sim
    triple = triple_from_kernel_drift(kernel, b, cfg.grid)
    ens = simulate_ensemble(0.0, triple, jcfg, sim.get("T", 1.0),
                            sim.get("dt", 0.005), cfg.seed,
                            sim.get("n_paths", 10000))
    mu = float(cfg.extra.get("krylov", {}).get("mu", -0.2))
    f = build_rough_field(cfg.grid, mu, seed=cfg.seed + 3)
    f = f * (1.0 / holder_norm(f, mu))
    windows = [sim.get("dt", 0.005) * 4 * 2**j for j in range(6)]
    slope, mom = krylov_exponent(ens, f, windows)
    write_csv(os.path.join(cfg.out, "krylov.csv"), ["window", "second_moment"],
              list(zip(windows, mom)))
    return [("krylov-slope", "PASS" if slope >= 1.1 else "FAIL", slope)]


def run_density(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    jcfg = _sim_config(cfg)
    sim = cfg.sim
    opts = cfg.extra.get("density", {})
    gamma = float(opts.get("gamma", 0.3))
    q = float(opts.get("q", 1.0))
    t = float(opts.get("t", sim.get("T", 1.0)))
    beta_eff = cfg.beta if cfg.beta is not None else 0.0
    try:
        region = admissible_gamma_q(cfg.alpha, beta_eff, cfg.theta, cfg.grid.d)
        region_info = {"gamma_max": region.gamma_max,
                       "q_max_samples": {f"{g:.2f}": region.q_max(g)
                                         for g in np.linspace(region.gamma_max / 4,
                                                              region.gamma_max * 0.9, 4)}}
        inside = region.contains(gamma, q)
    except Exception as e:  # EmptyRegion
        region_info = {"gamma_max": 0.0, "error": str(e)}
        inside = False
    b = _make_drift(cfg)
    if b is None and kernel.x_independent:
        samples = sample_endpoints(0.0, jcfg, t, cfg.seed, sim.get("n_paths", 100000))
    else:
        triple = triple_from_kernel_drift(kernel, b, cfg.grid)
        ens = simulate_ensemble(0.0, triple, jcfg, t, sim.get("dt", 0.01),
                                cfg.seed, sim.get("n_paths", 100000))
        samples = ens.states[:, -1]
    est = empirical_density(samples, cfg.grid)
    prof = besov_profile(est, gamma, q)
    write_csv(os.path.join(cfg.out, "profile.csv"),
              ["j", "block_norm", "weighted"], prof)
    write_json(os.path.join(cfg.out, "region.json"), region_info)
    out = [("besov-profile-sup", "REPORT-ONLY", max(w for (_, _, w) in prof)),
           ("gamma-q-inside-region", "REPORT-ONLY", float(inside))]
    if kernel.x_independent and b is None:
        oracle = stable_density_oracle(cfg.alpha, t, cfg.grid, boundary_tol=1e-2)
        out.append(("l1-vs-oracle", "REPORT-ONLY", l1_distance(est, oracle)))
    return out


def run_fpe(cfg: ExperimentConfig):
    kernel = _make_kernel(cfg)
    b = _make_drift(cfg)
    opts = cfg.extra.get("fpe", {})
    T = float(opts.get("t", 1.0))
    dt = float(opts.get("dt", 0.005))
    snaps = [float(s) for s in opts.get("snapshots", "").split(",") if s.strip()] \
        if opts.get("snapshots") else []
    final, snapshots = evolve(0.0, kernel, b, T, dt, cfg.grid,
                              snapshot_times=snaps)
    rows = [(final.t, final.rho.lp_norm(1.0), float(np.min(final.rho.values)),
             final.mass_drift)]
    for ts, st in sorted(snapshots.items()):
        write_gridfunction(os.path.join(cfg.out, f"rho_t{ts:g}.gfn"), st.rho)
        rows.append((st.t, st.rho.lp_norm(1.0), float(np.min(st.rho.values)),
                     st.mass_drift))
    write_csv(os.path.join(cfg.out, "fpe_summary.csv"),
              ["t", "mass", "min", "mass_drift"], sorted(rows))
    write_gridfunction(os.path.join(cfg.out, "rho_final.gfn"), final.rho)
    ok = final.mass_drift <= 1e-10 and final.clipped_mass <= 0.01
    return [("fpe-mass-conservation", "PASS" if ok else "FAIL", final.mass_drift)]


RUNNERS = {
    "lp-check": run_lp_check,
    "operator-check": run_operator_check,
    "resolvent": run_resolvent,
    "simulate": run_simulate,
    "predictor": run_predictor,
    "krylov": run_krylov,
    "density": run_density,
    "fpe": run_fpe,
}


def run(config_path: str, seed: int | None = None, out: str | None = None,
        quiet: bool = False) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    if cfg.kind == "report":
        report(cfg.out)
        if not quiet:
            print(f"report {cfg.out}: REPORT-ONLY")
        return 0
    os.makedirs(cfg.out, exist_ok=True)
    results = RUNNERS[cfg.kind](cfg)
    failed = False
    for (name, status, measured) in results:
        failed = failed or status == "FAIL"
        if not quiet:
            print(f"{cfg.kind} {name}: {status} ({measured:.6g})")
    return 1 if failed else 0


def report(results_dir: str) -> dict:
    """Merge the CSVs under results_dir into plot-ready files and an index."""
    index = {"experiments": [], "csv_files": []}
    for root, _, files in sorted(os.walk(results_dir)):
        for fn in sorted(files):
            if fn.endswith(".csv") and fn != "merged.csv":
                rel = os.path.relpath(os.path.join(root, fn), results_dir)
                index["csv_files"].append(rel)
            if fn.endswith(".json") and fn != "index.json":
                rel = os.path.relpath(os.path.join(root, fn), results_dir)
                index["experiments"].append(rel)
    # plot-ready: concatenate CSVs with a source column
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["source", "row"])
    for rel in index["csv_files"]:
        with open(os.path.join(results_dir, rel)) as fh:
            for line in fh.read().splitlines():
                w.writerow([rel, line])
    _atomic_bytes(os.path.join(results_dir, "merged.csv"), buf.getvalue().encode())
    write_json(os.path.join(results_dir, "index.json"), index)
    return index


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stablelab",
                                 description="stable-like operator laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        if kind == "report":
            p.add_argument("--out", required=True, help="results directory")
        else:
            p.add_argument("--config", required=True)
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--out", default=None)
        p.add_argument("--quiet", action="store_true")
    ns = ap.parse_args(argv)
    try:
        if ns.cmd == "report":
            report(ns.out)
            if not ns.quiet:
                print(f"report {ns.out}: REPORT-ONLY")
            return 0
        cfg = load_config(ns.config)
        if cfg.kind != ns.cmd:
            raise ConfigError(
                f"config kind {cfg.kind!r} does not match subcommand {ns.cmd!r}")
        return run(ns.config, seed=ns.seed, out=ns.out, quiet=ns.quiet)
    except (ConfigError, AdmissibilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
