"""Thinning simulation of jump SDEs driven by a dominating Poisson measure.

The dominating measure has intensity Lambda2 |z|^{-d-alpha} dz restricted to
the band eps_cut <= |z| <= R_cut; a jump drawn from it is accepted with
probability k(Y-, z)/Lambda2, which reproduces the state-dependent intensity
exactly in law.  Depending on alpha the band is uncompensated (alpha < 1),
compensated only through the ring symmetry of the kernel (alpha = 1), or
compensated by an explicit per-step drift (alpha > 1).

Randomness is counter-based (Philox streams keyed by master seed, a fixed
4096-path chunk index and a substream tag), so ensembles are reproducible
for any thread count and coupled runs (mollification levels, predictor
windows) consume identical dominating-measure realizations.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .besov import GridFunction, TorusGrid
from .kernels import Kernel
from .quadrature import radial_power_integral

__all__ = [
    "StableJumpConfig",
    "BadBand",
    "CoefficientTriple",
    "Path",
    "PathEnsemble",
    "sample_dominating_jump",
    "band_intensity",
    "simulate_path",
    "simulate_ensemble",
    "triple_from_kernel_drift",
    "triple_from_zvonkin",
    "euler_predictor",
    "predictor_error_slope",
    "theta0",
    "increment_moment_slope",
    "krylov_exponent",
    "drift_functional_convergence",
    "stream",
    "CHUNK",
]

CHUNK = 4096  # fixed path-chunk size; part of the reproducibility contract

_TAGS = {"clock": 0, "radius": 1, "direction": 2, "accept": 3, "extra": 4,
         "scratch": 5}


class BadBand(ValueError):
    """Jump band is empty (eps_cut >= R_cut)."""


def stream(master_seed: int, chunk_id: int, tag: str) -> np.random.Generator:
    """Philox stream for (master seed, path chunk, substream tag)."""
    key = np.array([np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64((chunk_id << 8) | _TAGS[tag])], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def default_mode(alpha: float) -> str:
    if alpha < 1.0:
        return "none"
    if alpha == 1.0:
        return "ring-symmetric"
    return "full"


@dataclass(frozen=True)
class StableJumpConfig:
    """Simulation regime: stability index, jump band and compensation branch."""

    alpha: float
    eps_cut: float
    R_cut: float
    mode: str | None = None
    lambda2: float = 1.0

    def __post_init__(self):
        if not self.eps_cut < self.R_cut:
            raise BadBand(f"eps_cut={self.eps_cut} >= R_cut={self.R_cut}")
        if not self.eps_cut > 0:
            raise BadBand("eps_cut must be positive")
        mode = self.mode if self.mode is not None else default_mode(self.alpha)
        if mode != default_mode(self.alpha):
            raise ValueError(
                f"compensation mode {mode!r} inconsistent with alpha={self.alpha}"
                f" (expected {default_mode(self.alpha)!r})")
        object.__setattr__(self, "mode", mode)


def band_intensity(cfg: StableJumpConfig, d: int = 1) -> float:
    """Total dominating rate Lambda2 * nu(eps <= |z| <= R)."""
    surface = 2.0 if d == 1 else 2.0 * np.pi
    return cfg.lambda2 * surface * (cfg.eps_cut**-cfg.alpha
                                    - cfg.R_cut**-cfg.alpha) / cfg.alpha


def _radius_from_uniform(u, alpha, eps, R):
    return (eps**-alpha - u * (eps**-alpha - R**-alpha)) ** (-1.0 / alpha)


def sample_dominating_jump(rng: np.random.Generator, alpha: float, eps: float,
                           R: float, d: int = 1):
    """One jump from the dominating measure: inverse-CDF radius, uniform direction."""
    if not eps < R:
        raise BadBand(f"eps={eps} >= R={R}")
    r = _radius_from_uniform(rng.random(), alpha, eps, R)
    if d == 1:
        return r if rng.random() < 0.5 else -r
    th = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([r * np.cos(th), r * np.sin(th)])


# ---------------------------------------------------------------------------
# coefficient triples
# ---------------------------------------------------------------------------

@dataclass
class CoefficientTriple:
    """Vectorized coefficients of the jump SDE: drift a, jump map g, kernel k.

    a(y) -> array; g(y, z) and k(y, z) broadcast over paired arrays; comp(y)
    is the band compensator drift int g(y,z) k(y,z) nu(dz) (used for
    mode="full"), tabulated lazily when omitted.  L is the period of the
    coefficient fields (state evaluations wrap mod L; the state itself is
    unwrapped).
    """

    a: callable
    g: callable
    k: callable
    lambda2: float
    L: float
    comp: callable | None = None
    label: str = ""
    # flat kernels (k == lambda2 everywhere, g == z) accept every dominating
    # jump, so window sums can skip the sequential thinning rounds
    always_accept: bool = False

    def compensator(self, cfg: StableJumpConfig, n_grid: int = 512) -> callable:
        """Drift of the compensated measure over (0, R_cut]: the active band
        plus the dropped small-jump band, so the discarded part is mean-zero."""
        if cfg.mode != "full":
            return lambda y: np.zeros_like(np.asarray(y, dtype=np.float64))
        if self.comp is not None:
            return self.comp
        ys = np.arange(n_grid) * (self.L / n_grid)
        vals = np.empty(n_grid)
        for i, y in enumerate(ys):
            def fn(r, y=y):
                out = self.g(y, r) * self.k(y, r) + self.g(y, -r) * self.k(y, -r)
                return np.asarray(out, dtype=np.float64)
            v, _ = radial_power_integral(fn, cfg.alpha, 0.0,
                                         cfg.eps_cut * 1e-9, cfg.R_cut)
            vals[i] = v
        table = vals

        def comp(y):
            ym = np.mod(np.asarray(y, dtype=np.float64), self.L)
            idx = ym / (self.L / n_grid)
            i0 = np.floor(idx).astype(int) % n_grid
            i1 = (i0 + 1) % n_grid
            w = idx - np.floor(idx)
            return (1.0 - w) * table[i0] + w * table[i1]

        self.comp = comp
        return comp


def _periodic_interp(values: np.ndarray, L: float):
    n = len(values)

    def fn(y):
        ym = np.mod(np.asarray(y, dtype=np.float64), L)
        idx = ym / (L / n)
        i0 = np.floor(idx).astype(int) % n
        i1 = (i0 + 1) % n
        w = idx - np.floor(idx)
        return (1.0 - w) * values[i0] + w * values[i1]

    return fn


def triple_from_kernel_drift(kernel: Kernel, b: GridFunction | None,
                             grid: TorusGrid) -> CoefficientTriple:
    """The raw SDE: drift field b (grid function or None), jumps z themselves."""
    if b is not None:
        a = _periodic_interp(b.values, grid.L)
    else:
        a = lambda y: np.zeros_like(np.asarray(y, dtype=np.float64))

    def k(y, z):
        return kernel.eval(np.mod(np.asarray(y, dtype=np.float64), grid.L), z)

    # probe for a flat kernel: k identically equal to the dominating level
    xs = np.linspace(0.0, grid.L, 17)
    zp = np.linspace(-grid.L / 3, grid.L / 3, 33)
    zp = zp[zp != 0]
    flat = bool(np.all(np.asarray(kernel.eval(xs[:, None], zp[None, :]),
                                  dtype=np.float64) == kernel.lambda2))
    return CoefficientTriple(a=a, g=lambda y, z: z, k=k, lambda2=kernel.lambda2,
                             L=grid.L, label=f"kernel={kernel.name}",
                             always_accept=flat)


def triple_from_zvonkin(zv) -> CoefficientTriple:
    """Transformed coefficients (a, g, k) of a drift-removing map."""
    return CoefficientTriple(
        a=lambda y: zv.a(y),
        g=lambda y, z: zv.g(y, z),
        k=lambda y, z: np.asarray(zv.k(y, z), dtype=np.float64),
        lambda2=zv.kernel.lambda2, L=zv.grid.L, label="zvonkin")


# ---------------------------------------------------------------------------
# paths and ensembles
# ---------------------------------------------------------------------------

@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    drift_functional: np.ndarray
    seed: int
    index: int
    jump_times: np.ndarray | None = None
    jump_sizes: np.ndarray | None = None
    jump_accepted: np.ndarray | None = None
    wraps: int = 0


@dataclass
class PathEnsemble:
    times: np.ndarray                  # (n_t,)
    states: np.ndarray                 # (n_paths, n_t), unwrapped reals
    drift_functional: np.ndarray       # (n_paths, n_t)
    master_seed: int
    config: StableJumpConfig
    label: str = ""
    wrap_count: int = 0
    jump_log: dict | None = None       # packed per-path jump records

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def path(self, i: int) -> Path:
        jl = self.jump_log
        if jl is not None:
            sel = jl["path"] == i
            jt, jz, ja = jl["time"][sel], jl["z"][sel], jl["accepted"][sel]
        else:
            jt = jz = ja = None
        return Path(times=self.times, states=self.states[i],
                    drift_functional=self.drift_functional[i],
                    seed=self.master_seed, index=i,
                    jump_times=jt, jump_sizes=jz, jump_accepted=ja)

    def save(self, path_prefix: str) -> None:
        """Binary state block ('ENS1' header) plus a JSON manifest."""
        header = b"ENS1" + struct.pack("<4sIIId", b"\x00" * 4, 1,
                                       self.states.shape[0], self.states.shape[1],
                                       self.config.alpha)
        with open(path_prefix + ".ens", "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
        manifest = {
            "seed": int(self.master_seed),
            "label": self.label,
            "alpha": self.config.alpha,
            "eps_cut": self.config.eps_cut,
            "R_cut": self.config.R_cut,
            "mode": self.config.mode,
            "lambda2": self.config.lambda2,
            "n_paths": int(self.states.shape[0]),
            "n_times": int(self.states.shape[1]),
            "wrap_count": int(self.wrap_count),
        }
        with open(path_prefix + ".json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# the engine
# ---------------------------------------------------------------------------

def _jump_budget(lam_band: float, T: float) -> int:
    mean = lam_band * T
    return int(np.ceil(mean + 10.0 * np.sqrt(mean) + 20.0))


def _simulate_chunk(x0, triple: CoefficientTriple, cfg: StableJumpConfig,
                    T: float, dt: float, master_seed: int, chunk_id: int,
                    n_paths: int, record_jumps_from: float | None):
    """Simulate one fixed chunk of paths; returns (states, A, jump records, wraps)."""
    alpha = cfg.alpha
    lam_band = band_intensity(cfg)
    M = _jump_budget(lam_band, T)

    E = stream(master_seed, chunk_id, "clock").standard_exponential((n_paths, M))
    jt = np.cumsum(E, axis=1) / lam_band
    u_rad = stream(master_seed, chunk_id, "radius").random((n_paths, M))
    u_dir = stream(master_seed, chunk_id, "direction").random((n_paths, M))
    u_acc = stream(master_seed, chunk_id, "accept").random((n_paths, M))
    radii = _radius_from_uniform(u_rad, alpha, cfg.eps_cut, cfg.R_cut)
    zs = np.where(u_dir < 0.5, -radii, radii)

    # exhausted budgets (probability ~ 1e-15 per path) are redrawn wholesale
    # from a per-path "extra" stream; the shared clock stream makes coupled
    # runs exhaust identically, so coupling survives.
    exhausted = np.nonzero(jt[:, -1] < T)[0]
    extra = {}
    for i in exhausted:
        rng = np.random.Generator(np.random.Philox(
            key=np.array([np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
                          np.uint64((chunk_id << 24) | (int(i) << 4) | _TAGS["extra"])],
                         dtype=np.uint64)))
        M2 = 2 * M
        while True:
            e = rng.standard_exponential(M2)
            t2 = np.cumsum(e) / lam_band
            if t2[-1] >= T:
                break
            M2 *= 2
        r2 = _radius_from_uniform(rng.random(M2), alpha, cfg.eps_cut, cfg.R_cut)
        z2 = np.where(rng.random(M2) < 0.5, -r2, r2)
        extra[int(i)] = (t2, z2, rng.random(M2))
    if extra:
        M_new = max(M, max(len(v[0]) for v in extra.values()))
        jt = _pad_cols(jt, M_new, np.inf)
        zs = _pad_cols(zs, M_new, 0.0)
        u_acc = _pad_cols(u_acc, M_new, 0.0)
        for i, (t2, z2, u2) in extra.items():
            jt[i, :] = np.inf
            jt[i, :len(t2)] = t2
            zs[i, :len(z2)] = z2
            u_acc[i, :len(u2)] = u2
        M = M_new

    # pad with +inf times so pointer gathers are safe
    jt = np.concatenate([jt, np.full((n_paths, 1), np.inf)], axis=1)
    zs = np.concatenate([zs, np.zeros((n_paths, 1))], axis=1)
    u_acc = np.concatenate([u_acc, np.zeros((n_paths, 1))], axis=1)

    n_t = int(round(T / dt)) + 1
    times = np.arange(n_t) * dt
    states = np.empty((n_paths, n_t))
    Afun = np.zeros((n_paths, n_t))
    X = np.full(n_paths, float(x0)) if np.isscalar(x0) else np.array(x0, dtype=np.float64)
    states[:, 0] = X
    A = np.zeros(n_paths)
    comp = triple.compensator(cfg)
    lam2 = triple.lambda2

    rec = {"path": [], "time": [], "z": [], "u": [], "accepted": []} \
        if record_jumps_from is not None else None

    if triple.always_accept and rec is None:
        # window-summed jumps: every dominating jump lands, in time order
        n_w = n_t - 1
        w_idx = np.minimum((jt[:, :-1] / dt).astype(np.int64), n_w)
        live = jt[:, :-1] < T
        J_all = np.zeros((n_paths, n_w + 1))
        rows2 = np.broadcast_to(np.arange(n_paths)[:, None], w_idx.shape)
        np.add.at(J_all, (rows2[live], w_idx[live]), zs[:, :-1][live])
        for w in range(n_w):
            a_w = np.asarray(triple.a(X), dtype=np.float64)
            slope = a_w - comp(X)
            X = X + dt * slope + J_all[:, w]
            A = A + dt * a_w
            states[:, w + 1] = X
            Afun[:, w + 1] = A
    else:
        ptr = np.zeros(n_paths, dtype=np.int64)
        rows = np.arange(n_paths)
        for w in range(n_t - 1):
            t_w = times[w]
            t_end = times[w + 1]
            a_w = np.asarray(triple.a(X), dtype=np.float64)
            slope = a_w - comp(X)
            J = np.zeros(n_paths)
            while True:
                t_next = jt[rows, ptr]
                active = t_next < t_end
                if not np.any(active):
                    break
                ia = np.nonzero(active)[0]
                tau = t_next[ia]
                z = zs[ia, ptr[ia]]
                u = u_acc[ia, ptr[ia]]
                X_pre = X[ia] + (tau - t_w) * slope[ia] + J[ia]
                kv = np.asarray(triple.k(X_pre, z), dtype=np.float64)
                acc = u * lam2 < kv
                giv = np.asarray(triple.g(X_pre, z), dtype=np.float64)
                J[ia] += np.where(acc, giv, 0.0)
                if rec is not None:
                    keep = tau >= record_jumps_from
                    rec["path"].append(ia[keep])
                    rec["time"].append(tau[keep])
                    rec["z"].append(z[keep])
                    rec["u"].append(u[keep])
                    rec["accepted"].append(acc[keep])
                ptr[ia] += 1
            X = X + dt * slope + J
            A = A + dt * a_w
            states[:, w + 1] = X
            Afun[:, w + 1] = A

    wraps = int(np.sum(np.max(np.abs(states - states[:, :1]), axis=1) > triple.L / 2.0))
    if rec is not None:
        rec = {k: (np.concatenate(v) if v else np.empty(0, dtype=float))
               for k, v in rec.items()}
    return states, Afun, rec, wraps


def _pad_cols(arr, M_new, fill):
    if M_new <= arr.shape[1]:
        return arr
    pad = np.full((arr.shape[0], M_new - arr.shape[1]), fill)
    return np.concatenate([arr, pad], axis=1)


def _n_threads() -> int:
    env = os.environ.get("STABLELAB_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def sample_endpoints(x0: float, cfg: StableJumpConfig, T: float,
                     master_seed: int, n_paths: int,
                     stream_parity: bool = False) -> np.ndarray:
    """Endpoint marginal of the driftless flat-kernel SDE (pure jump sums).

    With acceptance identically one and an even kernel the compensator drift
    vanishes and X_T = x0 + sum of all dominating jumps before T; no window
    bookkeeping is needed.  stream_parity=True additionally consumes the
    acceptance stream so results bit-match the full engine's trajectories.
    """
    lam_band = band_intensity(cfg)
    M = _jump_budget(lam_band, T)
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    out = np.empty(n_paths)

    def run(c):
        n = min(CHUNK, n_paths - c * CHUNK)
        E = stream(master_seed, c, "clock").standard_exponential((n, M))
        jt = np.cumsum(E, axis=1) / lam_band
        u_rad = stream(master_seed, c, "radius").random((n, M))
        u_dir = stream(master_seed, c, "direction").random((n, M))
        if stream_parity:
            stream(master_seed, c, "accept").random((n, M))
        radii = _radius_from_uniform(u_rad, cfg.alpha, cfg.eps_cut, cfg.R_cut)
        zs = np.where(u_dir < 0.5, -radii, radii)
        if np.any(jt[:, -1] < T):
            raise RuntimeError("jump budget exhausted; use simulate_ensemble")
        return c, x0 + np.sum(np.where(jt < T, zs, 0.0), axis=1)

    workers = _n_threads()
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for c, vals in ex.map(run, range(n_chunks)):
                out[c * CHUNK: c * CHUNK + len(vals)] = vals
    else:
        for c in range(n_chunks):
            _, vals = run(c)
            out[c * CHUNK: c * CHUNK + len(vals)] = vals
    return out


def simulate_ensemble(x0, triple: CoefficientTriple, cfg: StableJumpConfig,
                      T: float, dt: float, master_seed: int, n_paths: int,
                      record_jumps_from: float | None = None,
                      label: str = "") -> PathEnsemble:
    """Chunked, thread-parallel, reproducible ensemble of thinning paths.

    Results are byte-identical for any thread count: path i's randomness is a
    pure function of (master_seed, i // CHUNK, i % CHUNK) and reductions keep
    chunk order.
    """
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    sizes = [min(CHUNK, n_paths - c * CHUNK) for c in range(n_chunks)]

    def run(c):
        return _simulate_chunk(x0, triple, cfg, T, dt, master_seed, c,
                               sizes[c], record_jumps_from)

    results = [None] * n_chunks
    workers = _n_threads()
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for c, out in zip(range(n_chunks), ex.map(run, range(n_chunks))):
                results[c] = out
    else:
        for c in range(n_chunks):
            results[c] = run(c)

    states = np.concatenate([r[0] for r in results], axis=0)
    Afun = np.concatenate([r[1] for r in results], axis=0)
    wraps = sum(r[3] for r in results)
    jump_log = None
    if record_jumps_from is not None:
        offs = np.cumsum([0] + sizes[:-1])
        parts = {k: [] for k in ("path", "time", "z", "u", "accepted")}
        for off, r in zip(offs, results):
            rec = r[2]
            for k in parts:
                parts[k].append(rec[k] + (off if k == "path" else 0))
        jump_log = {k: np.concatenate(v) for k, v in parts.items()}

    n_t = states.shape[1]
    return PathEnsemble(times=np.arange(n_t) * dt, states=states,
                        drift_functional=Afun, master_seed=master_seed,
                        config=cfg, label=label, wrap_count=wraps,
                        jump_log=jump_log)


def simulate_path(x0, kernel: Kernel, b: GridFunction | None, cfg: StableJumpConfig,
                  T: float, dt: float, seed: int, grid: TorusGrid | None = None,
                  record_jumps: bool = True) -> Path:
    """Single path of the raw SDE (thin wrapper over the chunked engine)."""
    if grid is None:
        if b is None:
            raise ValueError("pass a grid when b is None")
        grid = b.grid
    triple = triple_from_kernel_drift(kernel, b, grid)
    ens = simulate_ensemble(x0, triple, cfg, T, dt, seed, 1,
                            record_jumps_from=0.0 if record_jumps else None)
    return ens.path(0)


# ---------------------------------------------------------------------------
# one-step predictor and its rate
# ---------------------------------------------------------------------------

def theta0(alpha: float, th1: float, th2: float, th3: float) -> float:
    """Predictor rate exponent from the coefficient Holder exponents."""
    if alpha >= 1.0:
        return (min(alpha + th1, 1.0 + th2, 1.0 + th3 / alpha)) / alpha
    return min(1.0 / (1.0 - th1),
               (min(alpha + th1, 1.0 + th2, 1.0 + th3)) / alpha)


def euler_predictor(y_start, eps: float, triple: CoefficientTriple,
                    cfg: StableJumpConfig, jump_times, jump_z, jump_u,
                    t_end: float, th1: float | None = None):
    """Frozen-coefficient one-step prediction over the window (t_end-eps, t_end].

    Returns (V, Y_pred) where V is the drift part (measurable at the window
    start) and Y_pred adds the frozen-coefficient thinned jump integral built
    from the SAME dominating draws as the true path.  For alpha < 1 the drift
    part sub-steps the frozen flow at resolution eps^{1/(1-th1)}.
    """
    if eps <= 0:
        raise ValueError("predictor window must have positive width")
    y_start = np.asarray(y_start, dtype=np.float64)
    if cfg.alpha >= 1.0:
        V = y_start + eps * np.asarray(triple.a(y_start), dtype=np.float64)
    else:
        if th1 is None:
            raise ValueError("alpha < 1 predictor needs the drift exponent th1")
        delta = eps ** (1.0 / (1.0 - th1))
        n_sub = max(1, int(np.ceil(eps / delta)))
        delta = eps / n_sub
        V = y_start.copy()
        V_grid = y_start.copy()
        for s in range(n_sub):
            V = V + delta * np.asarray(triple.a(V_grid), dtype=np.float64)
            V_grid = V
    comp = triple.compensator(cfg)
    drift_comp = eps * comp(y_start)
    t_lo = t_end - eps
    sel = (jump_times > t_lo) & (jump_times <= t_end)
    J = np.zeros_like(y_start)
    idx = np.nonzero(sel)[0]
    for j in idx:
        z = jump_z[j]
        kv = float(np.asarray(triple.k(y_start, z), dtype=np.float64))
        if jump_u[j] * cfg.lambda2 < kv:
            J = J + float(np.asarray(triple.g(y_start, z), dtype=np.float64))
    return V, V + J - drift_comp


def _predictor_gap_vector(ens: PathEnsemble, triple: CoefficientTriple,
                          cfg: StableJumpConfig, eps: float,
                          th1: float | None = None):
    """Vectorized |Y_T - Y_T^eps| over all paths of a jump-recorded ensemble."""
    T = float(ens.times[-1])
    t_lo = T - eps
    i_lo = int(round(t_lo / (ens.times[1] - ens.times[0])))
    if abs(ens.times[i_lo] - t_lo) > 1e-9:
        raise ValueError("eps must be a multiple of dt for the coupled window")
    y0 = ens.states[:, i_lo]
    if cfg.alpha >= 1.0:
        V = y0 + eps * np.asarray(triple.a(y0), dtype=np.float64)
    else:
        if th1 is None:
            raise ValueError("alpha < 1 predictor needs th1")
        delta = eps ** (1.0 / (1.0 - th1))
        n_sub = max(1, int(np.ceil(eps / delta)))
        delta = eps / n_sub
        V = y0.copy()
        for s in range(n_sub):
            V = V + delta * np.asarray(triple.a(V), dtype=np.float64)
    comp = triple.compensator(cfg)
    Y_pred = V - eps * comp(y0)
    jl = ens.jump_log
    sel = (jl["time"] > t_lo + 1e-15) & (jl["time"] <= T + 1e-15)
    pidx = jl["path"][sel].astype(int)
    z = jl["z"][sel]
    # frozen coefficients at the window-start state of the owning path
    y_own = y0[pidx]
    kv = np.asarray(triple.k(y_own, z), dtype=np.float64)
    # replay the SAME acceptance uniforms
    u = jl["u"][sel]
    acc = u * cfg.lambda2 < kv
    gv = np.asarray(triple.g(y_own, z), dtype=np.float64)
    np.add.at(Y_pred, pidx[acc], gv[acc])
    return np.abs(ens.states[:, -1] - Y_pred)


def predictor_error_slope(ens: PathEnsemble, triple: CoefficientTriple,
                          cfg: StableJumpConfig, p: float, eps_list,
                          th1: float | None = None):
    """LSQ slope of log E|Y_T - Y_T^eps|^p against log eps (coupled windows)."""
    mom = []
    for eps in eps_list:
        gap = _predictor_gap_vector(ens, triple, cfg, eps, th1=th1)
        mom.append(float(np.mean(gap**p)))
    x = np.log(np.asarray(eps_list, dtype=np.float64))
    y = np.log(np.maximum(mom, 1e-300))
    A = np.stack([x, np.ones_like(x)], axis=1)
    slope = float(np.linalg.lstsq(A, y, rcond=None)[0][0])
    return slope, mom


# ---------------------------------------------------------------------------
# path statistics
# ---------------------------------------------------------------------------

def increment_moment_slope(ens: PathEnsemble, p: float, lags, capped: bool = False):
    """Slope of log E sup_{v<=Delta}|Y_v - Y_0|^p against log Delta.

    capped=True measures E(sup^p ^ 1), the bounded-moment variant used below
    the stability index.  Lags must be multiples of the recording step.
    """
    dt = float(ens.times[1] - ens.times[0])
    dev = np.abs(ens.states - ens.states[:, :1])
    run_max = np.maximum.accumulate(dev, axis=1)
    mom = []
    for lag in lags:
        i = int(round(lag / dt))
        if not (0 < i < ens.states.shape[1]):
            raise ValueError(f"lag {lag} outside the recorded window")
        m = run_max[:, i] ** p
        if capped:
            m = np.minimum(m, 1.0)
        mom.append(float(np.mean(m)))
    x = np.log(np.asarray(lags, dtype=np.float64))
    y = np.log(np.maximum(mom, 1e-300))
    A = np.stack([x, np.ones_like(x)], axis=1)
    slope = float(np.linalg.lstsq(A, y, rcond=None)[0][0])
    return slope, mom


def krylov_exponent(ens: PathEnsemble, f: GridFunction, windows):
    """Slope of log E | int_0^delta f(X_s) ds |^2 against log delta."""
    dt = float(ens.times[1] - ens.times[0])
    L = f.grid.L
    fv = _periodic_interp(f.values, L)(ens.states)
    # trapezoid cumulative integral along the recorded grid
    cum = np.concatenate([np.zeros((ens.n_paths, 1)),
                          np.cumsum(0.5 * (fv[:, 1:] + fv[:, :-1]) * dt, axis=1)],
                         axis=1)
    mom = []
    for w in windows:
        i = int(round(w / dt))
        if not (0 < i < ens.states.shape[1]):
            raise ValueError(f"window {w} outside the recorded range")
        mom.append(float(np.mean(cum[:, i] ** 2)))
    x = np.log(np.asarray(windows, dtype=np.float64))
    y = np.log(np.maximum(mom, 1e-300))
    A = np.stack([x, np.ones_like(x)], axis=1)
    slope = float(np.linalg.lstsq(A, y, rcond=None)[0][0])
    return slope, mom


def drift_functional_convergence(x0, kernel: Kernel, b: GridFunction,
                                 levels, cfg: StableJumpConfig, T: float,
                                 dt: float, master_seed: int, n_paths: int):
    """Coupled mollification study of the drift functional A_t = int b_n(X_s) ds.

    levels are low-pass cutoffs j (b_j = S_j b); consecutive levels run on the
    same dominating-measure realization and the sup-time gap quantiles of
    A^(j) vs A^(j+1) are reported.
    """
    from .besov import low_freq_cutoff
    rows = []
    prev = None
    for j in levels:
        b_j = low_freq_cutoff(b, j)
        triple = triple_from_kernel_drift(kernel, b_j, b.grid)
        ens = simulate_ensemble(x0, triple, cfg, T, dt, master_seed, n_paths,
                                label=f"mollified S_{j}")
        if prev is not None:
            gap = np.max(np.abs(ens.drift_functional - prev.drift_functional), axis=1)
            rows.append({
                "level": j,
                "median_gap": float(np.median(gap)),
                "q90_gap": float(np.quantile(gap, 0.9)),
            })
        prev = ens
    return rows
