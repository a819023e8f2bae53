"""Littlewood-Paley decomposition, Besov norms and Bony calculus on a periodic grid.

Everything here is spectral: a field sampled on a uniform periodic grid is
decomposed into dyadic frequency blocks by multiplying its DFT with smooth
radial cutoffs.  The cutoff profile is exact on its plateaus (chi = 1 for
|xi| <= 1, chi = 0 for |xi| >= 3/2), so a pure cosine whose frequency lands
on a plateau is reproduced by a single block without leakage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusGrid",
    "GridFunction",
    "DyadicCutoffs",
    "BesovParams",
    "BlockOutOfRange",
    "ScaleOverflow",
    "dyadic_block",
    "dyadic_blocks",
    "low_freq_cutoff",
    "besov_norm",
    "holder_norm",
    "block_profile",
    "paraproduct",
    "remainder",
    "bernstein_check",
    "build_rough_field",
    "random_band_limited",
    "write_gridfunction",
    "read_gridfunction",
]


class BlockOutOfRange(ValueError):
    """Requested dyadic block is finer than the grid can resolve."""


class ScaleOverflow(ValueError):
    """Requested rough-field scale exceeds the grid's resolvable range."""


# ---------------------------------------------------------------------------
# grid and fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [0, L)^d with d in {1, 2} and N a power of two.

    Frequencies are the physical lattice frequencies xi_k = 2*pi*k/L.  The
    finest resolvable dyadic block j_max is the largest j whose annulus
    {2^j/2 < |xi| < 3*2^j/2} fits under the Nyquist frequency pi*N/L.
    """

    d: int
    N: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 16 or (self.N & (self.N - 1)) != 0:
            raise ValueError(f"N must be a power of two >= 16, got {self.N}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def nyquist(self) -> float:
        return np.pi * self.N / self.L

    @property
    def j_max(self) -> int:
        # largest j with (3/2)*2^j <= pi*N/L
        j = -1
        while 1.5 * 2.0 ** (j + 1) <= self.nyquist * (1 + 1e-12):
            j += 1
        return j

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    def axis_points(self) -> np.ndarray:
        return np.arange(self.N) * self.dx

    def points(self) -> np.ndarray:
        """Grid points; shape (N,) for d=1, (N, N, 2) for d=2."""
        x = self.axis_points()
        if self.d == 1:
            return x
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def freqs(self) -> np.ndarray:
        """Physical frequencies per axis (fft order)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)

    def freq_radii(self) -> np.ndarray:
        """|xi| on the full spectral grid (fft order)."""
        xi = self.freqs()
        if self.d == 1:
            return np.abs(xi)
        XI, ETA = np.meshgrid(xi, xi, indexing="ij")
        return np.sqrt(XI**2 + ETA**2)

    def cell_volume(self) -> float:
        return self.dx**self.d


class GridFunction:
    """Real field on a TorusGrid with a lazily cached DFT.

    The spectrum is np.fft.fftn of the values; it is invalidated/never shared
    because instances are treated as immutable once constructed.
    """

    __slots__ = ("grid", "values", "_spectrum")

    def __init__(self, grid: TorusGrid, values: np.ndarray, spectrum: np.ndarray | None = None):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.values = values
        self._spectrum = spectrum

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            self._spectrum = np.fft.fftn(self.values)
        return self._spectrum

    @classmethod
    def from_spectrum(cls, grid: TorusGrid, spectrum: np.ndarray) -> "GridFunction":
        vals = np.fft.ifftn(spectrum)
        return cls(grid, vals.real, spectrum=np.asarray(spectrum, dtype=np.complex128))

    @classmethod
    def from_callable(cls, grid: TorusGrid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.points()), dtype=np.float64))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lp_norm(self, p: float) -> float:
        """Discrete L^p norm with cell-midpoint quadrature weights."""
        if np.isinf(p):
            return self.sup_norm()
        w = self.grid.cell_volume()
        return float((np.sum(np.abs(self.values) ** p) * w) ** (1.0 / p))

    def gradient(self) -> list:
        """Spectral gradient, one GridFunction per axis."""
        xi = self.grid.freqs()
        out = []
        if self.grid.d == 1:
            out.append(GridFunction.from_spectrum(self.grid, 1j * xi * self.spectrum))
        else:
            out.append(GridFunction.from_spectrum(self.grid, 1j * xi[:, None] * self.spectrum))
            out.append(GridFunction.from_spectrum(self.grid, 1j * xi[None, :] * self.spectrum))
        return out

    def __add__(self, other):
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            return GridFunction(self.grid, self.values * c.values)
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# cutoff profiles
# ---------------------------------------------------------------------------

def _bump_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for t <= 0, 0 for t >= 1, exp-bridge in between."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    out[t <= 0.0] = 1.0
    out[t >= 1.0] = 0.0
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    a = np.exp(-1.0 / tm)          # -> 0 at t=0+
    b = np.exp(-1.0 / (1.0 - tm))  # -> 0 at t=1-
    out[mid] = b / (a + b)
    return out


@dataclass(frozen=True)
class DyadicCutoffs:
    """Radial profiles chi, phi = chi - chi(2.) and the fat annulus profile.

    chi == 1 on |xi| <= 1 and == 0 on |xi| >= 3/2 with a smooth exp-bridge on
    (1, 3/2); phi is then supported in the annulus {1/2 < |xi| < 3/2} and the
    telescoping partition chi(2 xi) + sum_{j<=k} phi(2^-j xi) = chi(2^-k xi)
    holds identically.  annulus_one equals 1 on that annulus and vanishes
    outside {1/4 < |xi| < 2}.
    """

    lo: float = 1.0
    hi: float = 1.5

    def chi(self, r: np.ndarray) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=np.float64))
        return _bump_step((r - self.lo) / (self.hi - self.lo))

    def phi(self, r: np.ndarray) -> np.ndarray:
        return self.chi(r) - self.chi(2.0 * np.asarray(r, dtype=np.float64))

    def annulus_one(self, r: np.ndarray) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=np.float64))
        inner = 1.0 - _bump_step((r - 0.25) / 0.25)   # 0 below 1/4, 1 above 1/2
        outer = _bump_step((r - 1.5) / 0.5)           # 1 below 3/2, 0 above 2
        return inner * outer


_CUTOFFS = DyadicCutoffs()


@dataclass(frozen=True)
class BesovParams:
    """Regularity s and integrability indices p, q (np.inf encodes infinity)."""

    s: float
    p: float = np.inf
    q: float = np.inf

    def __post_init__(self):
        for v in (self.p, self.q):
            if not (v >= 1.0):
                raise ValueError("p, q must be >= 1 or inf")


# ---------------------------------------------------------------------------
# block operators
# ---------------------------------------------------------------------------

def _block_multiplier(grid: TorusGrid, j: int, cutoffs: DyadicCutoffs = _CUTOFFS) -> np.ndarray:
    r = grid.freq_radii()
    if j == -1:
        return cutoffs.chi(2.0 * r)
    return cutoffs.phi(r / 2.0**j)


def dyadic_block(f: GridFunction, j: int, cutoffs: DyadicCutoffs = _CUTOFFS) -> GridFunction:
    """Frequency projection onto the dyadic annulus |xi| ~ 2^j (j = -1 is the ball)."""
    if j < -1:
        raise BlockOutOfRange(f"block index {j} < -1")
    if j > f.grid.j_max:
        raise BlockOutOfRange(
            f"block {j} unresolvable: annulus top {1.5 * 2.0**j:g} exceeds "
            f"Nyquist {f.grid.nyquist:g} (j_max={f.grid.j_max})"
        )
    return GridFunction.from_spectrum(f.grid, _block_multiplier(f.grid, j, cutoffs) * f.spectrum)


def dyadic_blocks(f: GridFunction, cutoffs: DyadicCutoffs = _CUTOFFS) -> list:
    """All blocks j = -1 .. j_max as a list (index 0 holds j = -1)."""
    return [dyadic_block(f, j, cutoffs) for j in range(-1, f.grid.j_max + 1)]


def low_freq_cutoff(f: GridFunction, j: int, cutoffs: DyadicCutoffs = _CUTOFFS) -> GridFunction:
    """S_j f = sum of blocks j' <= j-1 (empty sum for j <= -1)."""
    jm = f.grid.j_max
    top = min(j - 1, jm)
    if top < -1:
        return GridFunction(f.grid, np.zeros(f.grid.shape))
    mult = np.zeros(f.grid.shape)
    for jp in range(-1, top + 1):
        mult = mult + _block_multiplier(f.grid, jp, cutoffs)
    if j - 1 > jm:
        # all resolvable blocks included: pass the full spectrum through
        mult = np.ones(f.grid.shape)
    return GridFunction.from_spectrum(f.grid, mult * f.spectrum)


def block_profile(f: GridFunction, params: BesovParams) -> list:
    """[(j, ||block_j f||_p, 2^{js} ||block_j f||_p)] for j = -1 .. j_max."""
    out = []
    for j in range(-1, f.grid.j_max + 1):
        nrm = dyadic_block(f, j).lp_norm(params.p)
        out.append((j, nrm, 2.0 ** (j * params.s) * nrm))
    return out


def besov_norm(f: GridFunction, params: BesovParams) -> float:
    """Finite-range Besov norm: l^q over j <= j_max of 2^{js} ||block_j f||_p."""
    weighted = np.array([w for (_, _, w) in block_profile(f, params)])
    if np.isinf(params.q):
        return float(np.max(weighted))
    return float(np.sum(weighted**params.q) ** (1.0 / params.q))


def holder_norm(f: GridFunction, s: float) -> float:
    """Holder-Zygmund norm: Besov norm with p = q = inf."""
    return besov_norm(f, BesovParams(s=s))


# ---------------------------------------------------------------------------
# Bony calculus
# ---------------------------------------------------------------------------

def paraproduct(f: GridFunction, g: GridFunction) -> GridFunction:
    """Bony paraproduct T_f g = sum_j S_{j-1} f * block_j g (pointwise products)."""
    if f.grid != g.grid:
        raise ValueError("paraproduct requires a shared grid")
    jm = f.grid.j_max
    f_blocks = dyadic_blocks(f)
    g_blocks = dyadic_blocks(g)
    acc = np.zeros(f.grid.shape)
    # running S_{j-1} f = sum of f-blocks j' <= j-2
    s_run = np.zeros(f.grid.shape)
    for j in range(-1, jm + 1):
        if j - 2 >= -1:
            s_run = s_run + f_blocks[j - 2 + 1].values
        acc = acc + s_run * g_blocks[j + 1].values
    return GridFunction(f.grid, acc)


def remainder(f: GridFunction, g: GridFunction) -> GridFunction:
    """Bony remainder R(f,g) = sum over |k-j| <= 1 of block_k f * block_j g."""
    if f.grid != g.grid:
        raise ValueError("remainder requires a shared grid")
    jm = f.grid.j_max
    f_blocks = dyadic_blocks(f)
    g_blocks = dyadic_blocks(g)
    acc = np.zeros(f.grid.shape)
    for k in range(-1, jm + 1):
        for j in range(max(-1, k - 1), min(jm, k + 1) + 1):
            acc = acc + f_blocks[k + 1].values * g_blocks[j + 1].values
    return GridFunction(f.grid, acc)


# ---------------------------------------------------------------------------
# Bernstein probe
# ---------------------------------------------------------------------------

EMPTY_BLOCK = None  # distinguished result when a block carries no mass


def bernstein_check(f: GridFunction, j: int, k: int, p: float, q: float,
                    fractional_s: float | None = None):
    """Ratio ||D^k block_j f||_q / (2^{(k + d(1/p-1/q)) j} ||block_j f||_p).

    With fractional_s set, the derivative D^k is replaced by the spectral
    multiplier |xi|^s and k is ignored in the numerator (the weight uses s).
    Returns EMPTY_BLOCK (None) when ||block_j f||_p vanishes.
    """
    if p > q:
        raise ValueError("Bernstein ratio requires p <= q")
    blk = dyadic_block(f, j)
    den_base = blk.lp_norm(p)
    if den_base <= 1e-13 * max(f.sup_norm(), 1e-300):
        return EMPTY_BLOCK
    d = f.grid.d
    if fractional_s is not None:
        s = fractional_s
        r = f.grid.freq_radii()
        num_f = GridFunction.from_spectrum(f.grid, (r**s) * blk.spectrum)
        num = num_f.lp_norm(q)
        weight = 2.0 ** ((s + d * (1.0 / p - 1.0 / q)) * j)
    else:
        if k == 0:
            num = blk.lp_norm(q)
        elif d == 1:
            xi = f.grid.freqs()
            num_f = GridFunction.from_spectrum(f.grid, (1j * xi) ** k * blk.spectrum)
            num = num_f.lp_norm(q)
        elif k == 1:
            gx, gy = blk.gradient()
            mag = np.sqrt(gx.values**2 + gy.values**2)
            num = GridFunction(f.grid, mag).lp_norm(q)
        else:
            raise ValueError("derivative order > 1 in d=2 is not supported")
        weight = 2.0 ** ((k + d * (1.0 / p - 1.0 / q)) * j)
    return num / (weight * den_base)


# ---------------------------------------------------------------------------
# synthetic fields
# ---------------------------------------------------------------------------

def _plateau_freq_index(grid: TorusGrid, j: int) -> int:
    """Lattice index whose frequency lands on the plateau phi == 1 of block j.

    Targets 0.9 * 2^j; on coarse frequency lattices the nearest admissible
    index inside [3/4, 1] * 2^j is taken.
    """
    base = 2.0 * np.pi / grid.L
    k = int(round(0.9 * 2.0**j / base))
    k = max(k, 1)
    # push into the exact plateau if rounding left it outside
    while k * base > 2.0**j and k > 1:
        k -= 1
    while k * base < 0.75 * 2.0**j:
        k += 1
    if not (0.75 * 2.0**j <= k * base <= 2.0**j):
        raise ScaleOverflow(f"no lattice frequency on the plateau of block {j}")
    return k


def build_rough_field(grid: TorusGrid, beta: float, J: int | None = None,
                      seed: int = 0) -> GridFunction:
    """Lacunary field sum_j 2^{-beta j} eps_j cos(xi_j . x + delta_j).

    One cosine per dyadic scale j = 0..J with Rademacher signs eps_j and
    uniform phases delta_j drawn from `seed`; xi_j is a lattice frequency on
    the plateau of block j, so each term is a single exact dyadic block and
    the Holder-Zygmund norm at exponent beta is ~1 by construction.  Any sign
    of beta is allowed (beta < 0 produces a distribution-like field).

    J defaults to j_max - 2 so the grid sees every oscillation well inside
    Nyquist (sampled sup-norms stay within ~2% of the true amplitudes).
    """
    jm = grid.j_max
    if J is None:
        J = max(0, jm - 2)
    if J > jm:
        raise ScaleOverflow(f"J={J} exceeds j_max={jm}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2718,)))
    pts = grid.points()
    vals = np.zeros(grid.shape)
    for j in range(0, J + 1):
        k = _plateau_freq_index(grid, j)
        xi = 2.0 * np.pi * k / grid.L
        eps = 1.0 if rng.random() < 0.5 else -1.0
        delta = rng.uniform(0.0, 2.0 * np.pi)
        if grid.d == 1:
            phase = xi * pts + delta
        else:
            axis = int(rng.integers(0, 2))
            phase = xi * pts[..., axis] + delta
        vals += 2.0 ** (-beta * j) * eps * np.cos(phase)
    return GridFunction(grid, vals)


def random_band_limited(grid: TorusGrid, j_lo: int = -1, j_hi: int | None = None,
                        seed: int = 0, decay: float = 0.0) -> GridFunction:
    """Random real field with spectrum confined to blocks j_lo..j_hi.

    Coefficients are complex Gaussian with per-block weight 2^{-decay*j},
    Hermitian-symmetrized so the field is real.
    """
    if j_hi is None:
        j_hi = grid.j_max
    if j_hi > grid.j_max:
        raise BlockOutOfRange(f"j_hi={j_hi} exceeds j_max={grid.j_max}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(914,)))
    r = grid.freq_radii()
    spec = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    mask = np.zeros(grid.shape)
    for j in range(j_lo, j_hi + 1):
        w = 2.0 ** (-decay * j) if j >= 0 else 1.0
        mask = mask + w * _block_multiplier(grid, j)
    # clip at the reconstruction boundary so sum_j block_j reproduces the field
    mask = mask * (r <= 2.0**grid.j_max)
    spec = spec * mask
    # Hermitian symmetrization: fft of the real part of the inverse transform
    vals = np.fft.ifftn(spec).real
    out = GridFunction(grid, vals)
    m = out.sup_norm()
    if m > 0:
        out = out * (1.0 / m)
    return out


def band_limit(f: GridFunction) -> GridFunction:
    """Project f onto the resolvable band (blocks -1..j_max)."""
    return GridFunction.from_spectrum(
        f.grid, f.spectrum * _CUTOFFS.chi(f.grid.freq_radii() / 2.0**f.grid.j_max))


# ---------------------------------------------------------------------------
# serialization: 32-byte header (magic 'GFN1', pad, d/N/L as float64) + payload
# ---------------------------------------------------------------------------

_MAGIC = b"GFN1"


def write_gridfunction(path, f: GridFunction) -> None:
    header = _MAGIC + b"\x00" * 4 + struct.pack("<3d", float(f.grid.d), float(f.grid.N), f.grid.L)
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_gridfunction(path) -> GridFunction:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if header[:4] != _MAGIC:
            raise ValueError("not a GFN1 file")
        d, N, L = struct.unpack("<3d", header[8:32])
        grid = TorusGrid(d=int(d), N=int(N), L=L)
        payload = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.shape)
    return GridFunction(grid, payload.copy())
