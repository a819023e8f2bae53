"""Jump kernels kappa(x, z), their declared constants, and assumption validators.

A Kernel packages an evaluable density 0 <= kappa(x,z) <= Lambda2 together
with the constants it claims: a lower mass bound on small balls (Lambda1, up
to radius r0), the uniform upper bound Lambda2, and Holder continuity in x
(Lambda3, exponent theta).  Validators sample the claims and report rather
than prove: PASS means no counterexample at the declared resolution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .quadrature import QuadratureUnderResolved, ball_mass, radial_power_integral

__all__ = [
    "Kernel",
    "ValidatorReport",
    "LevyMeasure",
    "DegenerateCone",
    "SingularSigma",
    "constant_kernel",
    "sine_kernel",
    "rough_x_kernel",
    "conical_kernel",
    "sigma_kernel",
    "kernel_zoo",
    "check_lower_mass",
    "check_upper_and_ring_symmetry",
    "check_holder_in_x",
    "unit_ball_volume",
]


class DegenerateCone(ValueError):
    """Conical kernels need d = 2; in d = 1 the cone is all or nothing."""


class SingularSigma(ValueError):
    """sigma(x) is numerically singular at a probe point."""


def unit_ball_volume(d: int) -> float:
    return 2.0 if d == 1 else np.pi


@dataclass
class Kernel:
    """Evaluable jump density with declared constants.

    eval(x, z) must broadcast: d=1 takes scalars/arrays, d=2 takes x of shape
    (2,) (or broadcastable) and z of shape (..., 2).  even_in_z marks kernels
    with kappa(x,z) = kappa(x,-z) (drops compensators by symmetry);
    direction_only_in_z marks z-dependence through z/|z| alone, which enables
    exact scale-invariant symbol evaluation.  separable_factors, when present,
    lists (a_i, c_i) with kappa(x,z) = sum_i a_i(x) * c_i(z); the c_i must be
    x-independent.
    """

    name: str
    d: int
    alpha: float
    eval: callable
    lambda1: float
    lambda2: float
    lambda3: float
    theta: float
    r0: float = 1.0
    even_in_z: bool = True
    x_independent: bool = False
    direction_only_in_z: bool = True
    separable_factors: tuple | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def line(self, x, direction):
        """Radial section r -> kappa(x, r*direction) for positive radii.

        direction is +-1 in d=1 and a unit vector in d=2.
        """
        if self.d == 1:
            return lambda r: self.eval(x, direction * np.asarray(r))
        u = np.asarray(direction, dtype=np.float64)
        return lambda r: self.eval(x, np.asarray(r)[..., None] * u)

    def frozen(self, x) -> "Kernel":
        """x-independent kernel kappa(x0, .) at the frozen base point."""
        x0 = x

        def ev(_x, z):
            return self.eval(x0, z)

        return Kernel(name=f"{self.name}@frozen", d=self.d, alpha=self.alpha, eval=ev,
                      lambda1=self.lambda1, lambda2=self.lambda2, lambda3=0.0,
                      theta=self.theta, r0=self.r0, even_in_z=self.even_in_z,
                      x_independent=True, direction_only_in_z=self.direction_only_in_z)

    def x_averaged(self, grid) -> "Kernel":
        """x-average kappa_bar(z) over the grid (exact for separable kernels)."""
        if self.x_independent:
            return self
        if self.separable_factors is not None:
            pts = grid.points()
            consts = [float(np.mean(a(pts))) for a, _ in self.separable_factors]
            factors = tuple((lambda x, c=c: c, cz) for c, (_, cz) in
                            zip(consts, self.separable_factors))

            def ev(_x, z, consts=consts, czs=[cz for _, cz in self.separable_factors]):
                out = 0.0
                for c, cz in zip(consts, czs):
                    out = out + c * cz(z)
                return out * np.ones_like(_leading(z, self.d))

            return Kernel(name=f"{self.name}@avg", d=self.d, alpha=self.alpha, eval=ev,
                          lambda1=self.lambda1, lambda2=self.lambda2, lambda3=0.0,
                          theta=self.theta, r0=self.r0, even_in_z=self.even_in_z,
                          x_independent=True,
                          direction_only_in_z=self.direction_only_in_z)
        pts = grid.points()
        if self.d == 1:
            xs = pts
        else:
            xs = pts.reshape(-1, 2)

        def ev(_x, z):
            z = np.asarray(z)
            acc = None
            for x0 in (xs if self.d == 1 else xs):
                v = self.eval(x0, z)
                acc = v if acc is None else acc + v
            return acc / len(xs)

        return Kernel(name=f"{self.name}@avg", d=self.d, alpha=self.alpha, eval=ev,
                      lambda1=self.lambda1, lambda2=self.lambda2, lambda3=0.0,
                      theta=self.theta, r0=self.r0, even_in_z=self.even_in_z,
                      x_independent=True, direction_only_in_z=self.direction_only_in_z)

    @property
    def h4_lambda(self) -> float:
        """Level constant Lambda1/(2 c_d) of the induced small-ball condition."""
        return self.lambda1 / (2.0 * unit_ball_volume(self.d))

    @property
    def h4_delta0(self) -> float:
        """Measure constant Lambda1/(2 Lambda2) of the induced condition."""
        return self.lambda1 / (2.0 * self.lambda2)


def _leading(z, d):
    z = np.asarray(z)
    return z[..., 0] if d == 2 else z


# ---------------------------------------------------------------------------
# zoo
# ---------------------------------------------------------------------------

def constant_kernel(alpha: float, d: int = 1, value: float = 1.0,
                    theta: float = 0.9, r0: float = 1.0) -> Kernel:
    def ev(x, z):
        return value * np.ones_like(_leading(z, d), dtype=np.float64)

    return Kernel(name="constant", d=d, alpha=alpha, eval=ev,
                  lambda1=value * unit_ball_volume(d), lambda2=value, lambda3=0.0,
                  theta=theta, r0=r0, even_in_z=True, x_independent=True,
                  direction_only_in_z=True,
                  separable_factors=((lambda x: np.ones_like(np.asarray(x, dtype=np.float64)) * value,
                                      lambda z: np.ones_like(_leading(z, d), dtype=np.float64)),))


def sine_kernel(alpha: float, L: float, amp: float = 0.45, m: int = 1,
                theta: float = 0.9, r0: float = 1.0) -> Kernel:
    """d=1 kernel 1 + amp sin(2 pi m x / L): smooth in x, independent of z."""
    if not 0.0 < amp < 1.0:
        raise ValueError("amp must lie in (0,1) to keep the kernel positive")
    om = 2.0 * np.pi * m / L

    def ev(x, z):
        x = np.asarray(x, dtype=np.float64)
        return (1.0 + amp * np.sin(om * x)) * np.ones_like(np.asarray(z, dtype=np.float64))

    lam3 = amp * om**theta * 2.0 ** (1.0 - theta)
    return Kernel(name="sine", d=1, alpha=alpha, eval=ev,
                  lambda1=2.0 * (1.0 - amp), lambda2=1.0 + amp, lambda3=lam3,
                  theta=theta, r0=r0, even_in_z=True, x_independent=False,
                  direction_only_in_z=True,
                  separable_factors=(
                      (lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
                       lambda z: np.ones_like(np.asarray(z, dtype=np.float64))),
                      (lambda x: amp * np.sin(om * np.asarray(x, dtype=np.float64)),
                       lambda z: np.ones_like(np.asarray(z, dtype=np.float64))),
                  ))


def rough_x_kernel(alpha: float, L: float, m: int = 1, theta: float = 0.9,
                   r0: float = 1.0) -> Kernel:
    """d=1 kernel 1 + 0.5 * 1{sin(2 pi m x/L) > 0}: measurable but not Holder in x.

    The canonical fixture passing the mass and upper-bound checks while
    failing the x-Holder check at points straddling the discontinuity.
    """
    om = 2.0 * np.pi * m / L

    def ev(x, z):
        x = np.asarray(x, dtype=np.float64)
        return (1.0 + 0.5 * (np.sin(om * x) > 0.0)) * np.ones_like(np.asarray(z, dtype=np.float64))

    return Kernel(name="rough-x", d=1, alpha=alpha, eval=ev,
                  lambda1=2.0, lambda2=1.5, lambda3=0.5, theta=theta, r0=r0,
                  even_in_z=True, x_independent=False, direction_only_in_z=True,
                  separable_factors=(
                      (lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
                       lambda z: np.ones_like(np.asarray(z, dtype=np.float64))),
                      (lambda x: 0.5 * (np.sin(om * np.asarray(x, dtype=np.float64)) > 0.0),
                       lambda z: np.ones_like(np.asarray(z, dtype=np.float64))),
                  ))


def conical_kernel(xi_field, delta: float, alpha: float, d: int = 2,
                   theta: float = 0.9, r0: float = 1.0,
                   name: str = "conical") -> Kernel:
    """Indicator of the double cone {z : |<z/|z|, xi(x)>| > delta} in d = 2.

    xi_field maps x (shape (..., 2)) to unit vectors (same shape).
    """
    if d != 2:
        raise DegenerateCone("conical kernels are defined for d = 2 only")
    if not 0.0 < delta < 1.0:
        raise ValueError("aperture delta must lie in (0,1)")

    def ev(x, z):
        z = np.asarray(z, dtype=np.float64)
        xi = np.asarray(xi_field(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        nz = np.linalg.norm(z, axis=-1)
        nz = np.where(nz == 0.0, 1.0, nz)
        cosang = (z[..., 0] * xi[..., 0] + z[..., 1] * xi[..., 1]) / nz
        return (np.abs(cosang) > delta).astype(np.float64)

    # both cone lobes: angular measure 4 arccos(delta) out of 2 pi
    frac = 2.0 * np.arccos(delta) / np.pi
    return Kernel(name=name, d=2, alpha=alpha, eval=ev,
                  lambda1=frac * unit_ball_volume(2), lambda2=1.0, lambda3=0.0,
                  theta=theta, r0=r0, even_in_z=True, x_independent=False,
                  direction_only_in_z=True)


def sigma_kernel(sigma_field, alpha: float, d: int = 1, Lambda: float = 2.0,
                 theta: float = 0.9, r0: float = 1.0,
                 probe_points=None) -> Kernel:
    """Kernel induced by a matrix field: |z|^{d+a} / (|det s(x)| |s(x)^-1 z|^{d+a}).

    sigma_field maps x to a scalar (d=1) or a 2x2 matrix (d=2) satisfying
    |z|/Lambda <= |sigma z| <= Lambda |z|.  The conservative upper bound
    Lambda2 = Lambda^{2d+alpha} is declared.
    """
    if probe_points is None:
        probe_points = np.linspace(0.0, 1.0, 17) if d == 1 else \
            np.stack(np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 5),
                                 indexing="ij"), axis=-1).reshape(-1, 2)
    for x0 in probe_points:
        s = np.asarray(sigma_field(x0), dtype=np.float64)
        det = s if d == 1 else np.linalg.det(s)
        if abs(float(det)) < 1e-12:
            raise SingularSigma(f"|det sigma| < 1e-12 at probe x={x0}")

    if d == 1:
        def ev(x, z):
            s = np.abs(np.asarray(sigma_field(np.asarray(x, dtype=np.float64)),
                                  dtype=np.float64))
            return s**alpha * np.ones_like(np.asarray(z, dtype=np.float64))
    else:
        def ev(x, z):
            z = np.asarray(z, dtype=np.float64)
            s = np.asarray(sigma_field(np.asarray(x, dtype=np.float64)), dtype=np.float64)
            det = abs(float(np.linalg.det(s)))
            sinv = np.linalg.inv(s)
            w = z @ sinv.T
            nz = np.linalg.norm(z, axis=-1)
            nw = np.linalg.norm(w, axis=-1)
            nw = np.where(nz == 0.0, 1.0, nw)
            nz = np.where(nz == 0.0, 1.0, nz)
            return nz ** (2 + alpha) / (det * nw ** (2 + alpha))

    return Kernel(name="sigma", d=d, alpha=alpha, eval=ev,
                  lambda1=unit_ball_volume(d) * Lambda ** (-d - alpha),
                  lambda2=Lambda ** (2 * d + alpha), lambda3=0.0,
                  theta=theta, r0=r0, even_in_z=True, x_independent=False,
                  direction_only_in_z=True)


def kernel_zoo(name: str, alpha: float, L: float, **kw) -> Kernel:
    """Kernels addressable by name in config files."""
    if name == "constant":
        return constant_kernel(alpha, d=kw.get("d", 1), value=kw.get("value", 1.0),
                               theta=kw.get("theta", 0.9))
    if name == "sine":
        return sine_kernel(alpha, L, amp=kw.get("amp", 0.45), m=kw.get("m", 1),
                           theta=kw.get("theta", 0.9))
    if name == "rough-x":
        return rough_x_kernel(alpha, L, m=kw.get("m", 1), theta=kw.get("theta", 0.9))
    if name == "conical":
        delta = kw.get("delta", 0.5)
        ax = np.asarray(kw.get("axis", (1.0, 0.0)), dtype=np.float64)
        ax = ax / np.linalg.norm(ax)

        def xi(x):
            x = np.asarray(x, dtype=np.float64)
            return np.broadcast_to(ax, x.shape).copy()

        return conical_kernel(xi, delta, alpha, theta=kw.get("theta", 0.9))
    if name == "sigma":
        c = kw.get("scale", 1.5)
        return sigma_kernel(lambda x: c, alpha, d=kw.get("d", 1), Lambda=max(c, 1.0 / c))
    raise KeyError(f"unknown kernel name {name!r}")


# ---------------------------------------------------------------------------
# validators
# ---------------------------------------------------------------------------

@dataclass
class ValidatorReport:
    check: str
    rows: list = field(default_factory=list)  # (x, r, measured, bound, passed)
    resolution: str = ""

    @property
    def passed(self) -> bool:
        return all(r[-1] for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "x", "r", "measured", "bound", "pass"])
            for x, r, measured, bound, ok in self.rows:
                w.writerow([self.check, _fmt_pt(x), r, f"{measured:.17g}",
                            f"{bound:.17g}", int(ok)])


def _fmt_pt(x):
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return ";".join(f"{v:.12g}" for v in arr)


def check_lower_mass(kernel: Kernel, xs, rs, slack: float = 0.01) -> ValidatorReport:
    """Small-ball mass check: int_{B_r} kappa(x,z) dz >= Lambda1 r^d (1% slack)."""
    rep = ValidatorReport(check="lower-mass", resolution=f"slack={slack}")
    for x in xs:
        for r in rs:
            if r > kernel.r0:
                raise ValueError(f"radius {r} exceeds declared r0={kernel.r0}")
            bound = kernel.lambda1 * r**kernel.d
            val, err = ball_mass(kernel.eval, x, r, kernel.d)
            if err > slack * max(bound, 1e-300):
                raise QuadratureUnderResolved(
                    f"ball mass error {err:.2e} above slack at x={x}, r={r}")
            rep.rows.append((x, r, val, bound, bool(val >= (1.0 - slack) * bound)))
    return rep


def check_upper_and_ring_symmetry(kernel: Kernel, xs=None, n_z: int = 4096,
                                  ring_pairs=((0.1, 1.0), (0.5, 4.0)),
                                  z_max: float = 8.0) -> ValidatorReport:
    """Upper bound kappa <= Lambda2 on a dense lattice; ring centering at alpha = 1.

    For alpha = 1 the vector integral of z kappa(x,z) over each sampled ring
    {r < |z| < R} must vanish to 1e-8 * Lambda2 * R^d.
    """
    if xs is None:
        xs = [0.0, 0.3, 1.7] if kernel.d == 1 else \
            [np.array([0.0, 0.0]), np.array([0.4, 1.1])]
    rep = ValidatorReport(check="upper-ring", resolution=f"n_z={n_z}")
    for x in xs:
        if kernel.d == 1:
            z = np.linspace(-z_max, z_max, n_z)
            z = z[z != 0.0]
            vals = np.asarray(kernel.eval(x, z), dtype=np.float64)
        else:
            g = np.linspace(-z_max, z_max, int(np.sqrt(n_z)))
            Z = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
            vals = np.asarray(kernel.eval(x, Z), dtype=np.float64)
        measured = float(np.max(vals))
        ok = measured <= kernel.lambda2 * (1.0 + 1e-12) and float(np.min(vals)) >= 0.0
        rep.rows.append((x, 0.0, measured, kernel.lambda2, bool(ok)))

        if kernel.alpha == 1.0:
            for (r, R) in ring_pairs:
                moment = _ring_first_moment(kernel, x, r, R)
                tol = 1e-8 * kernel.lambda2 * R**kernel.d
                rep.rows.append((x, r, moment, tol, bool(moment <= tol)))
    return rep


def _ring_first_moment(kernel: Kernel, x, r: float, R: float) -> float:
    """|int_{r<|z|<R} z kappa(x,z) dz| by product quadrature."""
    if kernel.d == 1:
        def fn_plus(rr):
            return np.asarray(kernel.eval(x, rr), dtype=np.float64)

        def fn_minus(rr):
            return np.asarray(kernel.eval(x, -rr), dtype=np.float64)

        # int z kappa dz = int_r^R rr (k(rr) - k(-rr)) drr; weight r^{k-1-a} with a=0,k=2
        plus, _ = radial_power_integral(fn_plus, 0.0, 2.0, r, R)
        minus, _ = radial_power_integral(fn_minus, 0.0, 2.0, r, R)
        return abs(plus - minus)
    n_theta = 256
    th = (np.arange(n_theta) + 0.5) * 2.0 * np.pi / n_theta
    omg = np.stack([np.cos(th), np.sin(th)], axis=-1)

    def comp(rr, axis):
        rr = np.atleast_1d(rr)
        z = rr[:, None, None] * omg[None, :, :]
        vals = np.asarray(kernel.eval(x, z), dtype=np.float64)
        return (vals * omg[None, :, axis]).mean(axis=1) * 2.0 * np.pi * rr

    m0, _ = radial_power_integral(lambda rr: comp(rr, 0), 0.0, 2.0, r, R)
    m1, _ = radial_power_integral(lambda rr: comp(rr, 1), 0.0, 2.0, r, R)
    return float(np.hypot(m0, m1))


def check_holder_in_x(kernel: Kernel, pairs, n_z: int = 2048,
                      z_max: float = 4.0) -> ValidatorReport:
    """sup_z |kappa(x,z)-kappa(y,z)| / |x-y|^theta <= Lambda3 over sampled pairs."""
    rep = ValidatorReport(check="holder-x", resolution=f"n_z={n_z}")
    for (x, y) in pairs:
        if kernel.d == 1:
            z = np.linspace(-z_max, z_max, n_z)
            z = z[z != 0.0]
            dist = abs(float(x) - float(y))
        else:
            g = np.linspace(-z_max, z_max, int(np.sqrt(n_z)))
            z = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
            dist = float(np.linalg.norm(np.asarray(x) - np.asarray(y)))
        gap = np.max(np.abs(np.asarray(kernel.eval(x, z), dtype=np.float64)
                            - np.asarray(kernel.eval(y, z), dtype=np.float64)))
        ratio = float(gap) / dist**kernel.theta if dist > 0 else 0.0
        rep.rows.append((x, dist, ratio, kernel.lambda3, bool(ratio <= kernel.lambda3 * (1.0 + 1e-9))))
    return rep


def level_set_mass(kernel: Kernel, x, r: float, level: float,
                   n: int = 200_000, seed: int = 0) -> float:
    """Monte Carlo |B_r intersect {kappa(x,.) >= level}| (consistency probe)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(55,)))
    if kernel.d == 1:
        z = rng.uniform(-r, r, size=n)
        vol = 2.0 * r
    else:
        z = rng.uniform(-r, r, size=(n, 2))
        keep = np.linalg.norm(z, axis=-1) <= r
        z = z[keep]
        vol = np.pi * r**2
        n = len(z)
    vals = np.asarray(kernel.eval(x, z), dtype=np.float64)
    return float(np.mean(vals >= level) * vol)


# ---------------------------------------------------------------------------
# Levy measure moment oracle
# ---------------------------------------------------------------------------

@dataclass
class LevyMeasure:
    """nu(dz) = weight(z) |z|^{-d-alpha} dz with moment oracles.

    weight is kappa(x0, .) for a frozen kernel, or k(y,.)*|g(y,.)| geometry for
    transformed coefficients (the pushforward moments are computed in the
    source variable).
    """

    d: int
    alpha: float
    weight: callable          # z -> nonnegative weight
    jump_map: callable = None  # optional z -> g(z); identity when None

    @classmethod
    def from_kernel_at(cls, kernel: Kernel, x) -> "LevyMeasure":
        return cls(d=kernel.d, alpha=kernel.alpha,
                   weight=lambda z: np.asarray(kernel.eval(x, z), dtype=np.float64))

    def _gval(self, z):
        return z if self.jump_map is None else self.jump_map(z)

    def small_moment(self, a: float) -> float:
        """int_{|g(z)| <= a} |g(z)|^2 nu(dz)."""
        if self.d == 1:
            def fn(r):
                out = 0.0
                for sgn in (1.0, -1.0):
                    g = np.asarray(self._gval(sgn * r), dtype=np.float64)
                    out = out + np.abs(g) ** 2 * (np.abs(g) <= a) * \
                        np.asarray(self.weight(sgn * r), dtype=np.float64)
                return out
            # source radii up to 4a cover |g| <= a for comparable jump maps
            val, _ = radial_power_integral(fn, self.alpha, 0.0, a * 1e-9, 4.0 * max(a, 1e-9))
            return val
        th = (np.arange(64) + 0.5) * 2.0 * np.pi / 64

        def fn(r):
            r = np.atleast_1d(r)
            z = r[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]
            g = np.asarray(self._gval(z), dtype=np.float64)
            ng = np.linalg.norm(g, axis=-1)
            w = np.asarray(self.weight(z), dtype=np.float64)
            return (ng**2 * (ng <= a) * w).mean(axis=1) * 2.0 * np.pi

        val, _ = radial_power_integral(fn, self.alpha, 1.0, a * 1e-9, 4.0 * max(a, 1e-9))
        return val

    def directional_moment(self, a: float, xi) -> float:
        """int_{|g(z)| <= a} <xi, g(z)>^2 nu(dz)."""
        if self.d == 1:
            return self.small_moment(a)  # S^0 directions give |g|^2
        xi = np.asarray(xi, dtype=np.float64)
        th = (np.arange(64) + 0.5) * 2.0 * np.pi / 64

        def fn(r):
            r = np.atleast_1d(r)
            z = r[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]
            g = np.asarray(self._gval(z), dtype=np.float64)
            ng = np.linalg.norm(g, axis=-1)
            proj = g[..., 0] * xi[0] + g[..., 1] * xi[1]
            w = np.asarray(self.weight(z), dtype=np.float64)
            return (proj**2 * (ng <= a) * w).mean(axis=1) * 2.0 * np.pi

        val, _ = radial_power_integral(fn, self.alpha, 1.0, a * 1e-9, 4.0 * max(a, 1e-9))
        return val

    def large_moment(self, p: float, r_max: float = 1e6) -> float:
        """int_{|z| >= 1} |z|^p nu(dz) for p < alpha (finite by assumption)."""
        if p >= self.alpha:
            raise ValueError("large-jump moment requires p < alpha")
        if self.d == 1:
            def fn(r):
                return np.asarray(self.weight(r), dtype=np.float64) + \
                    np.asarray(self.weight(-r), dtype=np.float64)
            val, _ = radial_power_integral(fn, self.alpha, p, 1.0, r_max)
            return val
        th = (np.arange(64) + 0.5) * 2.0 * np.pi / 64

        def fn(r):
            r = np.atleast_1d(r)
            z = r[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]
            w = np.asarray(self.weight(z), dtype=np.float64)
            return w.mean(axis=1) * 2.0 * np.pi

        val, _ = radial_power_integral(fn, self.alpha, p + 1.0, 1.0, r_max)
        return val

    def small_moment_constant(self, a_list=None) -> float:
        """Measured sup_a small_moment(a)/a^{2-alpha} over a in (0,1]."""
        if a_list is None:
            a_list = [2.0**-k for k in range(0, 7)]
        return max(self.small_moment(a) / a ** (2.0 - self.alpha) for a in a_list)

    def directional_constant(self, dirs=None, a_list=None) -> float:
        """Measured inf over directions/a of directional_moment/a^{2-alpha}."""
        if a_list is None:
            a_list = [2.0**-k for k in range(0, 7)]
        if self.d == 1 or dirs is None:
            dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                    np.array([np.sqrt(0.5), np.sqrt(0.5)])] if self.d == 2 else [1.0]
        vals = []
        for xi in dirs:
            for a in a_list:
                vals.append(self.directional_moment(a, xi) / a ** (2.0 - self.alpha))
        return min(vals)
