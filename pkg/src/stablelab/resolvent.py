"""Resolvent equation lam u - L u - b . grad u = f and the drift-removing map.

The solver preconditions with the x-averaged frozen kernel: each Picard sweep
inverts (lam - L_bar) exactly in Fourier space and feeds back the variable
correction (L - L_bar) u plus the drift term, the latter assembled by Bony
decomposition so that distribution-regularity drifts (beta <= 0) are handled
the same way the estimates treat them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .besov import (GridFunction, TorusGrid, besov_norm, BesovParams,
                    holder_norm, paraproduct, remainder)
from .kernels import Kernel
from .nonlocal_op import (MultiplierTable, apply_quadrature, apply_variable,
                          build_multiplier_table, trig_eval)

__all__ = [
    "ResolventSolution",
    "ZvonkinMap",
    "NotContracting",
    "ResidualStall",
    "LambdaOverflow",
    "AdmissibilityError",
    "drift_term",
    "solve",
    "estimate_lambda0",
    "schauder_ratio",
    "build_zvonkin",
]


class NotContracting(RuntimeError):
    """Picard iteration expands for several consecutive sweeps (lam too small)."""


class ResidualStall(RuntimeError):
    """Residual stopped improving above the requested tolerance."""


class LambdaOverflow(RuntimeError):
    """No lam <= 1e6 met the gradient bound for the drift-removing map."""


class AdmissibilityError(ValueError):
    """Parameters violate the admissible (alpha, beta, theta) region."""


def check_admissible(alpha: float, beta: float, theta: float) -> None:
    """Raise unless beta sits in the admissible window for the given alpha."""
    if alpha <= 1.0:
        if not (beta > 1.0 - alpha):
            raise AdmissibilityError(
                f"beta={beta:g} <= 1-alpha={1-alpha:g}: drift too rough for "
                f"alpha={alpha:g} (need beta > 1-alpha)")
        if not (beta < theta):
            raise AdmissibilityError(
                f"beta={beta:g} >= theta={theta:g}: drift regularity must stay "
                "below the kernel's x-Holder exponent")
    else:
        lo = -min((alpha - 1.0) / 2.0, theta)
        if not (lo < beta < theta):
            raise AdmissibilityError(
                f"beta={beta:g} outside ({lo:g}, {theta:g}), the admissible "
                f"window for alpha={alpha:g}, theta={theta:g}")


def drift_term(b: GridFunction, u: GridFunction) -> GridFunction:
    """b . grad u assembled as paraproducts plus remainder (Bony splitting)."""
    du = u.gradient()
    if u.grid.d == 1:
        g = du[0]
        return paraproduct(b, g) + paraproduct(g, b) + remainder(b, g)
    out = np.zeros(u.grid.shape)
    # component fields of b are packed as a single GridFunction per axis
    raise NotImplementedError("d=2 drift uses one GridFunction per component; "
                              "use drift_term_components")


def drift_term_components(b_comps, u: GridFunction) -> GridFunction:
    du = u.gradient()
    acc = np.zeros(u.grid.shape)
    for bc, uc in zip(b_comps, du):
        term = paraproduct(bc, uc) + paraproduct(uc, bc) + remainder(bc, uc)
        acc = acc + term.values
    return GridFunction(u.grid, acc)


@dataclass
class ResolventSolution:
    u: GridFunction
    lam: float
    residual: float
    iterations: int
    contraction: float
    lambda0_est: float | None = None

    def verify_residual(self, kernel: Kernel, b: GridFunction, f: GridFunction,
                        n_points: int = 8):
        """Independent residual check by pointwise singular quadrature.

        Returns (max |lam u - L u - b.grad u - f| over sampled points,
        max quadrature bracket); consistency means the first is within
        tolerance + bracket.
        """
        grid = self.u.grid
        du = self.u.gradient()[0]
        worst = 0.0
        worst_bracket = 0.0
        idxs = np.linspace(0, grid.N - 1, n_points).astype(int)
        for i in idxs:
            x = grid.axis_points()[i]
            q = apply_quadrature(kernel, self.u, x)
            r = (self.lam * self.u.values[i] - q.value
                 - b.values[i] * du.values[i] - f.values[i])
            worst = max(worst, abs(r))
            worst_bracket = max(worst_bracket, q.bracket)
        return worst, worst_bracket


def _sweep(kernel, table_bar, b, f, u, lam):
    """One Picard sweep; returns (new u, feedback field G(u) = corr + drift)."""
    corr = apply_variable(kernel, u) - table_bar.apply(u)
    drift = drift_term(b, u)
    G = GridFunction(u.grid, corr.values + drift.values)
    rhs = GridFunction(u.grid, f.values + G.values)
    new_spec = rhs.spectrum / (lam - table_bar.psi)
    return GridFunction.from_spectrum(u.grid, new_spec), G


def solve(lam: float, kernel: Kernel, b: GridFunction, f: GridFunction,
          beta: float, tol: float = 1e-10, max_iter: int = 400,
          lambda0_est: float | None = None) -> ResolventSolution:
    """Picard solution of lam u - L u - b . grad u = f on the torus.

    The measured residual is the sup norm of the defect of the returned
    iterate, evaluated with the same spectral operator applications used in
    the sweep (exact for separable kernels).
    """
    check_admissible(kernel.alpha, beta, kernel.theta)
    if not lam > 0:
        raise ValueError("lam must be positive")
    grid = f.grid
    kbar = kernel.x_averaged(grid)
    key = ("solver_table", grid.d, grid.N, grid.L)
    if key not in kernel.cache:
        kernel.cache[key] = build_multiplier_table(grid, kbar)
    table_bar = kernel.cache[key]

    u = GridFunction(grid, np.zeros(grid.shape))
    prev_diff = None
    contraction = np.nan
    expand_streak = 0
    stall_streak = 0
    best_res = np.inf
    G_prev = None
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        u_new, G = _sweep(kernel, table_bar, b, f, u, lam)
        diff = float(np.max(np.abs(u_new.values - u.values)))
        if prev_diff is not None and prev_diff > 0:
            contraction = diff / prev_diff
            expand_streak = expand_streak + 1 if contraction >= 1.0 else 0
            if expand_streak >= 5:
                raise NotContracting(
                    f"Picard expansion for 5 sweeps at lam={lam:g} "
                    f"(factor {contraction:.3f}); lam below the contraction threshold")
        prev_diff = diff
        if G_prev is not None:
            # lam u_n - L_bar u_n = f + G(u_{n-1}) exactly, so the defect of
            # u_n is G(u_{n-1}) - G(u_n)
            res = float(np.max(np.abs(G_prev.values - G.values)))
            if res <= tol:
                u = u_new
                break
            if res < best_res * (1 - 1e-3):
                best_res = res
                stall_streak = 0
            else:
                stall_streak += 1
                if stall_streak >= 40:
                    raise ResidualStall(
                        f"residual stalled at {res:.3e} > tol={tol:g} at lam={lam:g}")
        u = u_new
        G_prev = G
    # final defect of the returned iterate
    corr = apply_variable(kernel, u) - table_bar.apply(u)
    drift = drift_term(b, u)
    defect = (lam * u.values - table_bar.apply(u).values - corr.values
              - drift.values - f.values)
    residual = float(np.max(np.abs(defect)))
    return ResolventSolution(u=u, lam=lam, residual=residual, iterations=it,
                             contraction=contraction, lambda0_est=lambda0_est)


def estimate_lambda0(kernel: Kernel, b: GridFunction, beta: float,
                     grid: TorusGrid, probe_f: GridFunction | None = None,
                     lam_hi: float = 4096.0, n_sweeps: int = 25,
                     factor_cut: float = 0.9) -> float:
    """Smallest lam (by bisection, factor-2 grid) where Picard contracts.

    Operational stand-in for the unknown threshold constant: the measured
    contraction factor over n_sweeps must stay below factor_cut.
    """
    if probe_f is None:
        from .besov import build_rough_field
        probe_f = build_rough_field(grid, max(beta, 0.1), seed=1234)

    def contracts(lam):
        try:
            sol = solve(lam, kernel, b, probe_f, beta, tol=1e-30,
                        max_iter=n_sweeps)
        except (NotContracting, ResidualStall):
            return False
        return sol.contraction < factor_cut

    lo, hi = None, lam_hi
    lam = lam_hi
    if not contracts(hi):
        raise NotContracting(f"no contraction even at lam={lam_hi}")
    lam = hi
    while lam > 1e-2:
        nxt = lam / 2.0
        if contracts(nxt):
            lam = nxt
        else:
            lo = nxt
            break
    if lo is None:
        return lam
    # refine between lo (fails) and lam (works)
    for _ in range(4):
        mid = np.sqrt(lo * lam)
        if contracts(mid):
            lam = mid
        else:
            lo = mid
    return lam


def schauder_ratio(sol: ResolventSolution, f: GridFunction, beta: float,
                   alpha: float, lam: float, lambda0_est: float):
    """Normalized a priori ratios ((lam-lam0)||u||_beta / ||f||_beta,
    ||u||_{alpha+beta} / ||f||_beta); None for f = 0 (degenerate)."""
    den = holder_norm(f, beta)
    if den == 0.0:
        return None
    r1 = (lam - lambda0_est) * holder_norm(sol.u, beta) / den
    r2 = holder_norm(sol.u, alpha + beta) / den
    return r1, r2


# ---------------------------------------------------------------------------
# drift-removing change of variables
# ---------------------------------------------------------------------------

@dataclass
class ZvonkinMap:
    """Phi = id + u with u solving lam u - L u - b.grad u = b, grad u small.

    Carries the transformed coefficient triple: drift a(y) = lam u(inv(y)),
    acceptance kernel k(y,z) = kappa(inv(y), z) and jump map
    g(y,z) = Phi(inv(y) + z) - y.  inv is tabulated on the grid and refined
    by Newton; all scalar fields interpolate linearly off-grid.
    """

    grid: TorusGrid
    u: GridFunction
    lam: float
    kernel: Kernel
    grad_sup: float
    inv_table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.inv_table is None:
            self.inv_table = self._build_inverse()

    # Phi and its inverse act on the periodic lift: Phi(x + L) = Phi(x) + L
    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x + self._u_at(x)

    def _u_at(self, x):
        g = self.grid
        xm = np.mod(x, g.L)
        idx = xm / g.dx
        i0 = np.floor(idx).astype(int) % g.N
        i1 = (i0 + 1) % g.N
        w = idx - np.floor(idx)
        uv = self.u.values
        return (1.0 - w) * uv[i0] + w * uv[i1]

    def _du_at(self, x):
        g = self.grid
        du = self.u.gradient()[0].values
        xm = np.mod(x, g.L)
        idx = xm / g.dx
        i0 = np.floor(idx).astype(int) % g.N
        i1 = (i0 + 1) % g.N
        w = idx - np.floor(idx)
        return (1.0 - w) * du[i0] + w * du[i1]

    def _build_inverse(self) -> np.ndarray:
        """x-values with Phi(x) = y_j for every grid node y_j (Newton-refined)."""
        g = self.grid
        y = g.axis_points()
        x = y - self._u_at(y)  # first guess: inverse of id + u ~ id - u
        for _ in range(60):
            r = x + self._u_at(x) - y
            if np.max(np.abs(r)) < 1e-13 * max(1.0, g.L):
                break
            x = x - r / (1.0 + self._du_at(x))
        return x

    def phi_inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        g = self.grid
        ym = np.mod(y, g.L)
        shift = y - ym
        idx = ym / g.dx
        i0 = np.floor(idx).astype(int) % g.N
        i1 = (i0 + 1) % g.N
        w = idx - np.floor(idx)
        # table is monotone along the lift: unwrap the periodic jump
        t0 = self.inv_table[i0]
        t1 = self.inv_table[i1] + np.where(i1 == 0, g.L, 0.0)
        x = (1.0 - w) * t0 + w * t1
        # Newton polish against the exact interpolated Phi
        for _ in range(3):
            x = x - (x + self._u_at(x) - ym) / (1.0 + self._du_at(x))
        return x + shift

    def a(self, y):
        return self.lam * self._u_at(self.phi_inverse(y))

    def k(self, y, z):
        return self.kernel.eval(self.phi_inverse(y), z)

    def g(self, y, z):
        x = self.phi_inverse(y)
        return self._u_at(x + z) + z - self._u_at(x)

    def det_grad_phi(self, x):
        return 1.0 + self._du_at(x)


def build_zvonkin(kernel: Kernel, b: GridFunction, alpha: float, beta: float,
                  lam_start: float = 4.0, tol: float = 1e-9,
                  grad_bound: float = 0.5, lam_cap: float = 1e6) -> ZvonkinMap:
    """Solve lam u - L u - b.grad u = b, doubling lam until ||grad u|| <= 1/2."""
    if not (1.0 < alpha < 2.0):
        raise AdmissibilityError("the drift-removing map needs alpha in (1,2)")
    lo = -min((alpha - 1.0) / 2.0, kernel.theta)
    if not (lo < beta <= 0.0):
        raise AdmissibilityError(
            f"beta={beta:g} outside ({lo:g}, 0], the admissible window for the "
            "drift-removing map")
    lam = lam_start
    while lam <= lam_cap:
        try:
            sol = solve(lam, kernel, b, b, beta, tol=tol)
        except NotContracting:
            lam *= 2.0
            continue
        grad_sup = sol.u.gradient()[0].sup_norm()
        if grad_sup <= grad_bound:
            return ZvonkinMap(grid=b.grid, u=sol.u, lam=lam, kernel=kernel,
                              grad_sup=grad_sup)
        lam *= 2.0
    raise LambdaOverflow(f"gradient bound {grad_bound} not met below lam={lam_cap:g}")
