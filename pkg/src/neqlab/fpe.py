"""Finite-difference Fokker-Planck solver cross-checked against SDE ensembles.

dP/dt = -div(mu P) + laplacian(D P),  D(t) = diffusion(t)^2 / 2

The scheme is deliberately plain (first-order upwind advection, central
diffusion, explicit in time, flux form) so every update is auditable: the
module referees the stochastic code rather than competing with production
solvers. Mass that crosses the grid boundary is absorbed and tracked, so
interior mass plus leaked mass is conserved to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import erf, sqrt

import numpy as np

from .evaluate import jsd_probs
from .exceptions import GridCoverageError, LeakageError, StabilityError
from .nonequilibrium import SdeDescriptor
from .rng import as_generator


@dataclass
class GridDensity:
    """Cell-centered density on a uniform 1-D or 2-D grid."""

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray
    leaked_mass: float = 0.0
    clamped_mass: float = 0.0

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (1, 2) or self.values.ndim != len(self.lo):
            raise ValueError("values must be 1-D or 2-D and match lo/hi")
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.values.shape)

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.values.shape[axis]
        h = self.spacing[axis]
        return self.lo[axis] + (np.arange(n) + 0.5) * h

    def centers(self) -> np.ndarray:
        """All cell centers, shape (n_cells, ndim)."""
        if self.ndim == 1:
            return self.axis_centers(0)[:, None]
        gx, gy = np.meshgrid(self.axis_centers(0), self.axis_centers(1),
                             indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_measure)


def gaussian_density_1d(lo: float, hi: float, n_cells: int, mean: float,
                        std: float) -> GridDensity:
    """Unit-mass Gaussian initial condition (cell averages via the CDF)."""
    edges = np.linspace(lo, hi, n_cells + 1)
    cdf = 0.5 * (1.0 + np.array([erf((e - mean) / (std * sqrt(2))) for e in edges]))
    masses = np.diff(cdf)
    h = (hi - lo) / n_cells
    return GridDensity(np.array([lo]), np.array([hi]), masses / masses.sum() / h)


def _axis_fluxes(p, mu, d_coef, h, axis):
    """Upwind advective + central diffusive fluxes along one axis.

    Returns the face flux array (one extra entry along `axis`); outside the
    grid the density is 0 (absorbing)."""
    p = np.moveaxis(p, axis, 0)
    mu = np.moveaxis(mu, axis, 0)
    n = p.shape[0]
    flux = np.zeros((n + 1,) + p.shape[1:])
    # interior faces
    mu_face = 0.5 * (mu[:-1] + mu[1:])
    upwind = np.where(mu_face > 0, p[:-1], p[1:])
    flux[1:-1] = mu_face * upwind - d_coef * (p[1:] - p[:-1]) / h
    # boundary faces: only outflow advects; diffusion sees 0 outside
    flux[0] = np.minimum(mu[0], 0.0) * p[0] - d_coef * p[0] / h
    flux[-1] = np.maximum(mu[-1], 0.0) * p[-1] + d_coef * p[-1] / h
    return np.moveaxis(flux, 0, axis)


def fpe_step(density: GridDensity, sde: SdeDescriptor, t: float,
             dt_pde: float) -> GridDensity:
    """One explicit conservative step. Requires dt_pde <= h^2 / (4 D).

    Reverse-direction descriptors are integrated with their drift negated
    (the caller steps t downward). Negative values produced by the update are
    clamped to zero and the positive mass rescaled; the clamped magnitude
    accumulates on the returned density."""
    d_coef = sde.diffusion(t) ** 2 / 2.0
    h_min = float(np.min(density.spacing))
    if d_coef > 0 and dt_pde > h_min**2 / (4.0 * d_coef) * (1 + 1e-12):
        raise StabilityError(
            f"dt_pde={dt_pde:g} exceeds stability bound "
            f"{h_min**2 / (4 * d_coef):g} (h={h_min:g}, D={d_coef:g})"
        )
    mu = np.asarray(sde.drift(density.centers(), t), dtype=np.float64)
    if sde.direction == "reverse":
        mu = -mu
    p = density.values
    mu = mu.reshape(p.shape + (density.ndim,))

    new = p.copy()
    leaked = 0.0
    for axis in range(density.ndim):
        h = density.spacing[axis]
        flux = _axis_fluxes(p, mu[..., axis], d_coef, h, axis)
        new -= dt_pde / h * np.diff(flux, axis=axis)
        first = np.take(flux, 0, axis=axis)
        last = np.take(flux, flux.shape[axis] - 1, axis=axis)
        other = density.cell_measure / h  # measure of one boundary face
        leaked += dt_pde * float(np.sum(last) - np.sum(first)) * other

    clamp = 0.0
    if np.any(new < 0):
        neg = new < 0
        clamp = float(-new[neg].sum() * density.cell_measure)
        target = new.sum()
        new[neg] = 0.0
        pos_sum = new.sum()
        if pos_sum > 0 and target > 0:
            new *= target / pos_sum
    return replace(
        density,
        values=new,
        leaked_mass=density.leaked_mass + leaked,
        clamped_mass=density.clamped_mass + clamp,
    )


def evolve_density(density: GridDensity, sde: SdeDescriptor, t0: float,
                   t1: float, dt_pde: float,
                   max_leak_fraction: float = 1e-3) -> GridDensity:
    """Step the density from t0 to t1 (downward in t for reverse descriptors).

    Aborts with LeakageError once the accumulated boundary leakage exceeds
    max_leak_fraction of the initial mass."""
    span = abs(t1 - t0)
    sign = 1.0 if t1 >= t0 else -1.0
    if sde.direction == "reverse" and sign > 0 and span > 0:
        raise ValueError("reverse descriptors integrate from larger t to smaller")
    initial_mass = density.mass()
    n_full = int(span / dt_pde)
    rest = span - n_full * dt_pde
    t = t0
    for _ in range(n_full):
        density = fpe_step(density, sde, t, dt_pde)
        t += sign * dt_pde
        if density.leaked_mass > max_leak_fraction * initial_mass:
            raise LeakageError(
                f"leaked mass {density.leaked_mass:g} exceeds "
                f"{max_leak_fraction:g} of initial mass"
            )
    if rest > 1e-12 * max(span, 1.0):
        density = fpe_step(density, sde, t, rest)
    return density


def evolve_ensemble(points, sde: SdeDescriptor, t0: float, t1: float,
                    dt: float, rng) -> np.ndarray:
    """Euler-Maruyama integration of the descriptor for a particle ensemble."""
    gen = as_generator(rng)
    x = np.asarray(points, dtype=np.float64).copy()
    span = abs(t1 - t0)
    t_sign = 1.0 if t1 >= t0 else -1.0
    drift_sign = -1.0 if sde.direction == "reverse" else 1.0
    n_full = int(span / dt)
    rest = span - n_full * dt
    t = t0
    steps = [dt] * n_full + ([rest] if rest > 1e-12 * max(span, 1.0) else [])
    for h in steps:
        g = sde.diffusion(t)
        x += drift_sign * sde.drift(x, t) * h
        x += g * sqrt(h) * gen.standard_normal(x.shape)
        t += t_sign * h
    return x


def sample_from_density(density: GridDensity, n: int, rng) -> np.ndarray:
    """Draw n points from the grid density (categorical cells + jitter)."""
    gen = as_generator(rng)
    probs = (density.values * density.cell_measure).ravel()
    probs = probs / probs.sum()
    cells = gen.choice(len(probs), size=n, p=probs)
    centers = density.centers()
    jitter = (gen.uniform(-0.5, 0.5, size=(n, density.ndim))
              * density.spacing)
    return centers[cells] + jitter


def histogram_density(points, density: GridDensity) -> tuple[np.ndarray, int]:
    """Empirical density of points on the same cells; returns (density, n_out)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    shape = density.values.shape
    idx = np.floor((pts - density.lo) / density.spacing).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
    n_out = int(np.count_nonzero(~inside))
    idx = idx[inside]
    if density.ndim == 1:
        flat = idx[:, 0]
    else:
        flat = idx[:, 0] * shape[1] + idx[:, 1]
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    return counts / (len(pts) * density.cell_measure), n_out


def greens_function_check(sigma: float, t: float, n_particles: int, rng,
                          n_steps: int = 100) -> dict:
    """Pure Brownian motion must spread with variance sigma^2 * t.

    Simulates n_steps Euler increments in 1-D from x=0, then compares the
    sample variance against sigma^2 t (pass when the relative error is below
    5%) and reports the Kolmogorov-Smirnov distance to the Gaussian kernel."""
    if t <= 0:
        raise ValueError("t must be > 0")
    if n_particles < 10**4:
        raise ValueError("need at least 1e4 particles")
    gen = as_generator(rng)
    dt = t / n_steps
    x = np.zeros(n_particles)
    for _ in range(n_steps):
        x += sigma * sqrt(dt) * gen.standard_normal(n_particles)
    target = sigma**2 * t
    var = float(np.var(x))
    rel_err = abs(var - target) / target if target > 0 else abs(var)
    if target > 0:
        z = np.sort(x) / sqrt(target)
        cdf = 0.5 * (1.0 + np.array([erf(v / sqrt(2)) for v in z]))
        ecdf_hi = np.arange(1, n_particles + 1) / n_particles
        ks = float(
            max(np.max(ecdf_hi - cdf), np.max(cdf - (ecdf_hi - 1 / n_particles)))
        )
    else:
        ks = 0.0
    return {
        "check_name": "greens_function_variance",
        "parameters": {
            "sigma": sigma, "t": t, "n_particles": n_particles,
            "n_steps": n_steps, "sample_variance": var,
            "target_variance": target, "ks_statistic": ks,
        },
        "statistic": rel_err,
        "threshold": 0.05,
        "pass": bool(rel_err < 0.05),
    }


def independence_check(init_a, init_b, sde: SdeDescriptor, horizon: float,
                       grid_edges, rng) -> float:
    """Evolve two initial ensembles under the same forward descriptor with
    independent noise and return the JSD of their final histograms."""
    a = np.asarray(init_a, dtype=np.float64)
    b = np.asarray(init_b, dtype=np.float64)
    if len(a) < 10**4 or len(b) < 10**4:
        raise ValueError("both ensembles need at least 1e4 points")
    gen = as_generator(rng)
    dt = horizon / 100
    fa = evolve_ensemble(a, sde, 0.0, horizon, dt, gen)
    fb = evolve_ensemble(b, sde, 0.0, horizon, dt, gen)
    edges = grid_edges if isinstance(grid_edges, (tuple, list)) else (grid_edges,)
    for pts in (fa, fb):
        arr = pts if pts.ndim == 2 else pts[:, None]
        for d, e in enumerate(edges):
            if arr[:, d].min() < e[0] or arr[:, d].max() > e[-1]:
                raise GridCoverageError("evolved points fall outside the grid")
    ha, _ = np.histogramdd(fa if fa.ndim == 2 else fa[:, None], bins=edges)
    hb, _ = np.histogramdd(fb if fb.ndim == 2 else fb[:, None], bins=edges)
    return jsd_probs(ha / ha.sum(), hb / hb.sum())


def fpe_vs_monte_carlo(sde: SdeDescriptor, init: GridDensity, horizon: float,
                       n_particles: int, rng, dt_pde: float | None = None,
                       dt_sde: float | None = None) -> float:
    """L1 distance between the solver density and an EM ensemble at the
    horizon (both started from the same initial grid density)."""
    gen = as_generator(rng)
    reverse = sde.direction == "reverse"
    t0, t1 = (horizon, 0.0) if reverse else (0.0, horizon)
    if dt_pde is None:
        ts = np.linspace(t0, t1, 101)
        d_max = max(sde.diffusion(float(t)) ** 2 / 2.0 for t in ts)
        h_min = float(np.min(init.spacing))
        bound = h_min**2 / (4.0 * d_max) if d_max > 0 else horizon / 200
        mu_max = max(
            float(np.max(np.abs(sde.drift(init.centers(), float(t)))))
            for t in (t0, t1)
        )
        cfl = h_min / (2.0 * mu_max) if mu_max > 0 else np.inf
        dt_pde = min(0.5 * bound, 0.5 * cfl, horizon / 10)
    if dt_sde is None:
        dt_sde = horizon / 100
    points = sample_from_density(init, n_particles, gen)
    final = evolve_density(init, sde, t0, t1, dt_pde)
    ensemble = evolve_ensemble(points, sde, t0, t1, dt_sde, gen)
    mc_density, _ = histogram_density(ensemble, init)
    return float(np.sum(np.abs(final.values - mc_density)) * init.cell_measure)
