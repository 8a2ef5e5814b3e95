"""Normalized 2-D histograms, Jensen-Shannon divergence, and the
time-resolved generation-error curve that compares the two pipelines.

All divergences use the natural logarithm, so jsd is bounded by ln 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError, NeqlabError

LN2 = float(np.log(2.0))


class NoTestFramesError(NeqlabError):
    """No reference frames fall near a requested evaluation time."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular binning: lo/hi per axis, bins per axis."""

    lo: tuple[float, float] = (-1.2, -1.2)
    hi: tuple[float, float] = (1.2, 1.2)
    bins: tuple[int, int] = (50, 50)

    def __post_init__(self):
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("grid lo must be < hi per axis")
        if any(b < 1 for b in self.bins):
            raise ValueError("grid needs at least one bin per axis")

    @property
    def widths(self) -> tuple[float, float]:
        return tuple((h - l) / b for l, h, b in zip(self.lo, self.hi, self.bins))

    @property
    def cell_area(self) -> float:
        wx, wy = self.widths
        return wx * wy

    def centers(self) -> np.ndarray:
        """Cell centers as an (nx*ny, 2) array, x-major."""
        wx, wy = self.widths
        cx = self.lo[0] + (np.arange(self.bins[0]) + 0.5) * wx
        cy = self.lo[1] + (np.arange(self.bins[1]) + 0.5) * wy
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)

    def bin_indices(self, points) -> tuple[np.ndarray, np.ndarray, int]:
        """Map points to (ix, iy), clamping out-of-range points to edge bins.

        Returns (ix, iy, n_clamped)."""
        pts = np.asarray(points, dtype=np.float64)
        wx, wy = self.widths
        ix = np.floor((pts[:, 0] - self.lo[0]) / wx).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.lo[1]) / wy).astype(np.int64)
        clamped = int(
            np.count_nonzero(
                (ix < 0) | (ix >= self.bins[0]) | (iy < 0) | (iy >= self.bins[1])
            )
        )
        np.clip(ix, 0, self.bins[0] - 1, out=ix)
        np.clip(iy, 0, self.bins[1] - 1, out=iy)
        return ix, iy, clamped

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "bins": list(self.bins)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid2D":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["bins"]))


@dataclass
class Histogram2D:
    grid: Grid2D
    probs: np.ndarray  # (nx, ny), sums to 1
    total_count: int
    n_clamped: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != self.grid.bins:
            raise ValueError("probs shape does not match grid")
        if np.any(self.probs < 0):
            raise ValueError("negative probability mass")
        if self.total_count > 0 and abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must sum to 1")


def bin_counts(points, grid: Grid2D) -> tuple[np.ndarray, int]:
    """Integer counts per cell plus how many points were clamped to edges."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("no points to histogram")
    ix, iy, clamped = grid.bin_indices(pts)
    flat = np.bincount(ix * grid.bins[1] + iy, minlength=grid.bins[0] * grid.bins[1])
    return flat.reshape(grid.bins), clamped


def histogram(points, grid: Grid2D) -> Histogram2D:
    counts, clamped = bin_counts(points, grid)
    total = int(counts.sum())
    return Histogram2D(grid, counts / total, total, clamped)


def jsd_probs(p, q) -> float:
    """JSD between two probability arrays of identical shape, in nats.

    0*ln 0 is treated as 0. Symmetric by construction, 0 iff p == q,
    and at most ln 2."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise GridMismatchError("probability arrays differ in shape")
    m = 0.5 * (p + q)
    mp = p > 0
    mq = q > 0
    kl_pm = float(np.sum(p[mp] * np.log(p[mp] / m[mp])))
    kl_qm = float(np.sum(q[mq] * np.log(q[mq] / m[mq])))
    return 0.5 * kl_pm + 0.5 * kl_qm


def jsd(p: Histogram2D, q: Histogram2D) -> float:
    if p.grid != q.grid:
        raise GridMismatchError(f"grids differ: {p.grid} vs {q.grid}")
    return jsd_probs(p.probs, q.probs)


@dataclass
class JsdCurve:
    """Per-time JSD of each pipeline against the held-out reference frames."""

    times: np.ndarray
    jsd_eq: np.ndarray
    jsd_noneq: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.jsd_eq = np.asarray(self.jsd_eq, dtype=np.float64)
        self.jsd_noneq = np.asarray(self.jsd_noneq, dtype=np.float64)
        if not (len(self.times) == len(self.jsd_eq) == len(self.jsd_noneq)):
            raise ValueError("curve columns differ in length")
        for col in (self.jsd_eq, self.jsd_noneq):
            if np.any(col < 0) or np.any(col > LN2 + 1e-12):
                raise ValueError("JSD values outside [0, ln 2]")


def default_eval_times(n: int = 40, lo: float = 0.5, hi: float = 19.5) -> np.ndarray:
    return np.linspace(lo, hi, n)


def reference_frames(test, t: float, slice_width: float) -> np.ndarray:
    """Pool test-set frames with |t_frame - t| <= slice_width / 2."""
    mask = np.abs(test.times - t) <= slice_width / 2 + 1e-12
    if not np.any(mask):
        raise NoTestFramesError(f"no test frames within {slice_width / 2} of t={t}")
    return test.states[:, mask, :].reshape(-1, 2)


def jsd_curve(test, sampler, grid: Grid2D, eval_times, n_per_time: int,
              slice_width: float = 0.1) -> np.ndarray:
    """One comparison column: for each time, JSD between the reference
    histogram (pooled test frames) and n_per_time generated samples.

    sampler is a callable (t, n) -> (n, 2) points."""
    eval_times = np.asarray(eval_times, dtype=np.float64)
    out = np.empty(len(eval_times))
    for j, t in enumerate(eval_times):
        ref = histogram(reference_frames(test, t, slice_width), grid)
        gen = histogram(sampler(float(t), n_per_time), grid)
        out[j] = jsd(ref, gen)
    return out
