"""Equilibrium baseline pipeline.

Per-time-slice empirical densities are distilled into energies through the
Boltzmann relation E = -(1/beta) * ln(p) (offset so the lowest occupied bin
sits at 0), a small time-conditioned network is regressed onto the occupied
bins, and samples are drawn by categorical Boltzmann sampling over grid cells
with uniform in-cell jitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .evaluate import Grid2D, bin_counts
from .exceptions import DivergenceError, EmptySliceError, NeqlabError
from .rng import as_generator


class AllWeightsZeroError(NeqlabError):
    """Every Boltzmann weight underflowed to zero (energy overflow)."""


@dataclass
class EnergySliceTable:
    """Energies on occupied bins per time slice; NaN marks unoccupied bins."""

    grid: Grid2D
    time_slices: np.ndarray  # (n_slices,) window centers
    energies: np.ndarray  # (n_slices, nx, ny), NaN where unoccupied
    occupancy: np.ndarray  # (n_slices, nx, ny) int counts

    def __post_init__(self):
        self.time_slices = np.asarray(self.time_slices, dtype=np.float64)
        self.energies = np.asarray(self.energies, dtype=np.float64)
        self.occupancy = np.asarray(self.occupancy, dtype=np.int64)
        expected = (len(self.time_slices),) + self.grid.bins
        if self.energies.shape != expected or self.occupancy.shape != expected:
            raise ValueError("table arrays do not match grid/slice shapes")
        occ = self.occupancy > 0
        if not np.all(np.isfinite(self.energies[occ])):
            raise ValueError("non-finite energy on an occupied bin")
        for k in range(len(self.time_slices)):
            mk = occ[k]
            if np.any(mk) and abs(self.energies[k][mk].min()) > 1e-12:
                raise ValueError(f"slice {k} energies are not offset to min 0")


def distill_energy(train, grid: Grid2D, slice_width: float) -> EnergySliceTable:
    """Pool frames into windows of slice_width and convert bin frequencies to
    energies: E = -(1/beta) * ln(count/total), shifted so min occupied E = 0."""
    cfg = train.config
    if slice_width < cfg.dt:
        raise ValueError("slice_width must be >= dt")
    n_slices = max(1, int(round(cfg.total_time / slice_width)))
    slice_idx = np.minimum(
        (train.times / slice_width).astype(np.int64), n_slices - 1
    )
    centers = (np.arange(n_slices) + 0.5) * slice_width
    energies = np.full((n_slices,) + grid.bins, np.nan)
    occupancy = np.zeros((n_slices,) + grid.bins, dtype=np.int64)
    for k in range(n_slices):
        frames = np.nonzero(slice_idx == k)[0]
        if len(frames) == 0:
            raise EmptySliceError(f"no frames in slice {k} (width {slice_width})")
        points = train.states[:, frames, :].reshape(-1, 2)
        counts, _ = bin_counts(points, grid)
        occupancy[k] = counts
        occ = counts > 0
        e = -np.log(counts[occ] / counts.sum()) / cfg.beta
        e -= e.min()
        energies[k][occ] = e
    return EnergySliceTable(grid, centers, energies, occupancy)


@dataclass
class EnergyFieldModel:
    """Trained time-conditioned energy field: net input (t/t_scale, x, y)."""

    net: nn.DenseNet
    t_scale: float
    grid: Grid2D


def _table_dataset(table: EnergySliceTable, t_scale: float):
    centers = table.grid.centers()  # (nx*ny, 2)
    inputs, targets = [], []
    for k, tc in enumerate(table.time_slices):
        occ = (table.occupancy[k] > 0).ravel()
        if not np.any(occ):
            continue
        pts = centers[occ]
        col = np.full((len(pts), 1), tc / t_scale)
        inputs.append(np.hstack([col, pts]))
        targets.append(table.energies[k].ravel()[occ])
    if not inputs:
        raise ValueError("table has no occupied bins to fit")
    return np.vstack(inputs), np.concatenate(targets)


def train_energy_field(table: EnergySliceTable, net: nn.DenseNet, rng,
                       steps: int = 15000, batch: int = 256,
                       learning_rate: float = 1e-3,
                       t_scale: float | None = None):
    """Minimize MSE between net(t, x, y) and the occupied-bin energies.

    Returns (EnergyFieldModel, loss_history)."""
    if net.layer_sizes[0] != 3 or net.layer_sizes[-1] != 1:
        raise ValueError("energy field net must map 3 inputs to 1 output")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if t_scale is None:
        width = table.time_slices[1] - table.time_slices[0] if len(
            table.time_slices) > 1 else table.time_slices[0] * 2
        t_scale = float(table.time_slices[-1] + width / 2)
    gen = as_generator(rng)
    inputs, targets = _table_dataset(table, t_scale)
    n = len(inputs)
    state = nn.init_optimizer_state(net, learning_rate=learning_rate)
    history = np.empty(steps)
    for step in range(steps):
        idx = gen.integers(0, n, size=min(batch, n))
        xb, yb = inputs[idx], targets[idx]
        pred, cache = nn._forward_cache(net, xb)
        resid = pred[:, 0] - yb
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise DivergenceError(f"energy-field loss diverged at step {step}")
        cot = (2.0 * resid / len(xb))[:, None]
        grads, _ = nn._backward_cache(net, cache, cot)
        nn.optimizer_step(net, grads, state)
        history[step] = loss
    return EnergyFieldModel(net, float(t_scale), table.grid), history


def boltzmann_sample(net: nn.DenseNet, beta: float, t: float, grid: Grid2D,
                     n: int, rng, t_scale: float = 1.0) -> np.ndarray:
    """Draw n points with cell probabilities proportional to exp(-beta * E).

    E is the net evaluated at cell centers at time t; the minimum energy is
    subtracted before exponentiation so weights cannot all underflow. Each
    drawn cell gets an independent uniform position within the cell."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = as_generator(rng)
    centers = grid.centers()
    cols = np.hstack([np.full((len(centers), 1), t / t_scale), centers])
    energy = nn.forward(net, cols)[:, 0]
    if not np.all(np.isfinite(energy)):
        raise AllWeightsZeroError("non-finite energies from the field")
    weights = np.exp(-beta * (energy - energy.min()))
    z = weights.sum()
    if not np.isfinite(z) or z <= 0:
        raise AllWeightsZeroError("Boltzmann weights sum to zero")
    probs = weights / z
    cells = gen.choice(len(centers), size=n, p=probs)
    wx, wy = grid.widths
    jitter = gen.uniform(-0.5, 0.5, size=(n, 2)) * np.array([wx, wy])
    return centers[cells] + jitter


def cell_probabilities(energy, beta: float) -> np.ndarray:
    """Normalized Boltzmann weights for a flat array of energies."""
    e = np.asarray(energy, dtype=np.float64)
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def save_table(table: EnergySliceTable, path) -> None:
    doc = {
        "grid": table.grid.to_dict(),
        "time_slices": table.time_slices.tolist(),
        "energies": [
            [[None if not np.isfinite(v) else v for v in row] for row in sl]
            for sl in table.energies
        ],
        "occupancy": table.occupancy.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_table(path) -> EnergySliceTable:
    with open(path) as fh:
        doc = json.load(fh)
    energies = np.array(
        [[[np.nan if v is None else v for v in row] for row in sl]
         for sl in doc["energies"]],
        dtype=np.float64,
    )
    return EnergySliceTable(
        Grid2D.from_dict(doc["grid"]),
        np.array(doc["time_slices"]),
        energies,
        np.array(doc["occupancy"], dtype=np.int64),
    )


def save_energy_model(model: EnergyFieldModel, path) -> None:
    nn.save_checkpoint(
        model.net, path,
        extra={"t_scale": model.t_scale, "grid": model.grid.to_dict()},
    )


def load_energy_model(path) -> EnergyFieldModel:
    net, _, doc = nn.load_checkpoint(path)
    return EnergyFieldModel(net, doc["t_scale"], Grid2D.from_dict(doc["grid"]))
