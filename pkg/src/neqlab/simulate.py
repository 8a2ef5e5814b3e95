"""Overdamped Langevin simulation with Euler-Maruyama.

dX = -grad V(X, t) dt + sqrt(2/beta) dW

Each trajectory owns a counter-based RNG stream keyed by its index, so an
ensemble is reproducible bit-for-bit regardless of how trajectories are
scheduled across workers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from multiprocessing import Pool

import numpy as np

from .exceptions import DivergenceError
from .potential import SystemConfig, potential_gradient
from .rng import RngStream

DIVERGENCE_BOUND = 10.0
REFLECT_RADIUS = 1e-6

TRAJ_MAGIC = b"NQTRAJ1\0"


@dataclass
class TrajectorySet:
    """Ensemble of time-stamped 2-D paths: states[(traj, step)] = (x, y)."""

    config: SystemConfig
    states: np.ndarray  # (n_traj, n_steps + 1, 2) float64
    times: np.ndarray  # (n_steps + 1,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        n_steps = self.n_steps
        if self.states.shape != (self.config.n_traj, n_steps + 1, 2):
            raise ValueError(
                f"states shape {self.states.shape} != "
                f"({self.config.n_traj}, {n_steps + 1}, 2)"
            )
        if self.times.shape != (n_steps + 1,):
            raise ValueError("times length does not match step count")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite state in trajectory set")
        spacing = np.diff(self.times)
        if len(spacing) and (
            np.any(spacing <= 0) or np.max(np.abs(spacing - self.config.dt)) > 1e-12
        ):
            raise ValueError("times must increase uniformly by dt")

    @property
    def n_steps(self) -> int:
        return self.config.n_steps

    @property
    def n_traj(self) -> int:
        return self.config.n_traj


def em_step(cfg: SystemConfig, t: float, p, noise, dt: float | None = None,
            grad_fn=None):
    """One Euler-Maruyama step: p' = p - grad V(t, p)*dt + sqrt(2*dt/beta)*noise.

    Points entering r < 1e-6 are reflected radially back to r = 1e-6. Raises
    DivergenceError when any coordinate of p' leaves [-10, 10].
    """
    p = np.asarray(p, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if np.any(np.abs(p) > DIVERGENCE_BOUND):
        raise DivergenceError("input point outside the extended domain")
    if not np.all(np.isfinite(noise)):
        raise DivergenceError("non-finite noise")
    if dt is None:
        dt = cfg.dt
    if dt == 0:
        return p.copy()
    grad = potential_gradient(cfg, t, p) if grad_fn is None else grad_fn(t, p)
    new = p - grad * dt + np.sqrt(2.0 * dt / cfg.beta) * noise

    r = np.hypot(new[..., 0], new[..., 1])
    tiny = r < REFLECT_RADIUS
    if np.any(tiny):
        new = _reflect_to_radius(new, r, tiny)
    if np.any(np.abs(new) > DIVERGENCE_BOUND):
        raise DivergenceError("step left the extended domain (unstable step size?)")
    return new


def _reflect_to_radius(points, r, mask):
    points = points.copy()
    flat = points.reshape(-1, 2)
    rf = r.reshape(-1)
    mf = mask.reshape(-1)
    for i in np.nonzero(mf)[0]:
        if rf[i] == 0.0:
            flat[i] = (REFLECT_RADIUS, 0.0)
        else:
            flat[i] *= REFLECT_RADIUS / rf[i]
    return flat.reshape(points.shape)


def _simulate_block(cfg: SystemConfig, traj_indices, t_freeze):
    """Simulate the given trajectory indices; returns (len(idx), n_steps+1, 2)."""
    n_steps = cfg.n_steps
    idx = np.asarray(traj_indices)
    n = len(idx)
    x0 = np.empty((n, 2))
    noise = np.empty((n, n_steps, 2))
    for j, i in enumerate(idx):
        gen = RngStream(cfg.seed, int(i)).generator()
        x0[j] = gen.uniform(cfg.domain_lo, cfg.domain_hi, size=2)
        noise[j] = gen.standard_normal((n_steps, 2))

    states = np.empty((n, n_steps + 1, 2))
    states[:, 0] = x0
    p = x0
    for k in range(n_steps):
        t = k * cfg.dt if t_freeze is None else t_freeze
        try:
            p = em_step(cfg, t, p, noise[:, k])
        except DivergenceError as err:
            bad = _first_bad(cfg, t, p, noise[:, k])
            raise DivergenceError(
                f"trajectory {idx[bad]} diverged at step {k + 1}",
                trajectory=int(idx[bad]),
                step=k + 1,
            ) from err
        states[:, k + 1] = p
    return states


def _first_bad(cfg, t, p, noise):
    grad = potential_gradient(cfg, t, p)
    new = p - grad * cfg.dt + np.sqrt(2.0 * cfg.dt / cfg.beta) * noise
    bad = np.nonzero(np.any(np.abs(new) > DIVERGENCE_BOUND, axis=-1))[0]
    return int(bad[0]) if len(bad) else 0


def _worker(args):
    cfg_dict, indices, t_freeze = args
    return _simulate_block(SystemConfig.from_dict(cfg_dict), indices, t_freeze)


def simulate_ensemble(cfg: SystemConfig, t_freeze: float | None = None,
                      workers: int = 1) -> TrajectorySet:
    """Simulate cfg.n_traj independent trajectories.

    Initial positions are uniform over [domain_lo, domain_hi]^2, drawn from the
    stream with stream_id = trajectory index, which then supplies that path's
    Wiener increments. When t_freeze is set, the potential is held at that
    time. Output is identical for any worker count.
    """
    from dataclasses import asdict

    n_steps = cfg.n_steps
    times = np.arange(n_steps + 1) * cfg.dt
    indices = np.arange(cfg.n_traj)
    if workers <= 1 or cfg.n_traj < 2 * workers:
        states = _simulate_block(cfg, indices, t_freeze)
    else:
        chunks = np.array_split(indices, workers)
        with Pool(workers) as pool:
            blocks = pool.map(
                _worker, [(asdict(cfg), c, t_freeze) for c in chunks]
            )
        states = np.concatenate(blocks, axis=0)
    return TrajectorySet(config=cfg, states=states, times=times)


def split_train_test(ts: TrajectorySet) -> tuple[TrajectorySet, TrajectorySet]:
    """Split by trajectory-index parity: even -> train, odd -> test."""
    if ts.n_traj % 2 != 0:
        raise ValueError(f"trajectory count {ts.n_traj} is odd; cannot split")
    half_cfg = replace(ts.config, n_traj=ts.n_traj // 2)
    train = TrajectorySet(half_cfg, ts.states[0::2].copy(), ts.times.copy())
    test = TrajectorySet(half_cfg, ts.states[1::2].copy(), ts.times.copy())
    return train, test


def save_trajectories_csv(ts: TrajectorySet, path) -> None:
    """Write `traj_id,step,t,x,y` rows in ascending (traj_id, step) order."""
    n_steps = ts.n_steps
    with open(path, "w") as fh:
        fh.write("traj_id,step,t,x,y\n")
        for i in range(ts.n_traj):
            traj = ts.states[i]
            rows = [
                f"{i},{k},{ts.times[k]:.17g},{traj[k, 0]:.17g},{traj[k, 1]:.17g}"
                for k in range(n_steps + 1)
            ]
            fh.write("\n".join(rows))
            fh.write("\n")


def load_trajectories_csv(path, cfg: SystemConfig) -> TrajectorySet:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    n_steps = cfg.n_steps
    if data.shape[0] != cfg.n_traj * (n_steps + 1):
        raise ValueError("row count does not match config")
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order]
    states = data[:, 3:5].reshape(cfg.n_traj, n_steps + 1, 2)
    times = data[: n_steps + 1, 2]
    return TrajectorySet(config=cfg, states=states, times=times)


def save_trajectories_bin(ts: TrajectorySet, path, float32: bool = False) -> None:
    """Binary container: magic, length-prefixed header JSON, then the raw
    little-endian state array in (trajectory, step, coordinate) order."""
    header = {
        "config": json.loads(ts.config.to_json()),
        "dtype": "float32" if float32 else "float64",
    }
    blob = json.dumps(header).encode()
    arr = ts.states.astype("<f4" if float32 else "<f8")
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes())


def load_trajectories_bin(path) -> TrajectorySet:
    with open(path, "rb") as fh:
        magic = fh.read(len(TRAJ_MAGIC))
        if magic != TRAJ_MAGIC:
            raise ValueError(f"bad magic bytes {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        cfg = SystemConfig.from_dict(header["config"])
        dtype = "<f4" if header["dtype"] == "float32" else "<f8"
        raw = np.frombuffer(fh.read(), dtype=dtype)
    states = raw.reshape(cfg.n_traj, cfg.n_steps + 1, 2).astype(np.float64)
    times = np.arange(cfg.n_steps + 1) * cfg.dt
    return TrajectorySet(config=cfg, states=states, times=times)
