"""
Randomized synthetic snapshots and bistatic groundtruth geometry.
"""
import collections.abc
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .channel import (SPEED_OF_LIGHT, PathSet, SamplingGrid, Snapshot,
                      add_noise, synthesize_channel)
from .errors import ConfigError, DataError, GeometryError, OutOfRangeError
from .utils import snapshot_rng

__all__ = ('ScenarioSpec', 'sample_path_set', 'generate_snapshot',
           'generate_dataset', 'SyntheticDataset', 'bistatic_delay',
           'bistatic_angle', 'bistatic_doppler', 'Trajectory',
           'trajectory_groundtruth')

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]


def _check_interval(name, iv):
    lo, hi = iv
    if math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise ConfigError(f"{name} must be a non-empty interval, got {iv}")


@dataclass(frozen=True)
class ScenarioSpec:
    """Distribution of synthetic snapshots.

    Delays are drawn in units of 1/delta_f and Doppler shifts in units of
    1/delta_t. An SNR interval of (inf, inf) yields noiseless snapshots.
    """
    grid: SamplingGrid
    n_paths_range: Tuple[int, int] = (1, 10)
    tau_range: Interval = (0., 0.02)
    alpha_range: Interval = (-0.05, 0.05)
    magnitude_range: Interval = (0.001, 1.)
    phase_range: Interval = (0., 2*math.pi)
    snr_range_db: Interval = (0., 50.)

    def __post_init__(self):
        for name in ("n_paths_range", "tau_range", "alpha_range",
                     "magnitude_range", "phase_range", "snr_range_db"):
            iv = tuple(getattr(self, name))
            if len(iv) != 2:
                raise ConfigError(f"{name} must have two elements, got {iv}")
            object.__setattr__(self, name, iv)
            _check_interval(name, iv)
        lo, hi = self.n_paths_range
        if int(lo) != lo or int(hi) != hi or lo < 1:
            raise ConfigError(f"n_paths_range must hold integers >= 1, got {self.n_paths_range}")
        if self.tau_range[0] < 0 or self.tau_range[1] > 1:
            raise ConfigError(f"tau_range must lie in [0, 1], got {self.tau_range}")
        if self.alpha_range[0] < -0.5 or self.alpha_range[1] > 0.5:
            raise ConfigError(f"alpha_range must lie in [-0.5, 0.5], got {self.alpha_range}")
        if self.magnitude_range[0] < 0:
            raise ConfigError("magnitudes must be non-negative")
        lo, hi = self.snr_range_db
        if (math.isinf(lo) or math.isinf(hi)) and not (lo == hi == math.inf):
            raise ConfigError(f"snr_range_db must be finite or (inf, inf), got {self.snr_range_db}")

    def text_variant(self) -> "ScenarioSpec":
        "the wider path-count and SNR ranges: U[1, 30] paths, -30 to 50 dB"
        return replace(self, n_paths_range=(1, 30), snr_range_db=(-30., 50.))

    def to_dict(self) -> dict:
        d = {k: list(getattr(self, k)) for k in (
            "n_paths_range", "tau_range", "alpha_range", "magnitude_range",
            "phase_range", "snr_range_db")}
        d["grid"] = self.grid.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        grid = d.pop("grid")
        if not isinstance(grid, SamplingGrid):
            grid = SamplingGrid.from_dict(grid)
        return cls(grid=grid, **{k: tuple(v) for k, v in d.items()})


def sample_path_set(spec: ScenarioSpec, rng: np.random.Generator) -> PathSet:
    lo, hi = spec.n_paths_range
    P = int(rng.integers(lo, hi, endpoint=True))
    tau = rng.uniform(*spec.tau_range, size=P) / spec.grid.delta_f
    alpha = rng.uniform(*spec.alpha_range, size=P) / spec.grid.delta_t
    magnitude = rng.uniform(*spec.magnitude_range, size=P)
    phase = rng.uniform(*spec.phase_range, size=P)
    return PathSet.from_arrays(magnitude*np.exp(1j*phase), tau, alpha)


def _draw_snr(spec: ScenarioSpec, rng: np.random.Generator) -> float:
    lo, hi = spec.snr_range_db
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def generate_snapshot(spec: ScenarioSpec, master_seed: int, index: int) -> Snapshot:
    "snapshot `index` of the dataset seeded by `master_seed`"
    label = sample_path_set(spec, snapshot_rng(master_seed, index, "params"))
    snr_db = _draw_snr(spec, snapshot_rng(master_seed, index, "snr"))
    h = synthesize_channel(spec.grid, label)
    y, sigma2 = add_noise(h, snr_db, snapshot_rng(master_seed, index, "noise"))
    return Snapshot(spec.grid, y, label=label, noise_var=sigma2, snr_db=snr_db,
                    seed=(int(master_seed), int(index)))


class SyntheticDataset(collections.abc.Sequence):
    """Lazily generated, randomly accessible sequence of labeled snapshots.

    Element i only depends on (spec, master_seed, i).
    """
    def __init__(self, spec: ScenarioSpec, count: int, master_seed: int):
        if count < 1:
            raise ConfigError("count must be >= 1")
        self.spec = spec
        self.count = int(count)
        self.master_seed = int(master_seed)

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.count))]
        if i < 0:
            i += self.count
        if not 0 <= i < self.count:
            raise IndexError(i)
        return generate_snapshot(self.spec, self.master_seed, i)

    def materialize(self, progressbar=False) -> List[Snapshot]:
        indices = range(self.count)
        if progressbar:
            indices = tqdm(indices, desc="Generating", mininterval=2.0)
        return [self[i] for i in indices]


def generate_dataset(spec: ScenarioSpec, count: int, master_seed: int
                     ) -> SyntheticDataset:
    return SyntheticDataset(spec, count, master_seed)


def _as_points(*xs):
    return [np.asarray(x, dtype=np.float64) for x in xs]


def bistatic_delay(tx, rx, target) -> Union[float, np.ndarray]:
    "(|target - tx| + |target - rx|) / c. Broadcasts over leading axes."
    tx, rx, target = _as_points(tx, rx, target)
    r = np.linalg.norm(target - tx, axis=-1) + np.linalg.norm(target - rx, axis=-1)
    return r / SPEED_OF_LIGHT


def _unit_vectors(tx, rx, target):
    to_tx, to_rx = tx - target, rx - target
    r_tx = np.linalg.norm(to_tx, axis=-1, keepdims=True)
    r_rx = np.linalg.norm(to_rx, axis=-1, keepdims=True)
    if np.any(r_tx == 0) or np.any(r_rx == 0):
        raise GeometryError("target coincides with the transmitter or a receiver")
    return to_tx / r_tx, to_rx / r_rx


def bistatic_angle(tx, rx, target):
    "angle at the target between the directions to Tx and to Rx"
    tx, rx, target = _as_points(tx, rx, target)
    u_tx, u_rx = _unit_vectors(tx, rx, target)
    return np.arctan2(np.linalg.norm(np.cross(u_tx, u_rx), axis=-1),
                      np.sum(u_tx * u_rx, axis=-1))


def bistatic_doppler(tx, rx, target, velocity, carrier_hz: float):
    """Bistatic Doppler shift 2 v f_c / c cos(psi) cos(beta/2).

    beta is the bistatic angle and psi the angle between the velocity and the
    bisector of beta, which points from the target towards the nodes. A
    target closing in on the nodes has positive Doppler, i.e. the result is
    -(f_c/c) d(R_tx + R_rx)/dt. On the baseline (beta = pi) the bisector is
    undefined and the shift is zero.
    """
    if not np.all(np.isfinite(np.asarray(velocity, dtype=np.float64))):
        raise DataError("velocity must be finite")
    tx, rx, target, velocity = _as_points(tx, rx, target, velocity)
    u_tx, u_rx = _unit_vectors(tx, rx, target)
    beta = bistatic_angle(tx, rx, target)

    bisector = u_tx + u_rx
    b_norm = np.linalg.norm(bisector, axis=-1)
    speed = np.linalg.norm(velocity, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_psi = np.sum(velocity * bisector, axis=-1) / (speed * b_norm)
    cos_psi = np.where((speed > 0) & (b_norm > 1e-12), cos_psi, 0.)
    alpha = 2 * speed * carrier_hz / SPEED_OF_LIGHT * cos_psi * np.cos(beta/2)
    return alpha if np.ndim(alpha) else float(alpha)


@dataclass
class Trajectory:
    """Time-stamped target states seen by one Tx/Rx link.

    Args:
        tx, rx: node positions in meters
        times: (T,) strictly increasing seconds
        positions: (T, 3) meters
        velocities: (T, 3) m/s
    """
    tx: np.ndarray
    rx: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.tx, self.rx = _as_points(self.tx, self.rx)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=np.float64).reshape(-1, 3)
        if not (len(self.times) == len(self.positions) == len(self.velocities)):
            raise DataError("times, positions and velocities differ in length")
        if len(self.times) < 1:
            raise DataError("trajectory needs at least one sample")
        for name in ("tx", "rx", "times", "positions", "velocities"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"trajectory {name} must be finite")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("trajectory timestamps must be strictly increasing")

    @property
    def span(self) -> Tuple[float, float]:
        return (float(self.times[0]), float(self.times[-1]))

    def with_link(self, tx=None, rx=None) -> "Trajectory":
        return replace(self, tx=self.tx if tx is None else tx,
                       rx=self.rx if rx is None else rx)

    def state_at(self, times) -> Tuple[np.ndarray, np.ndarray]:
        "piecewise-linear position and velocity at `times`"
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        lo, hi = self.span
        outside = (times < lo) | (times > hi)
        if np.any(outside):
            raise OutOfRangeError(f"times {times[outside][:5]} outside the "
                                  f"trajectory span [{lo}, {hi}]")
        pos = np.stack([np.interp(times, self.times, self.positions[:, d])
                        for d in range(3)], axis=-1)
        vel = np.stack([np.interp(times, self.times, self.velocities[:, d])
                        for d in range(3)], axis=-1)
        return pos, vel

    @classmethod
    def straight_line(cls, tx, rx, start, velocity, t0: float, t1: float,
                      n_samples: int = 101) -> "Trajectory":
        "constant-velocity motion from `start` at t0 until t1"
        start, velocity = _as_points(start, velocity)
        times = np.linspace(t0, t1, n_samples)
        positions = start + np.outer(times - t0, velocity)
        return cls(tx, rx, times, positions, np.tile(velocity, (n_samples, 1)))

    @classmethod
    def from_csv(cls, path: Union[str, Path], tx, rx) -> "Trajectory":
        "CSV with columns t,x,y,z,vx,vy,vz in SI units"
        df = pd.read_csv(path)
        missing = {"t", "x", "y", "z", "vx", "vy", "vz"} - set(df.columns)
        if missing:
            raise DataError(f"trajectory file {path} lacks columns {sorted(missing)}")
        return cls(tx, rx, df["t"].to_numpy(), df[["x", "y", "z"]].to_numpy(),
                   df[["vx", "vy", "vz"]].to_numpy())

    def to_csv(self, path: Union[str, Path]):
        df = pd.DataFrame(np.column_stack([self.times, self.positions, self.velocities]),
                          columns=["t", "x", "y", "z", "vx", "vy", "vz"])
        df.to_csv(path, index=False)


def trajectory_groundtruth(traj: Trajectory, grid: SamplingGrid, snapshot_times
                           ) -> np.ndarray:
    """(tau, alpha) of the target for every snapshot.

    `snapshot_times` are the start times of the coherent processing intervals.

    Returns:
        (S, 2) array
    """
    pos, vel = traj.state_at(snapshot_times)
    tau = bistatic_delay(traj.tx, traj.rx, pos)
    alpha = bistatic_doppler(traj.tx, traj.rx, pos, vel, grid.carrier_hz)
    return np.stack([np.atleast_1d(tau), np.atleast_1d(alpha)], axis=-1)
