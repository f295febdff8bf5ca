"""
Measurement replica: one transmitter on a building, three distributed
receivers, a UAV flying an orbit and two vehicles on nearby roads, plus the
line-of-sight path and static reflections off the building.

Road 1 passes in front of the building, so its Doppler shift sweeps through
zero. Road 2 runs roughly perpendicular to the bistatic bisectors and its
Doppler shift stays within a few resolution cells of zero.
"""
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from ..channel import (SPEED_OF_LIGHT, PathSet, SamplingGrid, Snapshot, add_noise,
                       synthesize_channel)
from ..errors import ConfigError
from ..scenario import Trajectory, bistatic_delay, trajectory_groundtruth
from ..utils import snapshot_rng

__all__ = ('TX_POSITION', 'RX_POSITIONS', 'TRACK_NAMES', 'ReplicaConfig',
           'ReplicaLink', 'uav_trajectory', 'road_trajectories', 'replica_tracks',
           'clutter_points', 'simulate_link', 'simulate_replica')

logger = logging.getLogger(__name__)

TX_POSITION = (0., 0., 15.)
RX_POSITIONS = {
    "Rx 1": (60., -30., 1.5),
    "Rx 2": (40., 70., 1.5),
    "Rx 3": (-50., 40., 1.5),
}
TRACK_NAMES = ("UAV", "Road 1", "Road 2")

# spawn key of the clutter streams, far away from any snapshot index
_CLUTTER_KEY = 2**31


@dataclass(frozen=True)
class ReplicaConfig:
    """
    Args:
        grid: sampling grid of every snapshot
        n_snapshots: snapshots per receiver
        snapshot_spacing: seconds between the starts of consecutive snapshots
        snr_db: per-element SNR of every snapshot
        n_clutter: number of static scatterers on and around the building
        clutter_magnitude: range of the static scatterer magnitudes
        los_magnitude: magnitude of the direct path
        target_magnitude: magnitude of every moving target
        max_delay: detection gate in delay, seconds
        max_doppler: one-sided detection gate in Doppler, Hz
        uav_speed, uav_radius, uav_center: circular UAV orbit
        road1_speed, road2_speed: vehicle speeds in m/s
    """
    grid: SamplingGrid = field(default_factory=SamplingGrid.measurement_grid)
    n_snapshots: int = 100
    snapshot_spacing: float = 0.2
    snr_db: float = 20.
    n_clutter: int = 40
    clutter_magnitude: Tuple[float, float] = (0.2, 0.5)
    los_magnitude: float = 1.
    target_magnitude: float = 0.02
    max_delay: float = 1.5e-6
    max_doppler: float = 400.
    uav_speed: float = 6.
    uav_radius: float = 25.
    uav_center: Tuple[float, float, float] = (20., 20., 40.)
    road1_speed: float = 8.
    road2_speed: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "clutter_magnitude", tuple(self.clutter_magnitude))
        object.__setattr__(self, "uav_center", tuple(self.uav_center))
        if self.n_snapshots < 1:
            raise ConfigError("n_snapshots must be >= 1")
        if not self.snapshot_spacing > 0:
            raise ConfigError("snapshot_spacing must be positive")
        if self.n_clutter < 0:
            raise ConfigError("n_clutter must be non-negative")
        if not math.isfinite(self.snr_db):
            raise ConfigError("the replica needs a finite SNR")
        lo, hi = self.clutter_magnitude
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad clutter_magnitude {self.clutter_magnitude}")
        if not (self.target_magnitude > 0 and self.los_magnitude >= 0):
            raise ConfigError("magnitudes must be non-negative, targets positive")
        if self.uav_speed < 0 or self.road1_speed < 0 or self.road2_speed < 0:
            raise ConfigError("speeds must be non-negative")
        if not self.uav_radius > 0:
            raise ConfigError("uav_radius must be positive")
        # raises if the gate exceeds the unambiguous ranges
        self.gate()

    def gate(self) -> Tuple[float, float]:
        "detection gate (tau_max, alpha_max) in units of 1/delta_f and 1/delta_t"
        tau_max = self.max_delay * self.grid.delta_f
        alpha_max = self.max_doppler * self.grid.delta_t
        if not (0 < tau_max <= 1 and 0 < alpha_max <= 0.5):
            raise ConfigError(
                f"gate of {self.max_delay:g} s and {self.max_doppler:g} Hz exceeds "
                f"the unambiguous ranges of the grid ({self.grid.max_delay():g} s, "
                f"+-{self.grid.doppler_bandwidth()/2:g} Hz)")
        return tau_max, alpha_max

    def snapshot_times(self) -> np.ndarray:
        "start of the coherent processing interval of every snapshot"
        return self.snapshot_spacing * np.arange(self.n_snapshots)

    def duration(self) -> float:
        return self.snapshot_spacing * (self.n_snapshots - 1) + self.grid.cpi()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["clutter_magnitude"] = list(self.clutter_magnitude)
        d["uav_center"] = list(self.uav_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicaConfig":
        d = dict(d)
        if "grid" in d and not isinstance(d["grid"], SamplingGrid):
            d["grid"] = SamplingGrid.from_dict(d["grid"])
        return cls(**d)


@dataclass
class ReplicaLink:
    """Snapshots of one Tx/Rx link with the groundtruth of every track.

    `groundtruth[name]` is an (S, 2) array of (tau, alpha).
    """
    name: str
    rx: np.ndarray
    snapshots: List[Snapshot]
    times: np.ndarray
    groundtruth: Dict[str, np.ndarray]


def uav_trajectory(cfg: ReplicaConfig, tx, rx) -> Trajectory:
    "counter-clockwise orbit at constant height, sampled every 10 ms"
    t1 = cfg.duration()
    times = np.linspace(0., t1, max(2, int(math.ceil(t1 / 0.01)) + 1))
    omega = cfg.uav_speed / cfg.uav_radius
    phi = omega * times
    cx, cy, cz = cfg.uav_center
    positions = np.stack([cx + cfg.uav_radius*np.cos(phi),
                          cy + cfg.uav_radius*np.sin(phi),
                          np.full_like(phi, cz)], axis=-1)
    velocities = np.stack([-cfg.uav_speed*np.sin(phi), cfg.uav_speed*np.cos(phi),
                           np.zeros_like(phi)], axis=-1)
    return Trajectory(tx, rx, times, positions, velocities)


def road_trajectories(cfg: ReplicaConfig, tx, rx) -> Dict[str, Trajectory]:
    t1 = cfg.duration()
    # Road 1 runs along the front of the building, centered on it
    start1 = (-cfg.road1_speed*t1/2, -45., 1.)
    road1 = Trajectory.straight_line(tx, rx, start1, (cfg.road1_speed, 0., 0.), 0., t1)
    start2 = (110., -cfg.road2_speed*t1/2, 1.)
    road2 = Trajectory.straight_line(tx, rx, start2, (0., cfg.road2_speed, 0.), 0., t1)
    return {"Road 1": road1, "Road 2": road2}


def replica_tracks(cfg: ReplicaConfig, rx) -> Dict[str, Trajectory]:
    tracks = {"UAV": uav_trajectory(cfg, TX_POSITION, rx)}
    tracks.update(road_trajectories(cfg, TX_POSITION, rx))
    return tracks


def _clutter_rng(master_seed: int, link: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(_CLUTTER_KEY, int(link)))
    return np.random.default_rng(seq)


def clutter_points(cfg: ReplicaConfig, master_seed: int) -> np.ndarray:
    "(n_clutter, 3) static scatterers on the facade and roof around the transmitter"
    rng = _clutter_rng(master_seed, 0)
    lo = np.array([-15., -15., 0.])
    hi = np.array([15., 15., 20.])
    return lo + (hi - lo) * rng.uniform(size=(cfg.n_clutter, 3))


def _static_paths(cfg: ReplicaConfig, rx, points, rng) -> PathSet:
    tx = np.asarray(TX_POSITION)
    tau_los = float(np.linalg.norm(tx - rx)) / SPEED_OF_LIGHT
    taus = np.concatenate([[tau_los], np.atleast_1d(bistatic_delay(tx, rx, points))])
    magnitudes = np.concatenate([[cfg.los_magnitude],
                                 rng.uniform(*cfg.clutter_magnitude, size=len(points))])
    gammas = magnitudes * np.exp(-2j*np.pi*cfg.grid.carrier_hz*taus)
    return PathSet.from_arrays(gammas, taus, np.zeros(len(taus)))


def simulate_link(cfg: ReplicaConfig, master_seed: int, link: int,
                  progressbar: bool = False) -> ReplicaLink:
    """Snapshots of receiver number `link` (0-based, in `RX_POSITIONS` order).

    Snapshot s of the link has index link*n_snapshots + s in the noise streams
    of `master_seed`, so `Snapshot.reconstruct` reproduces it.
    """
    name = list(RX_POSITIONS)[link]
    rx = np.asarray(RX_POSITIONS[name], dtype=np.float64)
    times = cfg.snapshot_times()
    tracks = replica_tracks(cfg, rx)
    groundtruth = {track: trajectory_groundtruth(traj, cfg.grid, times)
                   for track, traj in tracks.items()}
    static = _static_paths(cfg, rx, clutter_points(cfg, master_seed),
                           _clutter_rng(master_seed, link + 1))

    indices = range(cfg.n_snapshots)
    if progressbar:
        indices = tqdm(indices, desc=f"Simulating {name}", mininterval=2.0)
    snapshots = []
    for s in indices:
        etas = np.stack([groundtruth[track][s] for track in TRACK_NAMES])
        gammas = cfg.target_magnitude * np.exp(-2j*np.pi*cfg.grid.carrier_hz*etas[:, 0])
        label = static + PathSet.from_arrays(gammas, etas[:, 0], etas[:, 1])
        index = link*cfg.n_snapshots + s
        h = synthesize_channel(cfg.grid, label)
        y, sigma2 = add_noise(h, cfg.snr_db, snapshot_rng(master_seed, index, "noise"))
        snapshots.append(Snapshot(cfg.grid, y, label=label, noise_var=sigma2,
                                  snr_db=cfg.snr_db, seed=(int(master_seed), index)))
    logger.info(f"{name}: {cfg.n_snapshots} snapshots with {len(static)} static paths")
    return ReplicaLink(name, rx, snapshots, times, groundtruth)


def simulate_replica(cfg: ReplicaConfig, master_seed: int,
                     progressbar: bool = False) -> List[ReplicaLink]:
    return [simulate_link(cfg, master_seed, link, progressbar)
            for link in range(len(RX_POSITIONS))]
