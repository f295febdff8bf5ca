"""
Signal core: sampling grid, path parameters, forward channel model, noise
injection and least-squares amplitude recovery.

The channel estimate of a snapshot is

    H[k, l] = sum_p gamma_p exp(-2j pi f_k tau_p) exp(+2j pi t_l alpha_p)

with f_k = f_start + k delta_f and t_l = t_start + l delta_t. Every path
contributes a rank-one atom, the outer product of a frequency steering vector
and a time steering vector, which the functions here exploit.
"""
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.constants
import scipy.linalg

from .errors import (ConfigError, DataError, DegenerateSignalError,
                     RankDeficiencyError)
from .utils import snapshot_rng

__all__ = ('SPEED_OF_LIGHT', 'SamplingGrid', 'PathParams', 'PathSet',
           'Snapshot', 'freq_atoms', 'time_atoms', 'synthesize_channel',
           'slow_time_gain', 'add_noise', 'ls_amplitudes', 'GRAM_COND_MAX',
           'ATOM_GAIN_MIN')

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = scipy.constants.c

# Largest admissible condition number of the least-squares Gram matrix
GRAM_COND_MAX = 1. / math.sqrt(np.finfo(np.float64).eps)
# Smallest slow_time_gain of an atom that survives the clutter filter
ATOM_GAIN_MIN = 1e-9


@dataclass(frozen=True)
class SamplingGrid:
    """Frequency/time sampling of one snapshot.

    Args:
        n_freq (int): number of frequency samples N_f
        n_time (int): number of time samples N_t
        delta_f (float): subcarrier spacing in Hz
        delta_t (float): snapshot sampling interval in seconds
        f_start (float): first frequency in Hz. `None` means -B/2
        t_start (float): first time sample in seconds
        carrier_hz (float): carrier frequency, only used for geometry
    """
    n_freq: int
    n_time: int
    delta_f: float
    delta_t: float
    f_start: Optional[float] = None
    t_start: float = 0.
    carrier_hz: float = 3.75e9

    def __post_init__(self):
        if int(self.n_freq) != self.n_freq or self.n_freq < 1:
            raise ConfigError(f"n_freq must be a positive integer, got {self.n_freq}")
        if int(self.n_time) != self.n_time or self.n_time < 1:
            raise ConfigError(f"n_time must be a positive integer, got {self.n_time}")
        for name in ("delta_f", "delta_t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        object.__setattr__(self, "n_freq", int(self.n_freq))
        object.__setattr__(self, "n_time", int(self.n_time))
        if self.f_start is None:
            object.__setattr__(self, "f_start", -self.bandwidth()/2)
        if not (math.isfinite(self.f_start) and math.isfinite(self.t_start)
                and math.isfinite(self.carrier_hz)):
            raise ConfigError("grid offsets and carrier must be finite")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_freq, self.n_time)

    def bandwidth(self) -> float:
        return self.n_freq * self.delta_f

    def cpi(self) -> float:
        "coherent processing interval"
        return self.n_time * self.delta_t

    def freq_point(self, k):
        return self.f_start + k*self.delta_f

    def time_point(self, l):
        return self.t_start + l*self.delta_t

    def freq_points(self) -> np.ndarray:
        return self.freq_point(np.arange(self.n_freq, dtype=np.float64))

    def time_points(self) -> np.ndarray:
        return self.time_point(np.arange(self.n_time, dtype=np.float64))

    def max_delay(self) -> float:
        "unambiguous delay range"
        return 1. / self.delta_f

    def doppler_bandwidth(self) -> float:
        "unambiguous (two-sided) Doppler range"
        return 1. / self.delta_t

    def delay_resolution(self) -> float:
        return 1. / self.bandwidth()

    def doppler_resolution(self) -> float:
        return 1. / self.cpi()

    def max_velocity(self) -> float:
        "largest monostatic radial velocity that does not alias in Doppler"
        return SPEED_OF_LIGHT / (2 * self.carrier_hz * self.delta_t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingGrid":
        return cls(**d)

    @classmethod
    def measurement_grid(cls) -> "SamplingGrid":
        "80 MHz at 3.75 GHz, 100 channel estimates every 320 us"
        return cls(n_freq=1280, n_time=100, delta_f=62.5e3, delta_t=320e-6,
                   carrier_hz=3.75e9)


@dataclass(frozen=True)
class PathParams:
    gamma: complex
    tau: float
    alpha: float

    def eta(self) -> Tuple[float, float]:
        return (self.tau, self.alpha)

    def is_clutter(self) -> bool:
        return self.alpha == 0

    def is_target(self) -> bool:
        return not self.is_clutter()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.gamma) and math.isfinite(self.tau)
                    and math.isfinite(self.alpha))


@dataclass
class PathSet:
    paths: List[PathParams] = field(default_factory=list)

    @classmethod
    def from_arrays(cls, gammas, taus, alphas) -> "PathSet":
        gammas, taus, alphas = np.broadcast_arrays(
            np.asarray(gammas, dtype=np.complex128),
            np.asarray(taus, dtype=np.float64),
            np.asarray(alphas, dtype=np.float64))
        return cls([PathParams(complex(g), float(tau), float(a))
                    for g, tau, a in zip(gammas, taus, alphas)])

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]

    def __add__(self, other: "PathSet") -> "PathSet":
        return PathSet(list(self.paths) + list(other.paths))

    def gammas(self) -> np.ndarray:
        return np.array([p.gamma for p in self.paths], dtype=np.complex128)

    def taus(self) -> np.ndarray:
        return np.array([p.tau for p in self.paths], dtype=np.float64)

    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.paths], dtype=np.float64)

    def etas(self) -> np.ndarray:
        "(P, 2) array of (tau, alpha)"
        return np.stack([self.taus(), self.alphas()], axis=-1).reshape(-1, 2)

    def targets(self) -> "PathSet":
        return PathSet([p for p in self.paths if p.is_target()])

    def clutter(self) -> "PathSet":
        return PathSet([p for p in self.paths if p.is_clutter()])

    def to_records(self) -> List[List[float]]:
        "rows (Re gamma, Im gamma, tau, alpha)"
        return [[p.gamma.real, p.gamma.imag, p.tau, p.alpha] for p in self.paths]

    @classmethod
    def from_records(cls, records: Iterable[Sequence[float]]) -> "PathSet":
        return cls([PathParams(complex(re, im), float(tau), float(alpha))
                    for re, im, tau, alpha in records])


@dataclass
class Snapshot:
    """One channel-estimate observation.

    `seed` is the pair (master_seed, index) whose noise stream produced `y`;
    together with `label` and `snr_db` it is enough to rebuild `y`.
    """
    grid: SamplingGrid
    y: np.ndarray
    label: Optional[PathSet] = None
    noise_var: Optional[float] = None
    snr_db: Optional[float] = None
    seed: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.shape != self.grid.shape:
            raise DataError(f"observation shape {self.y.shape} does not match "
                            f"grid shape {self.grid.shape}")

    def reconstruct(self) -> np.ndarray:
        if self.label is None or self.snr_db is None or self.seed is None:
            raise DataError("snapshot lacks the label, SNR or seed needed to "
                            "reconstruct it")
        h = synthesize_channel(self.grid, self.label)
        y, _ = add_noise(h, self.snr_db, snapshot_rng(*self.seed, "noise"))
        return y


def freq_atoms(grid: SamplingGrid, taus) -> np.ndarray:
    "(N_f, P) matrix of exp(-2j pi f_k tau_p)"
    taus = np.asarray(taus, dtype=np.float64).reshape(-1)
    return np.exp(-2j*np.pi*np.outer(grid.freq_points(), taus))


def time_atoms(grid: SamplingGrid, alphas, clutter_filter: bool = False) -> np.ndarray:
    """(N_t, P) matrix of exp(+2j pi t_l alpha_p).

    With `clutter_filter` every column has its mean removed, which is the
    atom as seen behind the slow-time mean removal.
    """
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    atoms = np.exp(2j*np.pi*np.outer(grid.time_points(), alphas))
    if clutter_filter:
        atoms -= atoms.mean(axis=0, keepdims=True)
    return atoms


def slow_time_gain(grid: SamplingGrid, alphas) -> np.ndarray:
    """Fraction of a time atom's energy that passes the slow-time mean
    removal, 1 - |mean_l exp(2j pi t_l alpha)|^2. Zero at alpha = 0."""
    alphas = np.asarray(alphas, dtype=np.float64)
    s = np.exp(2j*np.pi*np.multiply.outer(alphas, grid.time_points())).mean(axis=-1)
    return np.maximum(1. - np.abs(s)**2, 0.)


def synthesize_channel(grid: SamplingGrid, paths: PathSet) -> np.ndarray:
    gammas, taus, alphas = paths.gammas(), paths.taus(), paths.alphas()
    if not (np.all(np.isfinite(gammas)) and np.all(np.isfinite(taus))
            and np.all(np.isfinite(alphas))):
        raise DataError("path parameters must be finite")
    if len(paths) == 0:
        return np.zeros(grid.shape, dtype=np.complex128)
    return (freq_atoms(grid, taus) * gammas) @ time_atoms(grid, alphas).T


def add_noise(h: np.ndarray, snr_db: float, rng: np.random.Generator
              ) -> Tuple[np.ndarray, float]:
    """Adds circular complex white Gaussian noise at a given SNR.

    The per-element noise variance is mean(|h|^2) / 10^(snr_db/10). Real and
    imaginary parts each carry half of it.

    Returns:
        y, sigma2
    """
    h = np.asarray(h)
    if h.size == 0:
        raise DataError("cannot add noise to an empty matrix")
    if snr_db == math.inf:
        return h.astype(np.complex128, copy=True), 0.
    if not math.isfinite(snr_db):
        raise DataError(f"snr_db must be finite or +inf, got {snr_db}")

    power = float(np.mean(np.abs(h)**2))
    if power <= 0:
        raise DegenerateSignalError("signal power is zero, SNR is undefined")
    sigma2 = power / 10**(snr_db/10)
    noise = rng.standard_normal(h.shape) + 1j*rng.standard_normal(h.shape)
    return h + math.sqrt(sigma2/2) * noise, sigma2


def _most_coherent_pair(gram: np.ndarray) -> Tuple[int, int]:
    d = np.sqrt(np.real(np.diag(gram)))
    coherence = np.abs(gram) / np.outer(d, d)
    np.fill_diagonal(coherence, -np.inf)
    i, j = np.unravel_index(np.argmax(coherence), coherence.shape)
    return (int(min(i, j)), int(max(i, j)))


def ls_amplitudes(y: np.ndarray, grid: SamplingGrid, etas,
                  clutter_filter: bool = False) -> np.ndarray:
    """Least-squares path weights for fixed delays and Doppler shifts.

    Solves the normal equations with a Cholesky factorization. The Gram
    matrix of rank-one atoms is the Hadamard product of the frequency and
    time Gram matrices, so it never materializes the N_f*N_t atom columns.

    Args:
        y: (N_f, N_t) observation
        etas: (K, 2) array of (tau, alpha)
        clutter_filter: `y` went through the slow-time mean removal, so the
            atoms are filtered the same way. An atom the filter removes
            entirely raises `RankDeficiencyError` with the pair (p, p).

    Returns:
        (K,) complex weights
    """
    y = np.asarray(y)
    if y.shape != grid.shape:
        raise DataError(f"observation shape {y.shape} does not match grid {grid.shape}")
    etas = np.asarray(etas, dtype=np.float64).reshape(-1, 2)
    K = len(etas)
    if not 1 <= K <= grid.n_freq*grid.n_time:
        raise ConfigError(f"need between 1 and N_f*N_t atoms, got {K}")
    if not np.all(np.isfinite(etas)):
        raise DataError("etas must be finite")

    Af = freq_atoms(grid, etas[:, 0])
    At = time_atoms(grid, etas[:, 1], clutter_filter)
    if clutter_filter:
        removed = np.flatnonzero(slow_time_gain(grid, etas[:, 1]) < ATOM_GAIN_MIN)
        if len(removed):
            p = int(removed[0])
            raise RankDeficiencyError(
                f"atom {p} at alpha={etas[p, 1]:.6g} Hz is removed by the clutter "
                "filter", (p, p), math.inf)
    gram = (Af.conj().T @ Af) * (At.conj().T @ At)
    b = np.einsum('kp,kl,lp->p', Af.conj(), y, At.conj())

    cond = np.linalg.cond(gram) if K > 1 else 1.
    if not (np.isfinite(cond) and cond <= GRAM_COND_MAX):
        pair = _most_coherent_pair(gram)
        raise RankDeficiencyError(
            f"Gram matrix condition number {cond:.3g} exceeds {GRAM_COND_MAX:.3g}; "
            f"atoms {pair} are nearly identical", pair, cond)
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as e:
        pair = _most_coherent_pair(gram)
        raise RankDeficiencyError(f"Cholesky factorization failed: {e}", pair, cond) from e
    return scipy.linalg.cho_solve(factor, b)
