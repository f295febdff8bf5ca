"""
Preprocessing of channel estimates into delay-Doppler feature tensors.

The chain is: optional clutter filter, DPSS windowing along frequency,
zero-padded 2D DFT, crop of the delay/Doppler region of interest, and
stacking of log-magnitude and phase channels.
"""
import functools
import logging
import math
from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .channel import SamplingGrid
from .errors import ConfigError, DataError, NumericError

__all__ = ('PreprocConfig', 'FeatureTensor', 'dpss_windows', 'clutter_filter',
           'padded_sizes', 'delay_axis', 'doppler_axis',
           'delay_doppler_spectra', 'delay_doppler_map', 'magnitude_map',
           'atom_correlation_map')

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocConfig:
    """
    Args:
        nw: standardized half-bandwidth of the DPSS windows
        n_windows: number of DPSS windows N_w
        tau_max: delay crop in units of 1/delta_f
        alpha_max: one-sided Doppler crop in units of 1/delta_t
        n_tau, n_alpha: output bins per axis
        clutter_filter: remove the zero-Doppler subspace before the transform
        epsilon_log: floor of the magnitude before log10
        time_windows: also window the time axis with DPSS (window i along
            frequency is paired with window i along time)
    """
    nw: float = 2.
    n_windows: int = 3
    tau_max: float = 0.02
    alpha_max: float = 0.05
    n_tau: int = 512
    n_alpha: int = 512
    clutter_filter: bool = True
    epsilon_log: float = 1e-12
    time_windows: bool = False

    def __post_init__(self):
        if not self.nw > 0:
            raise ConfigError(f"nw must be positive, got {self.nw}")
        if self.n_windows < 1:
            raise ConfigError(f"n_windows must be >= 1, got {self.n_windows}")
        if self.n_tau < 8 or self.n_alpha < 8:
            raise ConfigError(f"crop must be at least 8x8, got {self.n_tau}x{self.n_alpha}")
        if not 0 < self.tau_max <= 1:
            raise ConfigError(f"tau_max must lie in (0, 1], got {self.tau_max}")
        if not 0 < self.alpha_max <= 0.5:
            raise ConfigError(f"alpha_max must lie in (0, 0.5], got {self.alpha_max}")
        if not self.epsilon_log > 0:
            raise ConfigError("epsilon_log must be positive")

    @property
    def n_channels(self) -> int:
        return 2*self.n_windows

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocConfig":
        return cls(**d)


@dataclass
class FeatureTensor:
    """Real feature tensor of shape (2 N_w, N_tau, N_alpha).

    Channels [0, N_w) hold log10 magnitudes, channels [N_w, 2 N_w) phases in
    (-pi, pi]. `tau_axis` (seconds) and `alpha_axis` (Hz) give the bin
    centers.
    """
    data: np.ndarray
    tau_axis: np.ndarray
    alpha_axis: np.ndarray
    cfg: PreprocConfig
    grid: SamplingGrid

    def __post_init__(self):
        expected = (self.cfg.n_channels, len(self.tau_axis), len(self.alpha_axis))
        assert self.data.shape == expected, f"{self.data.shape} != {expected}"

    @property
    def shape(self):
        return self.data.shape

    def log_magnitude(self, window: int = 0) -> np.ndarray:
        return self.data[window]

    def phase(self, window: int = 0) -> np.ndarray:
        return self.data[self.cfg.n_windows + window]

    def tau_step(self) -> float:
        return float(self.tau_axis[1] - self.tau_axis[0])

    def alpha_step(self) -> float:
        return float(self.alpha_axis[1] - self.alpha_axis[0])

    def bin_to_eta(self, i, j) -> Tuple[np.ndarray, np.ndarray]:
        "fractional bin indices to (tau, alpha)"
        return (self.tau_axis[0] + np.asarray(i)*self.tau_step(),
                self.alpha_axis[0] + np.asarray(j)*self.alpha_step())

    def eta_to_bin(self, tau, alpha) -> Tuple[np.ndarray, np.ndarray]:
        "(tau, alpha) to fractional bin indices"
        return ((np.asarray(tau) - self.tau_axis[0]) / self.tau_step(),
                (np.asarray(alpha) - self.alpha_axis[0]) / self.alpha_step())


@functools.lru_cache(maxsize=64)
def dpss_windows(n: int, nw: float, k: int) -> np.ndarray:
    """The `k` most concentrated discrete prolate spheroidal sequences.

    Eigenvectors of the symmetric tridiagonal matrix that commutes with the
    sinc concentration kernel, sorted by decreasing concentration.

    Returns:
        read-only (k, n) array of unit-energy windows
    """
    if not 1 <= k <= n:
        raise ConfigError(f"window count k={k} must lie in [1, n={n}]")
    if not 0 < nw < n/2:
        raise ConfigError(f"half-bandwidth nw={nw} must lie in (0, n/2={n/2})")
    if k > 2*nw - 1:
        logger.warning(f"{k} DPSS windows exceed the 2NW-1={2*nw-1:g} well "
                       "concentrated ones")

    W = nw / n
    i = np.arange(n, dtype=np.float64)
    diag = ((n - 1 - 2*i)/2)**2 * np.cos(2*np.pi*W)
    off_diag = i[1:] * (n - i[1:]) / 2
    try:
        _, vecs = scipy.linalg.eigh_tridiagonal(
            diag, off_diag, select='i', select_range=(n-k, n-1))
    except np.linalg.LinAlgError as e:
        raise NumericError(f"DPSS eigen-solver failed: {e}") from e

    windows = vecs.T[::-1].copy()
    windows /= np.linalg.norm(windows, axis=1, keepdims=True)
    # Even windows are symmetric: positive sum. Odd windows are antisymmetric:
    # positive first lobe.
    for order, w in enumerate(windows):
        if order % 2 == 0:
            if w.sum() < 0:
                w *= -1
        else:
            thresh = max(1e-7, 1./n)
            first = np.argmax(np.abs(w) > thresh)
            if w[first] < 0:
                w *= -1
    windows.flags.writeable = False
    return windows


def clutter_filter(y: np.ndarray) -> np.ndarray:
    """Projects every frequency row onto the complement of the constant
    slow-time vector, i.e. removes the zero-Doppler component."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] < 2:
        raise DataError(f"clutter filter needs at least 2 time samples, got shape {y.shape}")
    return y - y.mean(axis=1, keepdims=True)


def _ceil(x: float) -> int:
    # tolerate representation error, 512/0.02 must stay 25600
    return int(math.ceil(x * (1 - 1e-12)))


def padded_sizes(grid: SamplingGrid, cfg: PreprocConfig) -> Tuple[int, int]:
    n_pad_f = _ceil(cfg.n_tau / cfg.tau_max)
    n_pad_t = _ceil(cfg.n_alpha / (2*cfg.alpha_max))
    if n_pad_f < grid.n_freq or n_pad_t < grid.n_time:
        raise ConfigError(
            f"padded transform size {n_pad_f}x{n_pad_t} is smaller than the "
            f"grid {grid.n_freq}x{grid.n_time}; increase n_tau/n_alpha or "
            "decrease tau_max/alpha_max")
    return n_pad_f, n_pad_t


def delay_axis(grid: SamplingGrid, cfg: PreprocConfig) -> np.ndarray:
    n_pad_f, _ = padded_sizes(grid, cfg)
    return np.arange(cfg.n_tau) / (n_pad_f * grid.delta_f)


def _doppler_bins(cfg: PreprocConfig) -> np.ndarray:
    # zero Doppler sits on a bin center
    return np.arange(-(cfg.n_alpha//2), cfg.n_alpha - cfg.n_alpha//2)


def doppler_axis(grid: SamplingGrid, cfg: PreprocConfig) -> np.ndarray:
    _, n_pad_t = padded_sizes(grid, cfg)
    return _doppler_bins(cfg) / (n_pad_t * grid.delta_t)


def delay_doppler_spectra(y: np.ndarray, grid: SamplingGrid, cfg: PreprocConfig,
                          windows: Optional[np.ndarray] = None,
                          time_windows: Optional[np.ndarray] = None) -> np.ndarray:
    """Complex delay-Doppler maps on the cropped, zero-padded grid.

    For every window w, bin (q, m) holds the normalized correlation with the
    path atom at (tau_q, alpha_m):

        1/(N_f N_t) sum_{k,l} w_k v_l Y[k, l] exp(2j pi f_k tau_q) exp(-2j pi t_l alpha_m)

    so a unit-weight path exactly on a bin has magnitude 1 under rectangular
    windows.

    Args:
        windows: (K, N_f) frequency windows, DPSS from `cfg` by default
        time_windows: (K, N_t) time windows, rectangular by default unless
            `cfg.time_windows`

    Returns:
        (K, n_tau, n_alpha) complex array
    """
    y = np.asarray(y)
    if y.shape != grid.shape:
        raise DataError(f"observation shape {y.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(y)):
        raise DataError("observation contains non-finite values")
    n_pad_f, n_pad_t = padded_sizes(grid, cfg)

    if windows is None:
        windows = dpss_windows(grid.n_freq, cfg.nw, cfg.n_windows)
    windows = np.atleast_2d(windows)
    if time_windows is None:
        if cfg.time_windows:
            time_windows = dpss_windows(grid.n_time, cfg.nw, len(windows))
        else:
            time_windows = np.ones((len(windows), grid.n_time))
    time_windows = np.atleast_2d(time_windows)
    assert windows.shape[1] == grid.n_freq and time_windows.shape[1] == grid.n_time
    assert len(windows) == len(time_windows)

    out = np.empty((len(windows), cfg.n_tau, cfg.n_alpha), dtype=np.complex128)
    for i, (w, v) in enumerate(zip(windows, time_windows)):
        out[i] = atom_correlation_map(y * w[:, None] * v[None, :], grid,
                                      n_pad_f, n_pad_t, cfg.n_tau,
                                      _doppler_bins(cfg))
    return out


def delay_doppler_map(y: np.ndarray, grid: SamplingGrid, cfg: PreprocConfig
                      ) -> FeatureTensor:
    if cfg.clutter_filter:
        y = clutter_filter(y)
    spectra = delay_doppler_spectra(y, grid, cfg)
    log_mag = np.log10(np.maximum(np.abs(spectra), cfg.epsilon_log))
    phase = np.angle(spectra)
    phase = np.where(phase <= -np.pi, phase + 2*np.pi, phase)
    return FeatureTensor(np.concatenate([log_mag, phase], axis=0),
                         delay_axis(grid, cfg), doppler_axis(grid, cfg),
                         cfg, grid)


def magnitude_map(y: np.ndarray, grid: SamplingGrid, cfg: PreprocConfig
                  ) -> np.ndarray:
    "linear magnitude of the first window's map, the background for max-hold"
    if cfg.clutter_filter:
        y = clutter_filter(y)
    first = dpss_windows(grid.n_freq, cfg.nw, cfg.n_windows)[:1]
    return np.abs(delay_doppler_spectra(y, grid, cfg, windows=first)[0])


def atom_correlation_map(y: np.ndarray, grid: SamplingGrid, n_pad_f: int,
                         n_pad_t: int, n_delay: int, doppler_bins) -> np.ndarray:
    """Normalized correlation of `y` with path atoms on a zero-padded grid.

    Delay bin q is tau = q/(n_pad_f delta_f) for q in [0, n_delay), Doppler
    bin m is alpha = m/(n_pad_t delta_t) for every m in `doppler_bins`.
    """
    assert n_pad_f >= grid.n_freq and n_pad_t >= grid.n_time
    assert n_delay <= n_pad_f
    doppler_bins = np.asarray(doppler_bins)
    tau = np.arange(n_delay) / (n_pad_f * grid.delta_f)
    alpha = doppler_bins / (n_pad_t * grid.delta_t)

    # sum_k x_k exp(+2j pi k q / N) is N * ifft
    z = n_pad_f * np.fft.ifft(y, n=n_pad_f, axis=0)[:n_delay]
    z = np.fft.fft(z, n=n_pad_t, axis=1)[:, doppler_bins % n_pad_t]
    z *= np.exp(2j*np.pi*grid.f_start*tau)[:, None]
    z *= np.exp(-2j*np.pi*grid.t_start*alpha)[None, :]
    return z / (grid.n_freq * grid.n_time)
