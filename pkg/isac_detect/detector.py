"""
Classical detection backend: CLEAN-style extraction of an unknown number of
paths from the delay-Doppler map, with sub-bin refinement and joint
least-squares amplitudes.
"""
import logging
import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .channel import (ATOM_GAIN_MIN, PathSet, SamplingGrid, Snapshot, freq_atoms,
                      ls_amplitudes, slow_time_gain, synthesize_channel, time_atoms)
from .errors import ConfigError, DataError, RankDeficiencyError
from .preproc import atom_correlation_map, clutter_filter as remove_slow_time_mean

__all__ = ('Detection', 'DetectorConfig', 'DetectionGate', 'detect',
           'parabolic_refine', 'newton_refine', 'correlation_objective',
           'calibrate_threshold', 'noise_floor', 'default_threshold',
           'detections_to_paths')

logger = logging.getLogger(__name__)

REFINE_MODES = ("none", "parabolic", "newton")


@dataclass(frozen=True)
class Detection:
    tau_hat: float
    alpha_hat: float
    gamma_hat: complex
    score: float

    def eta(self) -> Tuple[float, float]:
        return (self.tau_hat, self.alpha_hat)


@dataclass(frozen=True)
class DetectorConfig:
    """
    Args:
        max_paths: largest number of detections per snapshot
        threshold_factor: peak power over noise floor needed to detect.
            `None` derives it from the Rayleigh tail for `p_fa`
        p_fa: false-alarm probability per map of the derived threshold
        refine: sub-bin refinement, one of "none", "parabolic", "newton"
        oversample: zero-padding factor of the detection map per axis
        stop_on_residual: stop once the residual energy falls below this
            fraction of the snapshot energy
        tau_max: gate on delay, in units of 1/delta_f
        alpha_max: one-sided gate on Doppler, in units of 1/delta_t
        relax_sweeps: re-refinement sweeps over earlier detections after each
            new one (Newton refinement only)
    """
    max_paths: int = 30
    threshold_factor: Optional[float] = None
    p_fa: float = 1e-3
    refine: str = "newton"
    oversample: int = 4
    stop_on_residual: float = 1e-10
    tau_max: float = 1.
    alpha_max: float = 0.5
    relax_sweeps: int = 1

    def __post_init__(self):
        if self.max_paths < 1:
            raise ConfigError(f"max_paths must be >= 1, got {self.max_paths}")
        if self.threshold_factor is not None and not self.threshold_factor > 1:
            raise ConfigError(f"threshold_factor must exceed 1, got {self.threshold_factor}")
        if not 0 < self.p_fa < 1:
            raise ConfigError(f"p_fa must lie in (0, 1), got {self.p_fa}")
        if self.refine not in REFINE_MODES:
            raise ConfigError(f"refine must be one of {REFINE_MODES}, got {self.refine}")
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if not 0 < self.tau_max <= 1 or not 0 < self.alpha_max <= 0.5:
            raise ConfigError(f"gate ({self.tau_max}, {self.alpha_max}) outside "
                              "the unambiguous ranges")
        if self.stop_on_residual < 0 or self.relax_sweeps < 0:
            raise ConfigError("stop_on_residual and relax_sweeps must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(**d)


class DetectionGate:
    """Oversampled rectangular-window map restricted to the (tau, alpha) gate.

    With `clutter_filter` the map correlates the slow-time filtered input
    with filtered atoms, each column normalized by the atom's remaining
    energy. The zero-Doppler column, whose atom the filter removes, is 0.
    """
    def __init__(self, grid: SamplingGrid, cfg: DetectorConfig,
                 clutter_filter: bool = False):
        self.grid = grid
        self.clutter_filter = clutter_filter
        self.n_pad_f = cfg.oversample * grid.n_freq
        self.n_pad_t = cfg.oversample * grid.n_time
        self.n_delay = min(int(math.floor(cfg.tau_max*self.n_pad_f + 1e-9)) + 1,
                           self.n_pad_f)
        M = int(math.floor(cfg.alpha_max*self.n_pad_t + 1e-9))
        if 2*M + 1 > self.n_pad_t:
            self.doppler_bins = np.arange(-(self.n_pad_t//2),
                                          self.n_pad_t - self.n_pad_t//2)
        else:
            self.doppler_bins = np.arange(-M, M+1)
        self.tau_step = 1. / (self.n_pad_f * grid.delta_f)
        self.alpha_step = 1. / (self.n_pad_t * grid.delta_t)
        self.tau_bounds = (0., cfg.tau_max / grid.delta_f)
        self.alpha_bounds = (-cfg.alpha_max / grid.delta_t, cfg.alpha_max / grid.delta_t)
        self.column_scale = None
        if clutter_filter:
            gain = slow_time_gain(grid, self.doppler_bins * self.alpha_step)
            self.column_scale = np.where(
                gain >= ATOM_GAIN_MIN, 1/np.sqrt(np.maximum(gain, ATOM_GAIN_MIN)), 0.)

    @property
    def n_cells(self) -> int:
        return self.n_delay * len(self.doppler_bins)

    def map(self, r: np.ndarray) -> np.ndarray:
        if self.clutter_filter:
            r = remove_slow_time_mean(r)
        m = atom_correlation_map(r, self.grid, self.n_pad_f, self.n_pad_t,
                                 self.n_delay, self.doppler_bins)
        if self.column_scale is not None:
            m *= self.column_scale[None, :]
        return m

    def bin_to_eta(self, i: float, j: float) -> Tuple[float, float]:
        tau = i * self.tau_step
        alpha = (self.doppler_bins[0] + j) * self.alpha_step
        return self.clip(tau, alpha)

    def clip(self, tau: float, alpha: float) -> Tuple[float, float]:
        return (float(np.clip(tau, *self.tau_bounds)),
                float(np.clip(alpha, *self.alpha_bounds)))

    def contains(self, tau: float, alpha: float) -> bool:
        return (self.tau_bounds[0] <= tau <= self.tau_bounds[1]
                and self.alpha_bounds[0] <= alpha <= self.alpha_bounds[1])


def default_threshold(n_cells: int, p_fa: float) -> float:
    """Peak-to-floor power ratio exceeded by the maximum of `n_cells`
    independent exponential cells with probability `p_fa`."""
    return math.log(n_cells / p_fa)


def noise_floor(power: np.ndarray) -> float:
    "mean of exponentially distributed cell powers, from their median"
    return float(np.median(power) / math.log(2))


def parabolic_refine(m: np.ndarray, peak: Tuple[int, int]) -> Tuple[float, float]:
    """Fractional offsets of the vertex of a parabola through the peak and its
    two neighbours along each axis of `m`.

    Peaks on the border or with a flat neighbourhood get a zero offset.
    Offsets are clamped to [-0.5, 0.5].
    """
    m = np.asarray(m, dtype=np.float64)
    offsets = []
    for axis in range(2):
        idx = list(peak)
        c = idx[axis]
        if c <= 0 or c >= m.shape[axis] - 1:
            offsets.append(0.)
            continue
        idx[axis] = c - 1
        m_minus = m[tuple(idx)]
        idx[axis] = c + 1
        m_plus = m[tuple(idx)]
        m_0 = m[tuple(peak)]
        denom = m_minus - 2*m_0 + m_plus
        if denom == 0 or not np.isfinite(denom):
            offsets.append(0.)
            continue
        delta = 0.5 * (m_minus - m_plus) / denom
        offsets.append(float(np.clip(delta, -0.5, 0.5)))
    return tuple(offsets)


def correlation_objective(r: np.ndarray, grid: SamplingGrid, eta: Tuple[float, float],
                          clutter_filter: bool = False
                          ) -> Tuple[float, np.ndarray, np.ndarray]:
    """J(eta) = |<a(eta), r>|^2 / (N_f N_t)^2 with its gradient and Hessian.

    Derivatives are taken with respect to native bins, 1/(N_f delta_f) in
    delay and 1/(N_t delta_t) in Doppler.

    With `clutter_filter`, `r` and the atom pass the slow-time mean removal
    and J is divided by `slow_time_gain(alpha)`, so that its maximum stays
    at the path for Doppler shifts close to zero. J is 0 where the filter
    removes the atom.

    Returns:
        J, gradient (2,), Hessian (2, 2)
    """
    tau, alpha = eta
    scale_f = 2j*np.pi*grid.freq_points() / grid.bandwidth()
    scale_t = -2j*np.pi*grid.time_points() / grid.cpi()
    u = np.conj(freq_atoms(grid, tau)[:, 0])
    v = np.conj(time_atoms(grid, alpha)[:, 0])
    if clutter_filter:
        # the rows of a filtered r sum to zero, so <P v, r> = <v, r>
        r = remove_slow_time_mean(r)

    rv, r_dv, r_ddv = r @ v, r @ (scale_t*v), r @ (scale_t**2 * v)
    du = scale_f * u
    norm = grid.n_freq * grid.n_time
    c = (u @ rv) / norm
    c_t, c_a = (du @ rv) / norm, (u @ r_dv) / norm
    c_tt, c_aa = ((scale_f*du) @ rv) / norm, (u @ r_ddv) / norm
    c_ta = (du @ r_dv) / norm

    J = abs(c)**2
    grad = 2*np.real(np.conj(c) * np.array([c_t, c_a]))
    d1 = np.array([c_t, c_a])
    d2 = np.array([[c_tt, c_ta], [c_ta, c_aa]])
    hess = 2*np.real(np.conj(d1)[:, None]*d1[None, :] + np.conj(c)*d2)
    if not clutter_filter:
        return J, grad, hess

    # gain rho = 1 - |s|^2 with s the mean of the time atom
    s, s_a, s_aa = v.mean(), (scale_t*v).mean(), (scale_t**2 * v).mean()
    rho = 1. - abs(s)**2
    if rho < ATOM_GAIN_MIN:
        return 0., np.zeros(2), np.zeros((2, 2))
    d_rho = np.array([0., -2*np.real(np.conj(s)*s_a)])
    dd_rho = np.array([[0., 0.], [0., -2*(abs(s_a)**2 + np.real(np.conj(s)*s_aa))]])
    J_n = J / rho
    grad_n = grad/rho - J*d_rho/rho**2
    hess_n = (hess/rho - (np.outer(grad, d_rho) + np.outer(d_rho, grad))/rho**2
              - J*dd_rho/rho**2 + 2*J*np.outer(d_rho, d_rho)/rho**3)
    return J_n, grad_n, hess_n


def newton_refine(y: np.ndarray, grid: SamplingGrid, eta0: Tuple[float, float],
                  gate: Optional[DetectionGate] = None, max_iter: int = 20,
                  tol: float = 1e-4, return_iterations: bool = False):
    """Maximizes the single-atom correlation `correlation_objective` over eta.

    Damped Newton ascent in native-bin units. Where the Hessian is not
    negative definite, takes a gradient step of a quarter bin instead. Steps
    are halved until the objective does not decrease and are projected onto
    the gate. Stops when a step is shorter than `tol` bins or after
    `max_iter` iterations.

    The objective sees the clutter-filtered model if the gate was built with
    `clutter_filter`.
    """
    bin_tau = 1. / grid.bandwidth()
    bin_alpha = 1. / grid.cpi()
    filtered = gate is not None and gate.clutter_filter
    if filtered:
        y = remove_slow_time_mean(y)

    def _project(x):
        if gate is None:
            return x
        tau, alpha = gate.clip(x[0]*bin_tau, x[1]*bin_alpha)
        return np.array([tau/bin_tau, alpha/bin_alpha])

    x = _project(np.array([eta0[0]/bin_tau, eta0[1]/bin_alpha]))
    J, grad, hess = correlation_objective(y, grid, (x[0]*bin_tau, x[1]*bin_alpha), filtered)
    n_iter = 0
    for n_iter in range(1, max_iter+1):
        if np.all(np.linalg.eigvalsh(hess) < 0):
            step = -np.linalg.solve(hess, grad)
            norm = np.linalg.norm(step)
            if norm > 0.5:
                step *= 0.5/norm
        else:
            g_norm = np.linalg.norm(grad)
            if g_norm == 0:
                break
            step = 0.25 * grad / g_norm

        for _ in range(30):
            x_new = _project(x + step)
            J_new, grad_new, hess_new = correlation_objective(
                y, grid, (x_new[0]*bin_tau, x_new[1]*bin_alpha), filtered)
            if J_new >= J:
                break
            step = step / 2
        else:
            break

        moved = np.linalg.norm(x_new - x)
        x, J, grad, hess = x_new, J_new, grad_new, hess_new
        if moved < tol:
            break

    logger.debug(f"Newton refinement finished after {n_iter} iterations")
    tau, alpha = float(x[0]*bin_tau), float(x[1]*bin_alpha)
    if gate is not None:
        tau, alpha = gate.clip(tau, alpha)
    if return_iterations:
        return (tau, alpha), n_iter
    return (tau, alpha)


def _reconstruct(grid, etas, gammas, clutter_filter=False) -> np.ndarray:
    etas = np.asarray(etas).reshape(-1, 2)
    h = synthesize_channel(grid, PathSet.from_arrays(gammas, etas[:, 0], etas[:, 1]))
    return remove_slow_time_mean(h) if clutter_filter else h


def _energy(x) -> float:
    return float(np.vdot(x, x).real)


def _relax(y, grid, etas, gammas, gate, energy):
    """Re-refines every detection against the residual of all others, then
    refits the amplitudes. Kept only if the residual energy drops."""
    filtered = gate.clutter_filter
    new_etas = list(etas)
    for p in range(len(etas)):
        others = [q for q in range(len(etas)) if q != p]
        r_p = y - _reconstruct(grid, [new_etas[q] for q in others], gammas[others],
                               filtered) if others else y
        new_etas[p] = newton_refine(r_p, grid, new_etas[p], gate=gate)
    try:
        new_gammas = ls_amplitudes(y, grid, new_etas, filtered)
    except RankDeficiencyError:
        return etas, gammas, energy
    new_energy = _energy(y - _reconstruct(grid, new_etas, new_gammas, filtered))
    if new_energy <= energy:
        return new_etas, new_gammas, new_energy
    return etas, gammas, energy


def detect(snapshot: Snapshot, cfg: DetectorConfig,
           clutter_filter: bool = False) -> List[Detection]:
    """Iterative detect, refine, refit and subtract.

    Each iteration locates the strongest peak of the residual's oversampled
    map inside the gate, stops if its power is below `threshold_factor`
    times the median-based noise floor, refines its position, refits all
    amplitudes jointly on the snapshot and subtracts the fit.

    With `clutter_filter` the snapshot goes through the slow-time mean
    removal first, and the map, the refinement and the amplitude fit all
    use the equally filtered atoms. The amplitudes stay those of the
    unfiltered paths.

    A peak that collapses onto an earlier detection is dropped (or replaces
    it) and its cells are excluded from later iterations.

    Returns:
        detections ordered by decreasing |gamma_hat|
    """
    grid = snapshot.grid
    y = np.asarray(snapshot.y, dtype=np.complex128)
    if not np.all(np.isfinite(y)):
        raise DataError("snapshot contains non-finite values")
    if clutter_filter:
        y = remove_slow_time_mean(y)
    gate = DetectionGate(grid, cfg, clutter_filter)
    threshold = cfg.threshold_factor
    if threshold is None:
        threshold = default_threshold(gate.n_cells, cfg.p_fa)

    y_energy = _energy(y)
    etas: List[Tuple[float, float]] = []
    scores: List[float] = []
    gammas = np.zeros(0, dtype=np.complex128)
    residual = y
    energy = y_energy
    blocked = np.zeros((gate.n_delay, len(gate.doppler_bins)), dtype=bool)
    n_collapsed = 0

    while len(etas) < cfg.max_paths:
        if energy <= cfg.stop_on_residual * y_energy:
            break
        m = gate.map(residual)
        power = np.abs(m)**2
        floor = max(noise_floor(power), np.finfo(np.float64).tiny)
        power[blocked] = 0.
        i, j = np.unravel_index(np.argmax(power), power.shape)
        score = float(power[i, j] / floor)
        if score < threshold:
            break

        di, dj = 0., 0.
        if cfg.refine != "none":
            with np.errstate(divide="ignore"):
                di, dj = parabolic_refine(np.log(np.abs(m)), (i, j))
        eta = gate.bin_to_eta(i + di, j + dj)
        if cfg.refine == "newton":
            eta = newton_refine(residual, grid, eta, gate=gate)

        candidate = etas + [eta]
        try:
            new_gammas = ls_amplitudes(y, grid, candidate, clutter_filter)
        except RankDeficiencyError as e:
            etas, gammas, scores, energy = _drop_weaker(
                y, grid, candidate, gammas, scores + [score], abs(m[i, j]), e, energy,
                clutter_filter)
            n_collapsed += 1
            if n_collapsed > cfg.max_paths:
                break
            r = cfg.oversample
            blocked[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1] = True
            residual = y - _reconstruct(grid, etas, gammas, clutter_filter)
            continue
        new_energy = _energy(y - _reconstruct(grid, candidate, new_gammas, clutter_filter))
        etas, gammas, scores = candidate, new_gammas, scores + [score]

        if cfg.refine == "newton" and len(etas) > 1:
            for _ in range(cfg.relax_sweeps):
                etas, gammas, new_energy = _relax(y, grid, etas, gammas, gate, new_energy)

        assert new_energy <= energy * (1 + 1e-9), "residual energy increased"
        energy = new_energy
        residual = y - _reconstruct(grid, etas, gammas, clutter_filter)

    detections = [Detection(float(tau), float(alpha), complex(g), s)
                  for (tau, alpha), g, s in zip(etas, gammas, scores)]
    detections.sort(key=lambda d: -abs(d.gamma_hat))
    logger.debug(f"{len(detections)} detections")
    return detections


def _drop_weaker(y, grid, candidate, gammas, scores, new_amplitude, error, energy,
                 clutter_filter=False):
    """Resolves two detections that collapsed onto each other. The weaker one
    is dropped; an earlier detection is only replaced if that lowers the
    residual. A pair (p, p) names an atom the clutter filter removes."""
    i, j = error.pair
    K = len(candidate) - 1
    strength = np.append(np.abs(gammas), new_amplitude)
    weaker = i if strength[i] < strength[j] else j
    logger.warning(f"detections {i} and {j} collapsed (cond={error.cond:.3g}), "
                   f"dropping detection {weaker}")
    etas = candidate[:K]
    if weaker == K:
        return etas, gammas, scores[:K], energy

    kept = [eta for n, eta in enumerate(candidate) if n != weaker]
    kept_scores = [s for n, s in enumerate(scores) if n != weaker]
    try:
        new_gammas = ls_amplitudes(y, grid, kept, clutter_filter)
    except RankDeficiencyError:
        return etas, gammas, scores[:K], energy
    new_energy = _energy(y - _reconstruct(grid, kept, new_gammas, clutter_filter))
    if new_energy <= energy:
        return kept, new_gammas, kept_scores, new_energy
    return etas, gammas, scores[:K], energy


def calibrate_threshold(grid: SamplingGrid, cfg: DetectorConfig, n_maps: int = 2000,
                        seed: int = 0, p_fa: Optional[float] = None,
                        clutter_filter: bool = False) -> float:
    """Empirical threshold factor for a per-map false-alarm probability.

    Draws noise-only snapshots and returns the (1 - p_fa) quantile of the
    peak-to-floor ratio of their detection maps. Oversampled cells are
    correlated, so this is tighter than the analytic default.
    """
    p_fa = cfg.p_fa if p_fa is None else p_fa
    if n_maps < 1:
        raise ConfigError("n_maps must be >= 1")
    if n_maps * p_fa < 1:
        logger.warning(f"{n_maps} maps are too few to resolve p_fa={p_fa}")
    gate = DetectionGate(grid, cfg, clutter_filter)
    rng = np.random.default_rng(seed)
    ratios = np.empty(n_maps)
    for n in range(n_maps):
        noise = rng.standard_normal(grid.shape) + 1j*rng.standard_normal(grid.shape)
        power = np.abs(gate.map(noise))**2
        ratios[n] = power.max() / noise_floor(power)
    return float(max(np.quantile(ratios, 1 - p_fa), 1. + 1e-9))


def detections_to_paths(detections: Sequence[Detection]) -> PathSet:
    return PathSet.from_arrays([d.gamma_hat for d in detections],
                               [d.tau_hat for d in detections],
                               [d.alpha_hat for d in detections])
