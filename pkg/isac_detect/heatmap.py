"""
Heatmap target encoding and decoding for the neural backend.
"""
import logging
from typing import List, Tuple

import numpy as np
import scipy.ndimage
import torch

from .channel import Snapshot, ls_amplitudes
from .detector import Detection, parabolic_refine
from .errors import RankDeficiencyError
from .preproc import PreprocConfig, clutter_filter, delay_doppler_map

__all__ = ('render_label', 'extract_peaks', 'detect_neural', 'Axes')

logger = logging.getLogger(__name__)

Axes = Tuple[np.ndarray, np.ndarray]


def _fractional_bins(etas, axes: Axes) -> np.ndarray:
    tau_axis, alpha_axis = axes
    etas = np.asarray(etas, dtype=np.float64).reshape(-1, 2)
    i = (etas[:, 0] - tau_axis[0]) / (tau_axis[1] - tau_axis[0])
    j = (etas[:, 1] - alpha_axis[0]) / (alpha_axis[1] - alpha_axis[0])
    return np.stack([i, j], axis=-1)


def render_label(etas, axes: Axes, blob_sigma: float = 1.5) -> np.ndarray:
    """Max-composited isotropic Gaussian blobs, one per target, centered at
    the fractional bin position of each (tau, alpha).

    Returns:
        (len(tau_axis), len(alpha_axis)) array in [0, 1]
    """
    tau_axis, alpha_axis = axes
    h = np.zeros((len(tau_axis), len(alpha_axis)))
    I = np.arange(len(tau_axis))[:, None]
    J = np.arange(len(alpha_axis))[None, :]
    for i, j in _fractional_bins(etas, axes):
        blob = np.exp(-((I - i)**2 + (J - j)**2) / (2*blob_sigma**2))
        np.maximum(h, blob, out=h)
    return h


def _peak_bins(h: np.ndarray, threshold: float, nms_radius: float
               ) -> List[Tuple[int, int]]:
    local_max = scipy.ndimage.maximum_filter(h, size=3, mode="constant", cval=-np.inf)
    candidates = np.argwhere((h == local_max) & (h > threshold))
    order = np.argsort(-h[candidates[:, 0], candidates[:, 1]], kind="stable")
    kept: List[Tuple[int, int]] = []
    for i, j in candidates[order]:
        if all((i-a)**2 + (j-b)**2 > nms_radius**2 for a, b in kept):
            kept.append((int(i), int(j)))
    return kept


def extract_peaks(h: np.ndarray, threshold: float, axes: Axes,
                  nms_radius: float = 2.) -> List[Tuple[float, float]]:
    """Local maxima (8-neighbourhood) above `threshold`, strongest first,
    with weaker maxima within `nms_radius` bins of a kept one suppressed.
    Positions are refined by a parabola through the log-heatmap.

    Returns:
        list of (tau, alpha) in physical units
    """
    return [eta for eta, _ in _refined_peaks(h, threshold, axes, nms_radius)]


def _refined_peaks(h, threshold, axes, nms_radius):
    h = np.asarray(h, dtype=np.float64)
    tau_axis, alpha_axis = axes
    log_h = np.log(np.maximum(h, np.finfo(np.float64).tiny))
    peaks = []
    for i, j in _peak_bins(h, threshold, nms_radius):
        di, dj = parabolic_refine(log_h, (i, j))
        eta = (float(tau_axis[0] + (i+di)*(tau_axis[1] - tau_axis[0])),
               float(alpha_axis[0] + (j+dj)*(alpha_axis[1] - alpha_axis[0])))
        peaks.append((eta, float(h[i, j])))
    return peaks


def detect_neural(snapshot: Snapshot, model, preproc_cfg: PreprocConfig,
                  threshold: float = 0.5, nms_radius: float = 2.) -> List[Detection]:
    """Preprocess, run the network, extract peaks and fit amplitudes.

    Peaks that collapse onto each other in the least-squares fit are dropped,
    weakest heatmap value first.

    Returns:
        detections ordered by decreasing |gamma_hat|
    """
    feat = delay_doppler_map(snapshot.y, snapshot.grid, preproc_cfg)
    x = torch.from_numpy(feat.data.astype(np.float32))[None]
    device = next(iter(model.parameters())).device
    with torch.no_grad():
        h = model(x.to(device))[0].cpu().numpy().astype(np.float64)
    peaks = _refined_peaks(h, threshold, (feat.tau_axis, feat.alpha_axis), nms_radius)
    etas = [eta for eta, _ in peaks]
    scores = [value for _, value in peaks]

    y = clutter_filter(snapshot.y) if preproc_cfg.clutter_filter else snapshot.y
    gammas = np.zeros(0, dtype=np.complex128)
    while etas:
        try:
            gammas = ls_amplitudes(y, snapshot.grid, etas, preproc_cfg.clutter_filter)
            break
        except RankDeficiencyError as e:
            weaker = min(e.pair, key=lambda n: scores[n])
            logger.warning(f"heatmap peaks {e.pair} collapsed, dropping peak {weaker}")
            del etas[weaker]
            del scores[weaker]

    detections = [Detection(tau, alpha, complex(g), s)
                  for (tau, alpha), g, s in zip(etas, gammas, scores)]
    detections.sort(key=lambda d: -abs(d.gamma_hat))
    return detections
