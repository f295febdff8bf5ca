import numpy as np
import scipy.signal
from matplotlib.figure import Figure
from typing import Dict, Optional, Sequence

from .formats import write_pgm

__all__ = ('to_db', 'export_map_pgm', 'plot_max_hold', 'save_max_hold_png',
           'ewma', 'plot_training_log')


def to_db(m: np.ndarray, floor_db: float = -300.) -> np.ndarray:
    "20 log10 |m|, floored"
    with np.errstate(divide="ignore"):
        return np.maximum(20*np.log10(np.abs(m)), floor_db)


def export_map_pgm(path, m: np.ndarray, dynamic_range_db: float = 60.):
    """Grayscale image of a delay-Doppler magnitude map in dB, delay along
    the rows. White is the maximum, black `dynamic_range_db` below it."""
    db = to_db(m)
    hi = float(np.max(db))
    write_pgm(path, db, lo=hi - dynamic_range_db, hi=hi)


def plot_max_hold(ax, m, tau_axis, alpha_axis, tracks: Optional[Dict[str, np.ndarray]] = None,
                  estimates: Optional[Sequence] = None, dynamic_range_db=60.):
    """Max-hold map in dB with groundtruth tracks as lines and estimates as
    dots. Delay is shown in ns, Doppler in Hz.

    Args:
        tracks: name -> (S, 2) array of (tau, alpha)
        estimates: (tau, alpha) pairs
    """
    db = to_db(m)
    hi = float(np.max(db))
    extent = (alpha_axis[0], alpha_axis[-1], tau_axis[0]*1e9, tau_axis[-1]*1e9)
    im = ax.imshow(db, origin="lower", aspect="auto", extent=extent,
                   vmin=hi - dynamic_range_db, vmax=hi, cmap="viridis")
    for name, track in (tracks or {}).items():
        track = np.asarray(track)
        ax.plot(track[:, 1], track[:, 0]*1e9, lw=1, label=name)
    if estimates is not None and len(estimates):
        est = np.asarray(estimates, dtype=np.float64).reshape(-1, 2)
        ax.scatter(est[:, 1], est[:, 0]*1e9, s=4, c="w", label="estimates")
    ax.set_xlabel("Doppler shift [Hz]")
    ax.set_ylabel("delay [ns]")
    if tracks or estimates is not None:
        ax.legend(loc="upper right", fontsize="small")
    return im


def save_max_hold_png(path, m, tau_axis, alpha_axis, tracks=None, estimates=None,
                      title: Optional[str] = None, dynamic_range_db=60.):
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    im = plot_max_hold(ax, m, tau_axis, alpha_axis, tracks, estimates, dynamic_range_db)
    fig.colorbar(im, ax=ax, label="dB")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def ewma(array, alpha):
    """
    Exponential weighted moving average with decay alpha.

    Copyright snooper77 and William Miller, licensed under CC BY-SA 4.0
    https://stackoverflow.com/a/59199643/4521118
    """
    if alpha == 0.0:
        return array
    b = [1-alpha]
    a = [1, -alpha]
    zi = scipy.signal.lfiltic(b, a, array[0:1], [0])
    return scipy.signal.lfilter(b, a, array, zi=zi)[0]


def plot_training_log(ax, history, ewma_alpha: float = 0.0):
    "training and validation loss per epoch, optionally smoothed"
    df = history.to_frame()
    ax.plot(df["epoch"], ewma(df["mean_loss"].to_numpy(), ewma_alpha), label="train")
    if np.any(np.isfinite(df["val_loss"])):
        ax.plot(df["epoch"], ewma(df["val_loss"].to_numpy(), ewma_alpha), label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("binary cross-entropy")
    ax.set_yscale("log")
    ax.legend()
