"""
Measurement-style evaluation: groundtruth filter, detection probability, RMSE
and max-hold maps.
"""
import collections
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .channel import SamplingGrid
from .errors import ConfigError, DataError

__all__ = ('EvalConfig', 'EvalReport', 'groundtruth_filter',
           'detection_probability', 'rmse', 'max_hold', 'evaluate_track',
           'evaluate_multi', 'reports_to_frame', 'write_reports',
           'collect_reports', 'REPORT_COLUMNS')

logger = logging.getLogger(__name__)

Eta = Tuple[float, float]

REPORT_COLUMNS = ["name", "P_D", "rmse_tau_ns", "rmse_alpha_hz", "n_meas", "n_empty"]


@dataclass(frozen=True)
class EvalConfig:
    "Gate half-widths of the groundtruth filter: eps_tau in s, eps_alpha in Hz"
    eps_tau: float
    eps_alpha: float

    def __post_init__(self):
        if not (self.eps_tau > 0 and self.eps_alpha > 0):
            raise ConfigError(f"gates must be positive, got {self.eps_tau}, {self.eps_alpha}")

    @classmethod
    def for_grid(cls, grid: SamplingGrid, cells: float = 3.) -> "EvalConfig":
        "`cells` resolution cells in each dimension"
        return cls(eps_tau=cells/grid.bandwidth(), eps_alpha=cells/grid.cpi())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(**d)


def groundtruth_filter(estimates: Sequence[Eta], gt: Eta, cfg: EvalConfig
                       ) -> Optional[Eta]:
    """The estimate closest to `gt` among those strictly inside both gates.

    Distance is Euclidean after dividing each dimension by its gate; ties go
    to the lowest index. Returns None if no estimate qualifies.
    """
    best, best_dist = None, math.inf
    for est in estimates:
        d_tau = abs(est[0] - gt[0])
        d_alpha = abs(est[1] - gt[1])
        if not (d_tau < cfg.eps_tau and d_alpha < cfg.eps_alpha):
            continue
        dist = math.hypot(d_tau / cfg.eps_tau, d_alpha / cfg.eps_alpha)
        if dist < best_dist:
            best, best_dist = (float(est[0]), float(est[1])), dist
    return best


def detection_probability(assignments: Sequence[Optional[Eta]]) -> float:
    "1 - N_empty / N_meas"
    n_meas = len(assignments)
    if n_meas == 0:
        raise DataError("detection probability of zero measurements is undefined")
    n_empty = sum(a is None for a in assignments)
    return 1. - n_empty / n_meas


def rmse(assigned: Sequence[Tuple[Eta, Eta]]) -> Tuple[float, float]:
    "per-dimension root-mean-square error of (estimate, groundtruth) pairs"
    if len(assigned) == 0:
        raise DataError("RMSE of an empty assignment set is undefined")
    err = np.array([[e[0] - g[0], e[1] - g[1]] for e, g in assigned], dtype=np.float64)
    sigma = np.sqrt(np.mean(err**2, axis=0))
    return float(sigma[0]), float(sigma[1])


def max_hold(maps) -> np.ndarray:
    "elementwise maximum over a sequence of equally shaped magnitude maps"
    result = None
    for m in maps:
        m = np.asarray(m)
        if result is None:
            result = m.copy()
        elif m.shape != result.shape:
            raise DataError(f"map shape {m.shape} differs from {result.shape}")
        else:
            np.maximum(result, m, out=result)
    if result is None:
        raise DataError("max-hold of zero maps is undefined")
    return result


@dataclass
class EvalReport:
    name: str
    n_meas: int
    n_empty: int
    p_d: float
    rmse_tau: float
    rmse_alpha: float
    assignments: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    def to_row(self) -> dict:
        return {"name": self.name, "P_D": self.p_d, "rmse_tau_ns": self.rmse_tau*1e9,
                "rmse_alpha_hz": self.rmse_alpha, "n_meas": self.n_meas,
                "n_empty": self.n_empty}

    def to_text(self) -> str:
        return (f"{self.name}: P_D = {self.p_d:.2f} ({self.n_meas - self.n_empty}/"
                f"{self.n_meas} snapshots), sigma_tau = {self.rmse_tau*1e9:.1f} ns, "
                f"sigma_alpha = {self.rmse_alpha:.1f} Hz")


def _report(name, rows) -> EvalReport:
    table = pd.DataFrame(rows, columns=["snapshot_index", "gt_tau", "gt_alpha",
                                        "est_tau", "est_alpha", "assigned"])
    assignments = [(r[3], r[4]) if r[5] else None for r in rows]
    pairs = [((r[3], r[4]), (r[1], r[2])) for r in rows if r[5]]
    p_d = detection_probability(assignments)
    sigma = rmse(pairs) if pairs else (math.nan, math.nan)
    return EvalReport(name, len(rows), sum(a is None for a in assignments), p_d,
                      sigma[0], sigma[1], table)


def evaluate_track(estimates: Sequence[Sequence[Eta]], groundtruth, cfg: EvalConfig,
                   name: str = "track", snapshot_indices=None) -> EvalReport:
    """Filters the estimates of every snapshot against one groundtruth track.

    Args:
        estimates: per snapshot, the estimated (tau, alpha) pairs
        groundtruth: (S, 2) array of (tau, alpha)
    """
    groundtruth = np.asarray(groundtruth, dtype=np.float64).reshape(-1, 2)
    if len(estimates) != len(groundtruth):
        raise DataError(f"{len(estimates)} estimate sets for {len(groundtruth)} "
                        "groundtruth snapshots")
    if snapshot_indices is None:
        snapshot_indices = range(len(groundtruth))
    rows = []
    for idx, ests, gt in zip(snapshot_indices, estimates, groundtruth):
        hit = groundtruth_filter(ests, tuple(gt), cfg)
        rows.append((int(idx), gt[0], gt[1],
                     hit[0] if hit else math.nan, hit[1] if hit else math.nan,
                     hit is not None))
    return _report(name, rows)


def evaluate_multi(estimates: Sequence[Sequence[Eta]], groundtruths: Sequence,
                   cfg: EvalConfig, name: str = "synthetic",
                   snapshot_indices=None) -> EvalReport:
    """Every groundtruth path of every snapshot is one measurement, filtered
    independently. An estimate assigned to more than one groundtruth is
    flagged in the `double` column of the assignment table."""
    if len(estimates) != len(groundtruths):
        raise DataError(f"{len(estimates)} estimate sets for {len(groundtruths)} "
                        "groundtruth snapshots")
    if snapshot_indices is None:
        snapshot_indices = range(len(groundtruths))
    rows, doubles = [], []
    for idx, ests, gts in zip(snapshot_indices, estimates, groundtruths):
        gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
        hits = [groundtruth_filter(ests, tuple(gt), cfg) for gt in gts]
        counts = collections.Counter(h for h in hits if h is not None)
        for gt, hit in zip(gts, hits):
            rows.append((int(idx), gt[0], gt[1],
                         hit[0] if hit else math.nan, hit[1] if hit else math.nan,
                         hit is not None))
            doubles.append(hit is not None and counts[hit] > 1)
    if not rows:
        raise DataError("no groundtruth paths to evaluate")
    report = _report(name, rows)
    report.assignments["double"] = doubles
    n_double = int(np.sum(doubles))
    if n_double:
        logger.warning(f"{name}: {n_double} groundtruths share an estimate")
    return report


def reports_to_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def write_reports(reports: Sequence[EvalReport], csv_path: Union[str, Path],
                  txt_path: Optional[Union[str, Path]] = None):
    reports_to_frame(reports).to_csv(csv_path, index=False)
    if txt_path is not None:
        Path(txt_path).write_text("\n".join(r.to_text() for r in reports) + "\n")


def collect_reports(root: Union[str, Path], pattern: str = "**/report.csv"
                    ) -> pd.DataFrame:
    "concatenates every report CSV below `root`, tagged with its run directory"
    frames = []
    for path in sorted(Path(root).glob(pattern)):
        df = pd.read_csv(path)
        df.insert(0, "run", str(path.parent.relative_to(root)))
        frames.append(df)
    if not frames:
        raise DataError(f"no reports matching {pattern} under {root}")
    return pd.concat(frames, ignore_index=True)
