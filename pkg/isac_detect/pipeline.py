"""
Experiment stages: generate, train, detect, eval, replica and report.

Every stage reads its inputs from and writes its artifacts below
`cfg.out_dir`, and records them in the run manifest `manifest.json`.
"""
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import __version__
from .channel import Snapshot
from .data.base import label_etas
from .data.replica import TRACK_NAMES, ReplicaLink, simulate_replica
from .detector import Detection, detect
from .errors import ConfigError, DataError, FormatError
from .evaluation import (EvalConfig, EvalReport, collect_reports, evaluate_multi,
                         evaluate_track, max_hold, write_reports)
from .exp_utils import (ExperimentConfig, HDF5Metrics, checkpoint_hash,
                        load_checkpoint, save_checkpoint)
from .formats import (read_detections, read_snapshot, write_detections,
                      write_feature_tensor, write_snapshot)
from .heatmap import detect_neural
from .plot import export_map_pgm, save_max_hold_png
from .preproc import PreprocConfig, delay_axis, doppler_axis, magnitude_map
from .scenario import generate_dataset
from .training import train

__all__ = ('BACKENDS', 'SPLITS', 'RunManifest', 'split_seed', 'dataset_dir',
           'cmd_generate', 'cmd_train', 'cmd_detect', 'cmd_eval', 'cmd_replica',
           'cmd_report', 'detect_snapshot', 'load_dataset')

logger = logging.getLogger(__name__)

BACKENDS = ("classical", "neural")
SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Artifacts of a run directory with their SHA-256 digests, and the
    wall-clock seconds of every stage."""
    config_hash: str
    version: str = __version__
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def open(cls, cfg: ExperimentConfig) -> "RunManifest":
        "the manifest of `cfg.out_dir`, or a fresh one if it belongs to another config"
        path = Path(cfg.out_dir) / MANIFEST
        config_hash = cfg.config_hash()
        if path.exists():
            d = json.loads(path.read_text())
            if d.get("config_hash") == config_hash:
                return cls(**d)
            logger.warning(f"{path} belongs to config {d.get('config_hash')}, starting "
                           "a new manifest")
        return cls(config_hash)

    def add(self, out_dir, path):
        path = Path(path)
        self.artifacts[str(path.relative_to(out_dir))] = _sha256(path)

    def save(self, out_dir):
        d = asdict(self)
        d["artifacts"] = dict(sorted(self.artifacts.items()))
        (Path(out_dir) / MANIFEST).write_text(json.dumps(d, indent=1))


@contextmanager
def _stage(cfg: ExperimentConfig, name: str):
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.open(cfg)
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(cfg.to_dict(with_out_dir=False), indent=1,
                                      sort_keys=True))
    manifest.add(out_dir, config_path)
    start = time.time()
    yield manifest
    manifest.timings[name] = time.time() - start
    manifest.save(out_dir)
    logger.info(f"{name} finished in {manifest.timings[name]:.1f}s")


def split_seed(master_seed: int, split: str) -> int:
    "master seed of a dataset split; the splits never share snapshots"
    if split not in SPLITS:
        raise ConfigError(f"Unknown split='{split}', expected one of {SPLITS}")
    return 3*int(master_seed) + SPLITS.index(split)


def dataset_dir(cfg: ExperimentConfig, split: str = "test") -> Path:
    return Path(cfg.out_dir) / "data" / split


def _snapshot_path(directory: Path, index: int) -> Path:
    return directory / f"snapshot_{index:06d}.dds"


def cmd_generate(cfg: ExperimentConfig, count: Optional[int] = None, split: str = "test",
                 progressbar: bool = False) -> List[Path]:
    """Writes `count` DDS1 snapshots with label sidecars to `dataset_dir`.

    The files only depend on the configuration, so two runs are byte-identical.
    """
    count = cfg.n_test if count is None else count
    dataset = generate_dataset(cfg.scenario, count, split_seed(cfg.master_seed, split))
    out = dataset_dir(cfg, split)
    with _stage(cfg, f"generate/{split}") as manifest:
        out.mkdir(parents=True, exist_ok=True)
        indices = range(len(dataset))
        if progressbar:
            indices = tqdm(indices, desc="Generating", mininterval=2.0)
        paths = []
        for i in indices:
            path = _snapshot_path(out, i)
            write_snapshot(path, dataset[i], cfg.config_hash())
            manifest.add(cfg.out_dir, path)
            manifest.add(cfg.out_dir, path.with_suffix(".json"))
            paths.append(path)
    logger.info(f"wrote {count} snapshots to {out}")
    return paths


def load_dataset(cfg: ExperimentConfig, split: str = "test") -> Dict[int, Snapshot]:
    "snapshots of a generated split by index; grids must match the configuration"
    directory = dataset_dir(cfg, split)
    paths = sorted(directory.glob("snapshot_*.dds"))
    if not paths:
        raise DataError(f"no snapshots in {directory}; run `generate` first")
    snapshots = {}
    for path in paths:
        snapshot = read_snapshot(path)
        if snapshot.grid.shape != cfg.grid.shape:
            raise FormatError(f"{path}: grid {snapshot.grid.shape} does not match the "
                              f"configured {cfg.grid.shape}")
        snapshots[int(path.stem.split("_")[1])] = snapshot
    return snapshots


def _checkpoint_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "model" / "checkpoint.h5"


def cmd_train(cfg: ExperimentConfig, progressbar: bool = False) -> Path:
    """Trains the network, unless the checkpoint of an identical training
    configuration already exists."""
    path = _checkpoint_path(cfg)
    training_hash = cfg.training_hash()
    if checkpoint_hash(path) == training_hash:
        logger.warning(f"reusing {path}, trained under the same configuration")
        return path

    train_set = generate_dataset(cfg.scenario, cfg.train.n_train,
                                 split_seed(cfg.master_seed, "train"))
    val_set = None
    if cfg.train.n_val > 0:
        val_set = generate_dataset(cfg.scenario, cfg.train.n_val,
                                   split_seed(cfg.master_seed, "val"))
    with _stage(cfg, "train") as manifest:
        path.parent.mkdir(parents=True, exist_ok=True)
        metrics_path = path.parent / "metrics.h5"
        with HDF5Metrics(metrics_path, "w") as metrics_saver:
            model, history = train(train_set, cfg.train, cfg.preproc, val_set,
                                   metrics_saver=metrics_saver, progressbar=progressbar)
        save_checkpoint(path, model, training_hash)
        log_path = path.parent / "training_log.csv"
        history.to_csv(log_path)
        for p in (path, metrics_path, log_path):
            manifest.add(cfg.out_dir, p)
    return path


def detect_snapshot(snapshot: Snapshot, cfg: ExperimentConfig, backend: str,
                    model=None) -> List[Detection]:
    "both backends see the clutter-filtered snapshot when the filter is on"
    if backend == "classical":
        return detect(snapshot, cfg.detector, clutter_filter=cfg.preproc.clutter_filter)
    elif backend == "neural":
        return detect_neural(snapshot, model, cfg.preproc,
                             threshold=cfg.train.peak_threshold)
    raise ConfigError(f"Unknown backend='{backend}', expected one of {BACKENDS}")


def _detections_path(cfg, backend) -> Path:
    return Path(cfg.out_dir) / f"detections_{backend}.csv"


def cmd_detect(cfg: ExperimentConfig, backend: str = "classical",
               progressbar: bool = False) -> Path:
    if backend not in BACKENDS:
        raise ConfigError(f"Unknown backend='{backend}', expected one of {BACKENDS}")
    model = None
    if backend == "neural":
        model, trained_hash = load_checkpoint(_checkpoint_path(cfg))
        if trained_hash != cfg.training_hash():
            logger.warning("the checkpoint was trained under a different configuration")
    snapshots = load_dataset(cfg)

    with _stage(cfg, f"detect/{backend}") as manifest:
        items = snapshots.items()
        if progressbar:
            items = tqdm(items, desc=f"Detecting ({backend})", mininterval=2.0)
        detections = {idx: detect_snapshot(s, cfg, backend, model) for idx, s in items}
        path = _detections_path(cfg, backend)
        write_detections(path, detections)
        manifest.add(cfg.out_dir, path)
    n = sum(len(d) for d in detections.values())
    logger.info(f"{backend}: {n} detections in {len(detections)} snapshots")
    return path


def _export_map(manifest, out_dir, stem: Path, m, tau_axis, alpha_axis, config_hash,
                tracks=None, estimates=None, title=None):
    write_feature_tensor(stem.with_suffix(".ftn"), m, tau_axis, alpha_axis, config_hash)
    export_map_pgm(stem.with_suffix(".pgm"), m)
    save_max_hold_png(stem.with_suffix(".png"), m, tau_axis, alpha_axis, tracks,
                      estimates, title)
    for suffix in (".ftn", ".pgm", ".png"):
        manifest.add(out_dir, stem.with_suffix(suffix))


def cmd_eval(cfg: ExperimentConfig, backend: str = "classical") -> EvalReport:
    """Scores the detections of one backend against the labels of the test
    split and exports the max-hold map of the split."""
    snapshots = load_dataset(cfg)
    path = _detections_path(cfg, backend)
    if not path.exists():
        raise DataError(f"no detections at {path}; run `detect --backend {backend}` first")
    detections = read_detections(path)
    unknown = sorted(set(detections) - set(snapshots))
    if unknown:
        raise DataError(f"{path} holds detections of snapshots {unknown[:20]} that are "
                        "not in the test split")

    unlabeled = [i for i, s in snapshots.items() if s.label is None]
    if unlabeled:
        raise DataError(f"snapshots {unlabeled[:20]} have no label sidecar")
    indices = sorted(snapshots)
    estimates = [[d.eta() for d in detections.get(i, [])] for i in indices]
    groundtruths = [label_etas(snapshots[i], cfg.preproc) for i in indices]
    with _stage(cfg, f"eval/{backend}") as manifest:
        report = evaluate_multi(estimates, groundtruths, cfg.eval,
                                name=f"synthetic/{backend}", snapshot_indices=indices)
        out = Path(cfg.out_dir)
        csv_path, txt_path = out / f"report_{backend}.csv", out / f"report_{backend}.txt"
        write_reports([report], csv_path, txt_path)
        table_path = out / f"assignments_{backend}.csv"
        report.assignments.to_csv(table_path, index=False)

        m = max_hold(magnitude_map(s.y, s.grid, cfg.preproc) for s in snapshots.values())
        _export_map(manifest, out, out / "max_hold", m, delay_axis(cfg.grid, cfg.preproc),
                    doppler_axis(cfg.grid, cfg.preproc), cfg.config_hash(),
                    estimates=[eta for ests in estimates for eta in ests],
                    title=f"max-hold, {backend} estimates")
        for p in (csv_path, txt_path, table_path):
            manifest.add(cfg.out_dir, p)
    logger.info(report.to_text())
    return report


def _replica_preproc(cfg: ExperimentConfig) -> PreprocConfig:
    tau_max, alpha_max = cfg.replica.gate()
    return PreprocConfig(nw=cfg.preproc.nw, n_windows=1, tau_max=tau_max,
                         alpha_max=alpha_max, n_tau=256, n_alpha=128)


def _replica_detections(link: ReplicaLink, cfg: ExperimentConfig, filtered: bool,
                        progressbar: bool) -> List[List[Detection]]:
    tau_max, alpha_max = cfg.replica.gate()
    link_cfg = cfg.replace(detector=replace(cfg.detector, tau_max=tau_max,
                                            alpha_max=alpha_max),
                           preproc=replace(cfg.preproc, clutter_filter=filtered))
    snapshots = link.snapshots
    if progressbar:
        snapshots = tqdm(snapshots, desc=f"Detecting {link.name}", mininterval=2.0)
    return [detect_snapshot(s, link_cfg, "classical") for s in snapshots]


def _track_reports(link: ReplicaLink, detections, eval_cfg: EvalConfig, suffix=""
                   ) -> List[EvalReport]:
    estimates = [[d.eta() for d in dets] for dets in detections]
    return [evaluate_track(estimates, link.groundtruth[track], eval_cfg,
                           name=f"{link.name} {track}{suffix}")
            for track in TRACK_NAMES]


def cmd_replica(cfg: ExperimentConfig, ablation: bool = True,
                progressbar: bool = False) -> Dict[str, List[EvalReport]]:
    """Simulates the three receivers of the replica scenario, detects with
    the classical backend behind the clutter filter and scores every track.

    Writes `replica/report.csv` with one UAV row per receiver, and
    `replica/tracks.csv` with every track, with and (if `ablation`) without
    the clutter filter.

    Returns:
        {"uav": [...], "tracks": [...]} reports
    """
    out = Path(cfg.out_dir) / "replica"
    eval_cfg = EvalConfig.for_grid(cfg.replica.grid)
    preproc = _replica_preproc(cfg)
    with _stage(cfg, "replica") as manifest:
        out.mkdir(parents=True, exist_ok=True)
        links = simulate_replica(cfg.replica, cfg.master_seed, progressbar)
        uav_reports, track_reports = [], []
        for link in links:
            stem = link.name.lower().replace(" ", "")
            detections = _replica_detections(link, cfg, True, progressbar)
            reports = _track_reports(link, detections, eval_cfg)
            uav = reports[TRACK_NAMES.index("UAV")]
            uav_reports.append(replace(uav, name=link.name))
            track_reports.extend(reports)
            if ablation:
                unfiltered = _replica_detections(link, cfg, False, progressbar)
                track_reports.extend(_track_reports(link, unfiltered, eval_cfg,
                                                    " (no clutter filter)"))

            det_path = out / f"detections_{stem}.csv"
            write_detections(det_path, dict(enumerate(detections)))
            gt_path = out / f"groundtruth_{stem}.csv"
            pd.DataFrame({"snapshot_index": np.arange(len(link.times)), "t": link.times,
                          **{f"{track} tau_s": link.groundtruth[track][:, 0]
                             for track in TRACK_NAMES},
                          **{f"{track} alpha_hz": link.groundtruth[track][:, 1]
                             for track in TRACK_NAMES}}
                         ).to_csv(gt_path, index=False, float_format="%.17g")
            m = max_hold(magnitude_map(s.y, s.grid, preproc) for s in link.snapshots)
            _export_map(manifest, cfg.out_dir, out / f"max_hold_{stem}", m,
                        delay_axis(link.snapshots[0].grid, preproc),
                        doppler_axis(link.snapshots[0].grid, preproc), cfg.config_hash(),
                        tracks=link.groundtruth,
                        estimates=[d.eta() for dets in detections for d in dets],
                        title=link.name)
            manifest.add(cfg.out_dir, det_path)
            manifest.add(cfg.out_dir, gt_path)

        write_reports(uav_reports, out / "report.csv", out / "report.txt")
        write_reports(track_reports, out / "tracks.csv", out / "tracks.txt")
        for name in ("report.csv", "report.txt", "tracks.csv", "tracks.txt"):
            manifest.add(cfg.out_dir, out / name)
    for r in uav_reports:
        logger.info(r.to_text())
    return {"uav": uav_reports, "tracks": track_reports}


def cmd_report(root) -> pd.DataFrame:
    "every report CSV below `root` in one table, written to `root/summary.csv`"
    df = collect_reports(root, "**/report*.csv")
    df.to_csv(Path(root) / "summary.csv", index=False)
    return df
