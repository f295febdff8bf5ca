"""
Three-receiver measurement replica: detection probability and RMSE of the
UAV track per receiver, with and without the clutter filter.
"""

import os
import json
import uuid

from pathlib import Path
from sacred import Experiment
from sacred.utils import apply_backspaces_and_linefeeds
from sacred.observers import FileStorageObserver

from isac_detect import exp_utils, pipeline

ex = Experiment("measurement_replica")
ex.captured_out_filter = apply_backspaces_and_linefeeds


@ex.config
def config():
    # default configuration, "toy" (desk scale) or "full"
    preset = "toy"
    # seed of the clutter and noise streams
    master_seed = 0
    # snapshots per receiver
    n_snapshots = 100
    # per-element SNR of every snapshot
    snr_db = 20.
    # whether to also run the detector without the clutter filter
    ablation = True
    # overrides of the preset, as a JSON object or dict
    overrides = {}
    if not isinstance(overrides, dict):
        overrides = json.loads(overrides)
    progressbar = True
    # a random unique ID for the run
    run_id = uuid.uuid4().hex
    # directory where the results will be stored
    log_dir = str(Path(__file__).resolve().parent.parent/"logs")
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        ex.observers.append(FileStorageObserver(log_dir))


@ex.automain
def main(preset, master_seed, n_snapshots, snr_db, ablation, overrides, progressbar,
         run_id, _run, _log):
    assert n_snapshots > 0
    tree = dict(overrides)
    tree["master_seed"] = master_seed
    tree["replica"] = dict(tree.get("replica", {}), n_snapshots=n_snapshots,
                           snr_db=snr_db)
    # artifacts go next to the sacred run files
    out_dir = exp_utils.sneaky_artifact(_run, "replica").parent
    tree["out_dir"] = str(out_dir)
    cfg = exp_utils.ExperimentConfig.from_dict(tree, preset)
    _log.info(f"config {cfg.config_hash()[:12]}, run {run_id}")

    reports = pipeline.cmd_replica(cfg, ablation=ablation, progressbar=progressbar)
    return {r.name: {"P_D": r.p_d, "n_meas": r.n_meas}
            for r in reports["tracks"]}
