"""
Training script for the heatmap network on synthetic snapshots, followed by
scoring both backends on the test split.
"""

import os
import json
import uuid

import numpy as np
import torch as t
from pathlib import Path
from matplotlib.figure import Figure
from sacred import Experiment
from sacred.utils import apply_backspaces_and_linefeeds
from sacred.observers import FileStorageObserver

from isac_detect import exp_utils, pipeline
from isac_detect.evaluation import evaluate_multi
from isac_detect.data import label_etas
from isac_detect.plot import plot_training_log
from isac_detect.scenario import generate_dataset
from isac_detect.training import train

ex = Experiment("heatmap_training")
ex.captured_out_filter = apply_backspaces_and_linefeeds


@ex.config
def config():
    # default configuration, "toy" (desk scale) or "full"
    preset = "toy"
    # master seed of every dataset split
    master_seed = 0
    # overrides of the preset, as a JSON object or dict
    overrides = {}
    if not isinstance(overrides, dict):
        overrides = json.loads(overrides)
    # Adam learning rate
    lr = 3e-4
    # number of epochs
    epochs = 30
    # batch size for the training
    batch_size = 32
    # "flat" or "cosine"
    lr_schedule = "flat"
    # number of test snapshots scored at the end
    n_test = 200
    # number of threads for torch
    n_threads = 1
    # whether a progressbar should be plotted to stdout during the training
    progressbar = True
    # a random unique ID for the run
    run_id = uuid.uuid4().hex
    # directory where the results will be stored
    log_dir = str(Path(__file__).resolve().parent.parent/"logs")
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        ex.observers.append(FileStorageObserver(log_dir))


@ex.capture
def get_config(preset, master_seed, overrides, lr, epochs, batch_size, lr_schedule,
               n_test):
    tree = dict(overrides)
    tree["master_seed"] = master_seed
    tree["n_test"] = n_test
    tree["train"] = dict(tree.get("train", {}), learning_rate=lr, epochs=epochs,
                         batch_size=batch_size, lr_schedule=lr_schedule)
    return exp_utils.ExperimentConfig.from_dict(tree, preset)


@ex.automain
def main(n_threads, progressbar, run_id, _run, _log):
    assert n_threads > 0
    t.set_num_threads(n_threads)
    cfg = get_config()
    _log.info(f"config {cfg.config_hash()[:12]}, run {run_id}")

    train_set = generate_dataset(cfg.scenario, cfg.train.n_train,
                                 pipeline.split_seed(cfg.master_seed, "train"))
    val_set = generate_dataset(cfg.scenario, cfg.train.n_val,
                               pipeline.split_seed(cfg.master_seed, "val")) \
        if cfg.train.n_val > 0 else None

    with exp_utils.HDF5Metrics(
            exp_utils.sneaky_artifact(_run, "metrics.h5"), "w") as metrics_saver:
        model, history = train(train_set, cfg.train, cfg.preproc, val_set,
                               metrics_saver=metrics_saver, progressbar=progressbar)
    exp_utils.save_checkpoint(exp_utils.sneaky_artifact(_run, "checkpoint.h5"),
                              model, cfg.training_hash())
    history.to_csv(exp_utils.sneaky_artifact(_run, "training_log.csv"))

    fig = Figure(figsize=(5, 3.5))
    plot_training_log(fig.add_subplot(), history, ewma_alpha=0.5)
    fig.tight_layout()
    fig.savefig(exp_utils.sneaky_artifact(_run, "training_log.png"), dpi=120)

    test_set = generate_dataset(cfg.scenario, cfg.n_test,
                                pipeline.split_seed(cfg.master_seed, "test"))
    groundtruths = [label_etas(s, cfg.preproc) for s in test_set]
    results = {"final_loss": history.mean_loss[-1],
               "final_val_loss": history.val_loss[-1]}
    model.eval()
    for backend in pipeline.BACKENDS:
        estimates = [[d.eta() for d in pipeline.detect_snapshot(s, cfg, backend, model)]
                     for s in test_set]
        report = evaluate_multi(estimates, groundtruths, cfg.eval, name=backend)
        _log.info(report.to_text())
        results.update({f"{backend}/p_d": report.p_d,
                        f"{backend}/rmse_tau": report.rmse_tau,
                        f"{backend}/rmse_alpha": report.rmse_alpha})
    return {k: (None if np.isnan(v) else float(v)) for k, v in results.items()}
