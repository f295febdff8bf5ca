import logging
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from .channel import Snapshot
from .data import FeatureDataset
from .errors import ConfigError, DataError, DivergenceError
from .models import HeatmapModel, TOY_ARCHITECTURE, build_model
from .preproc import PreprocConfig
from .utils import get_cosine_schedule

__all__ = ('TRAINING_METRICS', 'TrainConfig', 'TrainHistory', 'HeatmapTrainer', 'train')

logger = logging.getLogger(__name__)

# Feature tensors are precomputed when they fit in this many bytes
CACHE_LIMIT_BYTES = 2**30

# Columns of the metrics file, logged once per epoch
TRAINING_METRICS = ("train/mean_loss", "val/loss", "lr", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    """
    Args:
        learning_rate, beta1, beta2: Adam hyperparameters
        batch_size: mini-batch size
        epochs: passes over the training set
        seed: seeds parameter initialization and shuffling
        blob_sigma: width of the heatmap blobs, in bins
        n_train, n_val: number of training and validation snapshots
        architecture: network descriptor, see `models.build_model`
        lr_schedule: "flat" or "cosine"
        peak_threshold: heatmap level for peak extraction at inference
    """
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    blob_sigma: float = 1.5
    n_train: int = 2000
    n_val: int = 200
    architecture: Dict = field(default_factory=lambda: dict(TOY_ARCHITECTURE))
    lr_schedule: str = "flat"
    peak_threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.n_train < 1 or self.n_val < 0:
            raise ConfigError("need n_train >= 1 and n_val >= 0")
        if self.lr_schedule not in ("flat", "cosine"):
            raise ConfigError(f"lr_schedule={self.lr_schedule}")
        if not 0 < self.peak_threshold < 1:
            raise ConfigError("peak_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    epoch: List[int] = field(default_factory=list)
    mean_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(asdict(self))

    def to_csv(self, path):
        self.to_frame()[["epoch", "mean_loss", "val_loss"]].to_csv(path, index=False)


class HeatmapTrainer:
    def __init__(self, model: HeatmapModel, dataloader, dataloader_val=None,
                 epochs=30, learning_rate=3e-4, betas=(0.9, 0.999),
                 lr_schedule="flat", metrics_saver=None):
        """Minimizes the pixelwise binary cross-entropy of a heatmap model
        with Adam.

        Args:
            model (HeatmapModel): network to train, in place
            dataloader: yields (features, heatmap) training batches
            dataloader_val: yields validation batches, or None
            epochs (int): number of passes over `dataloader`
            learning_rate (float): Adam step size
            betas (tuple): Adam decay rates
            lr_schedule (str): "flat" keeps the step size, "cosine" anneals it to 0
            metrics_saver : HDF5Metrics to log metric with a certain name and value
        """
        self.model = model
        self.dataloader = dataloader
        self.dataloader_val = dataloader_val
        assert epochs >= 1
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.betas = betas
        self.lr_schedule = lr_schedule
        self.metrics_saver = metrics_saver

    def _make_scheduler(self, optimizer):
        if self.lr_schedule == "cosine":
            schedule = get_cosine_schedule(len(self.dataloader) * self.epochs)
            return torch.optim.lr_scheduler.LambdaLR(optimizer=optimizer, lr_lambda=schedule)
        elif self.lr_schedule == "flat":
            return torch.optim.lr_scheduler.LambdaLR(optimizer=optimizer, lr_lambda=lambda _: 1.)
        raise ValueError(f"self.lr_schedule={self.lr_schedule}")

    def validation_loss(self) -> float:
        if self.dataloader_val is None:
            return math.nan
        total, count = 0., 0
        with torch.no_grad():
            for x, target in self.dataloader_val:
                total += self.model.loss(x, target).item() * len(x)
                count += len(x)
        return total / count

    def run(self, progressbar=False) -> TrainHistory:
        """
        Trains the model.

        Args:
            progressbar (bool): Flag that controls whether a progressbar is printed
        """
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.learning_rate,
                                          betas=self.betas)
        self.scheduler = self._make_scheduler(self.optimizer)
        history = TrainHistory()
        logger.info(f"Training {self.model.num_parameters()} parameters for "
                    f"{self.epochs} epochs")

        if progressbar:
            epochs = tqdm(range(self.epochs), position=0, leave=True,
                          desc="Training", mininterval=2.0)
        else:
            epochs = range(self.epochs)

        start = time.time()
        for epoch in epochs:
            lr = self.optimizer.param_groups[0]["lr"]
            total, count = 0., 0
            for i, (x, target) in enumerate(self.dataloader):
                self.optimizer.zero_grad()
                loss = self.model.loss(x, target)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        f"loss became {loss.item()} at epoch {epoch}, batch {i} "
                        f"(learning rate {self.optimizer.param_groups[0]['lr']:g}, "
                        f"previous mean losses {history.mean_loss[-3:]})")
                loss.backward()
                self.optimizer.step()
                self.scheduler.step()
                total += loss.item() * len(x)
                count += len(x)

            mean_loss = total / count
            val_loss = self.validation_loss()
            history.epoch.append(epoch)
            history.mean_loss.append(mean_loss)
            history.val_loss.append(val_loss)
            history.learning_rate.append(lr)
            history.seconds.append(time.time() - start)

            if self.metrics_saver is not None:
                for name, value in zip(TRAINING_METRICS, (mean_loss, val_loss, lr,
                                                          history.seconds[-1])):
                    self.metrics_saver.add_scalar(name, value, step=epoch)
                self.metrics_saver.flush(every_s=10)
            if progressbar:
                epochs.set_postfix(loss=mean_loss, val_loss=val_loss, refresh=False)
            logger.debug(f"epoch {epoch}: loss={mean_loss:.5g} val_loss={val_loss:.5g}")

        logger.info(f"Final training loss {history.mean_loss[-1]:.5g} after "
                    f"{history.seconds[-1]:.1f}s")
        return history


def train(dataset: Sequence[Snapshot], cfg: TrainConfig, preproc: PreprocConfig,
          val_dataset: Optional[Sequence[Snapshot]] = None, metrics_saver=None,
          progressbar=False) -> Tuple[HeatmapModel, TrainHistory]:
    """Builds the network described by `cfg.architecture` and trains it on
    the heatmaps of a labeled snapshot dataset.

    Deterministic given `cfg.seed` on a single thread.
    """
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    if cfg.architecture["channels"][0] != preproc.n_channels:
        raise ConfigError(f"network expects {cfg.architecture['channels'][0]} input "
                          f"channels, preprocessing yields {preproc.n_channels}")
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.architecture)
    logger.info(f"Network {cfg.architecture} with {model.num_parameters()} parameters")

    n_bytes = len(dataset) * preproc.n_channels * preproc.n_tau * preproc.n_alpha * 4
    cache = n_bytes <= CACHE_LIMIT_BYTES
    if not cache:
        logger.info(f"features need {n_bytes/2**30:.1f} GiB, computing them on the fly")
    features = FeatureDataset(dataset, preproc, cfg.blob_sigma, cache=cache)
    generator = torch.Generator().manual_seed(cfg.seed)
    dataloader = DataLoader(features, batch_size=cfg.batch_size, shuffle=True,
                            generator=generator)
    dataloader_val = None
    if val_dataset is not None and len(val_dataset) > 0:
        dataloader_val = DataLoader(FeatureDataset(val_dataset, preproc, cfg.blob_sigma, cache=cache),
                                    batch_size=cfg.batch_size, shuffle=False)

    trainer = HeatmapTrainer(model, dataloader, dataloader_val, epochs=cfg.epochs,
                             learning_rate=cfg.learning_rate,
                             betas=(cfg.beta1, cfg.beta2), lr_schedule=cfg.lr_schedule,
                             metrics_saver=metrics_saver)
    return model, trainer.run(progressbar=progressbar)
