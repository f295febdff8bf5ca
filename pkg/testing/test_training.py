import math
import unittest

import numpy as np
import torch

from isac_detect.channel import SamplingGrid
from isac_detect.errors import ConfigError, DataError, DivergenceError
from isac_detect.models import MICRO_ARCHITECTURE, TOY_ARCHITECTURE, build_model
from isac_detect.preproc import PreprocConfig
from isac_detect.scenario import ScenarioSpec, generate_dataset
from isac_detect.training import HeatmapTrainer, TrainConfig, train

GRID = SamplingGrid(64, 32, 1.25e6, 1e-3)
PREPROC = PreprocConfig(tau_max=0.25, alpha_max=0.25, n_tau=64, n_alpha=64)
SPEC = ScenarioSpec(GRID, n_paths_range=(1, 3), tau_range=(0., 0.2),
                    alpha_range=(-0.2, 0.2), snr_range_db=(20., 30.))


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.train_set = generate_dataset(SPEC, 16, 0)
        self.val_set = generate_dataset(SPEC, 4, 1)
        self.cfg = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=15,
                               n_train=16, n_val=4)

    def test_loss_decreases(self):
        model, history = train(self.train_set, self.cfg, PREPROC, val_dataset=self.val_set)
        assert len(history.mean_loss) == 15
        assert history.mean_loss[-1] < 0.7*history.mean_loss[0]
        assert all(math.isfinite(v) for v in history.val_loss)
        assert model.architecture == TOY_ARCHITECTURE
        frame = history.to_frame()
        assert list(frame["epoch"]) == list(range(15))

    def test_overfits_small_set(self):
        cfg = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=300, n_train=16, n_val=0)
        _, history = train(self.train_set, cfg, PREPROC)
        assert history.mean_loss[-1] < 0.1*history.mean_loss[0]

    def test_deterministic(self):
        cfg = TrainConfig(learning_rate=3e-3, batch_size=8, epochs=2, seed=3)
        a, history_a = train(self.train_set, cfg, PREPROC)
        b, history_b = train(self.train_set, cfg, PREPROC)
        assert np.allclose(history_a.mean_loss, history_b.mean_loss, rtol=1e-6)
        for p, q in zip(a.parameters(), b.parameters()):
            assert torch.allclose(p, q)

    def test_cosine_schedule(self):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=3, lr_schedule="cosine")
        _, history = train(self.train_set, cfg, PREPROC)
        assert history.learning_rate[0] == 1e-3
        assert history.learning_rate[2] < history.learning_rate[1] < 1e-3

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            train(self.train_set, TrainConfig(architecture=dict(MICRO_ARCHITECTURE)), PREPROC)
        with self.assertRaises(DataError):
            train([], self.cfg, PREPROC)
        with self.assertRaises(ConfigError):
            TrainConfig(lr_schedule="step")
        with self.assertRaises(ConfigError):
            TrainConfig(epochs=0)


class TestTrainer(unittest.TestCase):
    def test_divergence(self):
        model = build_model(TOY_ARCHITECTURE)
        x = torch.full((2, 6, 16, 16), math.nan)
        batches = [(x, torch.zeros(2, 16, 16))]
        with self.assertRaises(DivergenceError):
            HeatmapTrainer(model, batches, epochs=1).run()
