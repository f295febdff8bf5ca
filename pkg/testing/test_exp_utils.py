import unittest
import torch
from tempfile import TemporaryDirectory
from pathlib import Path

from isac_detect import exp_utils
from isac_detect.errors import ConfigError, FormatError, MissingCheckpointError
from isac_detect.models import MICRO_ARCHITECTURE, build_model
import numpy as np
import h5py


class TestConfig(unittest.TestCase):
    def test_presets(self):
        for preset in exp_utils.PRESETS:
            cfg = exp_utils.ExperimentConfig.from_dict({}, preset)
            assert cfg.preset == preset
            assert cfg.train.architecture["channels"][0] == cfg.preproc.n_channels
        with self.assertRaises(ConfigError):
            exp_utils.get_preset("huge")

    def test_toy_gates(self):
        cfg = exp_utils.load_config()
        assert np.isclose(cfg.eval.eps_tau, 3/cfg.grid.bandwidth())
        assert np.isclose(cfg.eval.eps_alpha, 3/cfg.grid.cpi())

    def test_hash(self):
        cfg = exp_utils.load_config()
        moved = cfg.replace(out_dir="elsewhere")
        assert moved.config_hash() == cfg.config_hash()
        assert len(cfg.config_hash()) == 64
        reseeded = cfg.replace(master_seed=1)
        assert reseeded.config_hash() != cfg.config_hash()
        assert reseeded.training_hash() != cfg.training_hash()
        assert cfg.replace(n_test=5).training_hash() == cfg.training_hash()
        back = exp_utils.ExperimentConfig.from_dict(cfg.to_dict())
        assert back.config_hash() == cfg.config_hash()

    def test_overrides(self):
        cfg = exp_utils.ExperimentConfig.from_dict(
            {"master_seed": 7, "detector": {"max_paths": 3}})
        assert cfg.master_seed == 7
        assert cfg.detector.max_paths == 3
        assert cfg.preproc == exp_utils.load_config().preproc

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            exp_utils.ExperimentConfig.from_dict({"bogus": 1})
        with self.assertRaises(ConfigError):
            exp_utils.ExperimentConfig.from_dict({"preproc": {"bogus": 1}})
        with self.assertRaises(ConfigError):
            exp_utils.ExperimentConfig.from_dict({"preproc": {"n_windows": 1}})
        with self.assertRaises(ConfigError):
            exp_utils.ExperimentConfig.from_dict({"n_test": 0})
        with TemporaryDirectory() as directory:
            path = Path(directory)/"config.json"
            path.write_text("{")
            with self.assertRaises(ConfigError):
                exp_utils.load_config(path)
            path.write_text("[1, 2]")
            with self.assertRaises(ConfigError):
                exp_utils.load_config(path)
            path.write_text('{"n_test": 3}')
            assert exp_utils.load_config(path).n_test == 3


class TestCheckpoint(unittest.TestCase):
    def test_round_trip(self):
        torch.manual_seed(0)
        model = build_model(MICRO_ARCHITECTURE)
        with TemporaryDirectory() as directory:
            path = Path(directory)/"model.h5"
            exp_utils.save_checkpoint(path, model, "ab"*32)
            assert exp_utils.checkpoint_hash(path) == "ab"*32
            back, config_hash = exp_utils.load_checkpoint(path)
        assert config_hash == "ab"*32
        assert back.architecture == model.architecture
        assert not back.training
        for (k, v), (k2, v2) in zip(model.state_dict().items(), back.state_dict().items()):
            assert k == k2 and torch.equal(v, v2)

    def test_missing_and_bad(self):
        with TemporaryDirectory() as directory:
            path = Path(directory)/"model.h5"
            with self.assertRaises(MissingCheckpointError):
                exp_utils.load_checkpoint(path)
            assert exp_utils.checkpoint_hash(path) is None
            path.write_bytes(b"not hdf5")
            with self.assertRaises(FormatError):
                exp_utils.load_checkpoint(path)
            with h5py.File(path, "w") as f:
                f.attrs["format"] = "XXXX"
            with self.assertRaises(FormatError):
                exp_utils.load_checkpoint(path)
            assert exp_utils.checkpoint_hash(path) is None

    def test_architecture_mismatch(self):
        model = build_model(MICRO_ARCHITECTURE)
        with TemporaryDirectory() as directory:
            path = Path(directory)/"model.h5"
            exp_utils.save_checkpoint(path, model)
            with h5py.File(path, "a") as f:
                del f["net.0.bias"]
            with self.assertRaises(FormatError):
                exp_utils.load_checkpoint(path)


class TestHDF5Metrics(unittest.TestCase):
    def test_recorded_metrics(self):
        with TemporaryDirectory() as directory:
            fname = Path(directory)/"metrics_test.h5"

            columns = ("train/step", "every5", "every11")
            with exp_utils.HDF5Metrics(fname, "w", columns=columns, chunk_size=13) as metrics:
                for step in range(-1, 100):
                    metrics.add_scalar("train/step", step, step)
                    if step == -1 or step % 5 == 0:
                        metrics.add_scalar("every5", step//5, step)
                    if step == -1 or step % 11 == 0:
                        metrics.add_scalar("every11", float(step//11), step)

                    if step % 31 == 0:
                        metrics.flush()
                        with h5py.File(fname, "r", swmr=True) as read_metrics:
                            for k in ("steps", "timestamps") + columns:
                                assert len(read_metrics[k]) == step+2

            with h5py.File(fname, "r") as f:
                for k in ("steps", "timestamps") + columns:
                    assert len(f[k]) == 101
                assert f["steps"].dtype == np.int64
                assert f["train/step"].dtype == np.float64
                assert np.all(~np.isnan(f["timestamps"][:]))
                assert np.array_equal(f["steps"][:], np.arange(-1, 100))
                assert np.array_equal(f["steps"][:], f["train/step"][:])

                assert np.array_equal(f["every5"][1::5], np.arange(100//5))
                for i in range(1, 5):
                    assert np.all(np.isnan(f["every5"][1+i::5]))
                assert np.array_equal(f["every11"][1::11], np.arange(100//11 + 1))
                for i in range(1, 11):
                    assert np.all(np.isnan(f["every11"][1+i::11]))

            metrics = exp_utils.load_metrics(fname)
            assert set(metrics) == {"steps", "timestamps", "train/step", "every5", "every11"}
            assert np.array_equal(metrics["steps"], np.arange(-1, 100))

    def test_training_columns(self):
        with TemporaryDirectory() as directory:
            fname = Path(directory)/"metrics.h5"
            with exp_utils.HDF5Metrics(fname) as metrics:
                for epoch in range(3):
                    metrics.add_scalar("train/mean_loss", 1./(epoch + 1), step=epoch)
                    metrics.add_scalar("lr", 1e-3, step=epoch)
                    metrics.flush(every_s=10)
            metrics = exp_utils.load_metrics(fname)
            assert np.allclose(metrics["train/mean_loss"], [1., 0.5, 1/3])
            assert np.all(np.isnan(metrics["val/loss"]))
            assert np.array_equal(metrics["steps"], [0, 1, 2])

    def test_invalid(self):
        with TemporaryDirectory() as directory:
            with exp_utils.HDF5Metrics(Path(directory)/"m.h5", "w") as metrics:
                metrics.add_scalar("train/mean_loss", 1., step=3)
                with self.assertRaises(ValueError):
                    metrics.add_scalar("train/mean_loss", 1., step=2)
                with self.assertRaises(KeyError):
                    metrics.add_scalar("accuracy", 1., step=4)
                with self.assertRaises(KeyError):
                    metrics.add_scalar("steps", 5, step=5)
                with self.assertRaises(KeyError):
                    metrics.add_scalar("train", 5., step=5)
            with self.assertRaises(ValueError):
                exp_utils.HDF5Metrics(Path(directory)/"m.h5", "a")
