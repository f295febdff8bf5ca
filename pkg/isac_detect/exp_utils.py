import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import h5py
import numpy as np
import sacred
import torch as t

from .channel import SamplingGrid
from .data.replica import ReplicaConfig
from .detector import DetectorConfig
from .errors import ConfigError, FormatError, MissingCheckpointError
from .evaluation import EvalConfig
from .models import HeatmapModel, build_model
from .preproc import PreprocConfig
from .scenario import ScenarioSpec
from .training import TRAINING_METRICS, TrainConfig
from .utils import canonical_json, stable_hash

__all__ = ('PRESETS', 'get_preset', 'ExperimentConfig', 'load_config',
           'HDF5Metrics', 'load_metrics', 'CHECKPOINT_FORMAT',
           'save_checkpoint', 'load_checkpoint', 'checkpoint_hash',
           'sneaky_artifact')

PathLike = Union[str, Path]

PRESETS = ("toy", "full")


def _toy_preset() -> dict:
    # 80 MHz and 32 ms like the measurement, on a 64x32 grid
    grid = SamplingGrid(n_freq=64, n_time=32, delta_f=1.25e6, delta_t=1e-3)
    # the replica keeps the measured slow-time sampling on a quarter of the band
    replica_grid = SamplingGrid(n_freq=256, n_time=100, delta_f=312.5e3, delta_t=320e-6)
    return {
        "preset": "toy",
        "master_seed": 0,
        "n_test": 200,
        "scenario": ScenarioSpec(grid, n_paths_range=(1, 5), tau_range=(0., 0.2),
                                 alpha_range=(-0.2, 0.2), magnitude_range=(0.1, 1.),
                                 snr_range_db=(10., 50.)).to_dict(),
        "preproc": PreprocConfig(tau_max=0.25, alpha_max=0.25, n_tau=64,
                                 n_alpha=64).to_dict(),
        "detector": DetectorConfig(tau_max=0.25, alpha_max=0.25).to_dict(),
        "train": TrainConfig().to_dict(),
        "eval": {"eps_tau": None, "eps_alpha": None},
        "replica": ReplicaConfig(grid=replica_grid, n_snapshots=50).to_dict(),
    }


def _full_preset() -> dict:
    grid = SamplingGrid(n_freq=1024, n_time=100, delta_f=62.5e3, delta_t=320e-6)
    architecture = {"channels": [6, 32, 64, 64, 32, 1], "strides": [1, 2, 2, 1, 1],
                    "kernel_size": 3}
    return {
        "preset": "full",
        "master_seed": 0,
        "n_test": 1000,
        "scenario": ScenarioSpec(grid).to_dict(),
        "preproc": PreprocConfig().to_dict(),
        "detector": DetectorConfig(tau_max=0.02, alpha_max=0.05).to_dict(),
        "train": TrainConfig(batch_size=512, epochs=100, n_train=200000, n_val=2000,
                             architecture=architecture).to_dict(),
        "eval": {"eps_tau": None, "eps_alpha": None},
        "replica": ReplicaConfig().to_dict(),
    }


def get_preset(preset: str) -> dict:
    "JSON-compatible default configuration tree"
    if preset == "toy":
        return _toy_preset()
    elif preset == "full":
        return _full_preset()
    raise ConfigError(f"Unknown preset='{preset}', expected one of {PRESETS}")


def _deep_update(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "architecture":
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    """Every setting of a run. `out_dir` only says where artifacts go and is
    not part of `config_hash`."""
    scenario: ScenarioSpec
    preproc: PreprocConfig
    detector: DetectorConfig
    train: TrainConfig
    eval: EvalConfig
    replica: ReplicaConfig
    master_seed: int = 0
    n_test: int = 200
    preset: str = "toy"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.n_test < 1:
            raise ConfigError("n_test must be >= 1")
        if self.train.architecture["channels"][0] != self.preproc.n_channels:
            raise ConfigError(
                f"network input channels {self.train.architecture['channels'][0]} "
                f"!= 2 n_windows = {self.preproc.n_channels}")

    @property
    def grid(self) -> SamplingGrid:
        return self.scenario.grid

    def to_dict(self, with_out_dir: bool = True) -> dict:
        d = {
            "preset": self.preset,
            "master_seed": self.master_seed,
            "n_test": self.n_test,
            "scenario": self.scenario.to_dict(),
            "preproc": self.preproc.to_dict(),
            "detector": self.detector.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "replica": self.replica.to_dict(),
        }
        if with_out_dir:
            d["out_dir"] = str(self.out_dir)
        return d

    def canonical(self) -> str:
        return canonical_json(self.to_dict(with_out_dir=False))

    def config_hash(self) -> str:
        return stable_hash(self.to_dict(with_out_dir=False))

    def training_hash(self) -> str:
        "hash of everything the trained network depends on"
        return stable_hash({"scenario": self.scenario.to_dict(),
                            "preproc": self.preproc.to_dict(),
                            "train": self.train.to_dict(),
                            "master_seed": self.master_seed})

    @classmethod
    def from_dict(cls, tree: dict, preset: Optional[str] = None) -> "ExperimentConfig":
        """Missing keys take the defaults of `preset`, or of the tree's own
        "preset" entry, or of "toy"."""
        preset = preset or tree.get("preset", "toy")
        defaults = get_preset(preset)
        unknown = set(tree) - set(defaults) - {"out_dir"}
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        d = _deep_update(defaults, tree)
        for section in ("scenario", "replica"):
            grid = tree.get(section, {}).get("grid", {})
            if grid and "f_start" not in grid:
                # recentre the band of a resized grid
                d[section]["grid"]["f_start"] = None
        d["preset"] = preset
        try:
            scenario = ScenarioSpec.from_dict(d["scenario"])
            ev = d["eval"]
            if ev.get("eps_tau") is None or ev.get("eps_alpha") is None:
                default = EvalConfig.for_grid(scenario.grid)
                ev = {"eps_tau": ev.get("eps_tau") or default.eps_tau,
                      "eps_alpha": ev.get("eps_alpha") or default.eps_alpha}
            return cls(
                scenario=scenario,
                preproc=PreprocConfig.from_dict(d["preproc"]),
                detector=DetectorConfig.from_dict(d["detector"]),
                train=TrainConfig.from_dict(d["train"]),
                eval=EvalConfig.from_dict(ev),
                replica=ReplicaConfig.from_dict(d["replica"]),
                master_seed=int(d["master_seed"]),
                n_test=int(d["n_test"]),
                preset=preset,
                out_dir=str(d.get("out_dir", "runs/default")))
        except TypeError as e:
            # unexpected keyword arguments
            raise ConfigError(f"invalid configuration: {e}") from e

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.copy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        new.__post_init__()
        return new


def load_config(path: Optional[PathLike] = None, preset: Optional[str] = None
                ) -> ExperimentConfig:
    tree = {}
    if path is not None:
        try:
            tree = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(tree, dict):
            raise ConfigError(f"{path} must hold a JSON object")
    return ExperimentConfig.from_dict(tree, preset)


def _missing_value(dtype):
    "NaN for float columns, the smallest integer for integer columns"
    dtype = np.dtype(dtype)
    if np.issubdtype(dtype, np.integer):
        return np.iinfo(dtype).min
    return np.nan


class HDF5Metrics:
    """Per-epoch training metrics in a new HDF5 file, one row per step.

    The file holds the int64 column `steps`, the float64 column `timestamps`
    and one float64 column per name in `columns`, all of equal length. It
    is in SWMR mode, so `load_metrics` can read it while training runs. A
    metric not logged at some step reads back as NaN.

    Args:
        path: file to create
        mode: h5py mode, "w" to overwrite or "x" to fail if the file exists
        columns: metric names, HDF5 paths such as "train/mean_loss"
        chunk_size: rows per HDF5 chunk
    """
    def __init__(self, path, mode="w", columns=TRAINING_METRICS, chunk_size=256):
        if mode not in ("w", "x"):
            raise ValueError(f"metrics files are created, got mode={mode!r}")
        self.path = path
        self.mode = mode
        self.schema = [("steps", np.int64), ("timestamps", np.float64)] + \
            [(name, np.float64) for name in columns]
        self.schema_names = [name for name, _ in self.schema]
        self.chunk_size = chunk_size
        self._step = None
        # rows not on disk yet, the last one may still change
        self._rows = []
        self._n_final = 0
        self.last_flush = time.time()

    def __enter__(self):
        self.f = h5py.File(self.path, self.mode, libver="latest")
        for name, dtype in self.schema:
            self.f.create_dataset(name, shape=(0,), maxshape=(None,), dtype=dtype,
                                  chunks=(self.chunk_size,), fletcher32=True,
                                  fillvalue=_missing_value(dtype))
        # no datasets can be created from here on
        self.f.swmr_mode = True
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.flush()
        self.f.close()

    def add_scalar(self, name, value, step):
        if name not in self.schema_names[2:]:
            raise KeyError(f"'{name}' is not a metric column of {self.path}")
        if self._step is None or step > self._step:
            self._step = step
            self._rows.append({"steps": step, "timestamps": time.time()})
        elif step < self._step:
            raise ValueError(f"step went backwards ({self._step} -> {step})")
        self._rows[-1][name] = value

    def flush(self, every_s=0):
        "writes the pending rows, at most every `every_s` seconds"
        if not self._rows:
            return
        now = time.time()
        if every_s > 0 and now - self.last_flush <= every_s:
            return
        self.last_flush = now
        n = self._n_final + len(self._rows)
        for name, dtype in self.schema:
            dset = self.f[name]
            dset.resize((n,))
            dset[self._n_final:n] = np.array(
                [row.get(name, _missing_value(dtype)) for row in self._rows], dtype=dtype)
        self.f.flush()
        self._n_final = n - 1
        self._rows = self._rows[-1:]


def load_metrics(path: PathLike) -> Dict[str, np.ndarray]:
    "every column of a metrics file by its HDF5 path"
    columns = {}
    with h5py.File(path, "r", swmr=True) as f:
        def _visit(name, obj):
            if isinstance(obj, h5py.Dataset):
                columns[name] = np.asarray(obj[:])
        f.visititems(_visit)
    return columns


CHECKPOINT_FORMAT = "NNP1"


def _attr_str(value) -> str:
    return value.decode("utf-8") if isinstance(value, bytes) else str(value)


def save_checkpoint(path: PathLike, model: HeatmapModel, config_hash: str = ""):
    "one dataset per named tensor, architecture and hash as root attributes"
    with h5py.File(path, "w") as f:
        f.attrs["format"] = CHECKPOINT_FORMAT
        f.attrs["architecture"] = canonical_json(model.architecture)
        f.attrs["config_hash"] = config_hash
        for name, tensor in model.state_dict().items():
            f.create_dataset(name, data=tensor.detach().cpu().numpy(),
                             track_times=False)


def checkpoint_hash(path: PathLike) -> Optional[str]:
    "the config hash stored in a checkpoint, None if there is no readable one"
    try:
        with h5py.File(path, "r") as f:
            if _attr_str(f.attrs.get("format", "")) != CHECKPOINT_FORMAT:
                return None
            return _attr_str(f.attrs.get("config_hash", ""))
    except OSError:
        return None


def load_checkpoint(path: PathLike, device: Union[str, t.device] = "cpu"
                    ) -> Tuple[HeatmapModel, str]:
    """
    Returns:
        the model in eval mode and the config hash it was trained under
    """
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"no checkpoint at {path}; run `train` first")
    try:
        f = h5py.File(path, "r")
    except OSError as e:
        raise FormatError(f"{path} is not an HDF5 checkpoint: {e}") from e
    with f:
        fmt = _attr_str(f.attrs.get("format", ""))
        if fmt != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: format tag {fmt!r}, expected {CHECKPOINT_FORMAT!r}")
        architecture = json.loads(_attr_str(f.attrs["architecture"]))
        config_hash = _attr_str(f.attrs.get("config_hash", ""))
        state_dict = {k: t.from_numpy(np.asarray(v[()])) for k, v in f.items()}
    model = build_model(architecture)
    try:
        model.load_state_dict(state_dict)
    except RuntimeError as e:
        raise FormatError(f"{path}: tensors do not match the architecture: {e}") from e
    return model.to(device).eval(), config_hash


def sneaky_artifact(_run, name):
    """modifed `artifact_event` from `sacred.observers.FileStorageObserver`
    Returns path to the name.
    """
    obs = _run.observers[0]
    assert isinstance(obs, sacred.observers.FileStorageObserver)
    obs.run_entry["artifacts"].append(name)
    obs.save_json(obs.run_entry, "run.json")
    return Path(obs.dir)/name
