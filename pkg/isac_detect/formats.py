"""
File formats: DDS1 snapshots with JSON label sidecars, FTN1 feature tensors
and maps, detection CSVs and PGM map images.

All binary headers are little-endian and described by numpy structured
dtypes.
"""
import json
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image

from .channel import PathSet, SamplingGrid, Snapshot
from .detector import Detection
from .errors import FormatError

__all__ = ('DDS1_HEADER', 'FTN1_HEADER', 'write_snapshot', 'read_snapshot',
           'write_label', 'read_label', 'FeatureFile', 'write_feature_tensor',
           'read_feature_tensor', 'DETECTION_COLUMNS', 'write_detections',
           'read_detections', 'write_pgm', 'read_pgm')

PathLike = Union[str, Path]

DDS1_HEADER = np.dtype([
    ("magic", "S4"), ("n_freq", "<u4"), ("n_time", "<u4"),
    ("delta_f", "<f8"), ("delta_t", "<f8"), ("f_start", "<f8"),
    ("t_start", "<f8"), ("carrier_hz", "<f8")])

FTN1_HEADER = np.dtype([
    ("magic", "S4"), ("ndim", "<u4"), ("shape", "<u4", (3,)),
    ("tau_start", "<f8"), ("tau_step", "<f8"),
    ("alpha_start", "<f8"), ("alpha_step", "<f8"),
    ("config_hash", "S64")])


def _read_header(f, dtype, magic, path):
    raw = f.read(dtype.itemsize)
    if len(raw) != dtype.itemsize:
        raise FormatError(f"{path}: truncated header")
    header = np.frombuffer(raw, dtype=dtype)[0]
    if header["magic"] != magic:
        raise FormatError(f"{path}: bad magic {header['magic']!r}, expected {magic!r}")
    return header


def write_snapshot(path: PathLike, snapshot: Snapshot, config_hash: str = ""):
    "Writes the DDS1 file and, if the snapshot is labeled, the label sidecar."
    g = snapshot.grid
    header = np.array([(b"DDS1", g.n_freq, g.n_time, g.delta_f, g.delta_t,
                        g.f_start, g.t_start, g.carrier_hz)], dtype=DDS1_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(snapshot.y, dtype="<c8").tobytes())
    if snapshot.label is not None:
        write_label(label_path(path), snapshot, config_hash)


def label_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def read_snapshot(path: PathLike, with_label: bool = True) -> Snapshot:
    path = Path(path)
    with open(path, "rb") as f:
        h = _read_header(f, DDS1_HEADER, b"DDS1", path)
        n = int(h["n_freq"]) * int(h["n_time"])
        y = np.frombuffer(f.read(), dtype="<c8")
    if len(y) != n:
        raise FormatError(f"{path}: expected {n} samples, found {len(y)}")
    grid = SamplingGrid(int(h["n_freq"]), int(h["n_time"]), float(h["delta_f"]),
                        float(h["delta_t"]), float(h["f_start"]), float(h["t_start"]),
                        float(h["carrier_hz"]))
    snapshot = Snapshot(grid, y.reshape(grid.shape).astype(np.complex128))
    if with_label and label_path(path).exists():
        meta = read_label(label_path(path))
        snapshot.label = meta["label"]
        snapshot.snr_db = meta["snr_db"]
        snapshot.noise_var = meta["noise_var"]
        snapshot.seed = meta["seed"]
    return snapshot


def write_label(path: PathLike, snapshot: Snapshot, config_hash: str = ""):
    record = {
        "format": "DDS1-label",
        "paths": snapshot.label.to_records(),
        "snr_db": snapshot.snr_db,
        "noise_var": snapshot.noise_var,
        "seed": list(snapshot.seed) if snapshot.seed is not None else None,
        "config_hash": config_hash,
    }
    Path(path).write_text(json.dumps(record, indent=1))


def read_label(path: PathLike) -> dict:
    try:
        record = json.loads(Path(path).read_text())
        label = PathSet.from_records(record["paths"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed label sidecar ({e})") from e
    seed = record.get("seed")
    return {"label": label, "snr_db": record.get("snr_db"),
            "noise_var": record.get("noise_var"),
            "seed": tuple(seed) if seed is not None else None,
            "config_hash": record.get("config_hash", "")}


class FeatureFile(NamedTuple):
    data: np.ndarray
    tau_axis: np.ndarray
    alpha_axis: np.ndarray
    config_hash: str


def write_feature_tensor(path: PathLike, data: np.ndarray, tau_axis, alpha_axis,
                         config_hash: str = ""):
    """FTN1 export of a (C, N_tau, N_alpha) tensor or an (N_tau, N_alpha) map
    as row-major float32."""
    data = np.asarray(data)
    if data.ndim not in (2, 3):
        raise FormatError(f"FTN1 stores 2D or 3D arrays, got shape {data.shape}")
    shape = (1,)*(3 - data.ndim) + data.shape
    tau_step = tau_axis[1] - tau_axis[0] if len(tau_axis) > 1 else 0.
    alpha_step = alpha_axis[1] - alpha_axis[0] if len(alpha_axis) > 1 else 0.
    header = np.zeros(1, dtype=FTN1_HEADER)
    header[0] = (b"FTN1", data.ndim, shape, tau_axis[0], tau_step,
                 alpha_axis[0], alpha_step, config_hash.encode("ascii"))
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_feature_tensor(path: PathLike) -> FeatureFile:
    path = Path(path)
    with open(path, "rb") as f:
        h = _read_header(f, FTN1_HEADER, b"FTN1", path)
        payload = np.frombuffer(f.read(), dtype="<f4")
    shape = tuple(int(s) for s in h["shape"])
    if len(payload) != math.prod(shape):
        raise FormatError(f"{path}: expected {math.prod(shape)} values, found {len(payload)}")
    data = payload.reshape(shape[3 - int(h["ndim"]):])
    n_tau, n_alpha = shape[1], shape[2]
    tau_axis = h["tau_start"] + h["tau_step"]*np.arange(n_tau)
    alpha_axis = h["alpha_start"] + h["alpha_step"]*np.arange(n_alpha)
    return FeatureFile(data, tau_axis, alpha_axis, h["config_hash"].decode("ascii"))


DETECTION_COLUMNS = ["snapshot_index", "tau_s", "alpha_hz", "gamma_re", "gamma_im", "score"]


def write_detections(path: PathLike, detections: Dict[int, Sequence[Detection]]):
    rows = [(idx, d.tau_hat, d.alpha_hat, d.gamma_hat.real, d.gamma_hat.imag, d.score)
            for idx in sorted(detections) for d in detections[idx]]
    pd.DataFrame(rows, columns=DETECTION_COLUMNS).to_csv(path, index=False, float_format="%.17g")


def read_detections(path: PathLike) -> Dict[int, List[Detection]]:
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return {}
    missing = set(DETECTION_COLUMNS) - set(df.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    out: Dict[int, List[Detection]] = {}
    for row in df.itertuples(index=False):
        out.setdefault(int(row.snapshot_index), []).append(Detection(
            float(row.tau_s), float(row.alpha_hz),
            complex(row.gamma_re, row.gamma_im), float(row.score)))
    return out


def write_pgm(path: PathLike, image: np.ndarray, lo: Optional[float] = None,
              hi: Optional[float] = None):
    "8-bit binary PGM, `lo` maps to black and `hi` to white"
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"PGM needs a 2D image, got shape {image.shape}")
    lo = np.min(image) if lo is None else lo
    hi = np.max(image) if hi is None else hi
    scaled = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    pixels = np.round(np.clip(scaled, 0, 1) * 255).astype(np.uint8)
    # Pillow writes 8-bit grayscale as binary P5
    Image.fromarray(pixels).save(path, format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.format != "PPM" or image.mode != "L":
                raise FormatError(f"{path}: not an 8-bit binary PGM "
                                  f"({image.format}, mode {image.mode})")
            image.load()
            return np.asarray(image, dtype=np.uint8)
    except OSError as e:
        raise FormatError(f"{path}: unreadable PGM ({e})") from e
