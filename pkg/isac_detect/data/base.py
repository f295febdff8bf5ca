import numpy as np
import torch as t
from torch.utils.data import Dataset
from typing import Sequence

from ..channel import Snapshot
from ..heatmap import render_label
from ..preproc import PreprocConfig, delay_doppler_map

__all__ = ('FeatureDataset', 'label_etas')


def label_etas(snapshot: Snapshot, cfg: PreprocConfig) -> np.ndarray:
    """Paths the heatmap should show. Static clutter is invisible after the
    clutter filter, so it is only labeled when the filter is off."""
    paths = snapshot.label.targets() if cfg.clutter_filter else snapshot.label
    return paths.etas()


class FeatureDataset(Dataset):
    """
    Pairs of (feature tensor, heatmap target) for labeled snapshots.
    The usage is:
    ```
    data = FeatureDataset(generate_dataset(spec, 2000, seed), preproc_cfg)
    x, target = data[0]  # (2 N_w, N_tau, N_alpha), (N_tau, N_alpha)
    ```
    With `cache=True` every pair is computed once, in the constructor.
    """
    def __init__(self, snapshots: Sequence[Snapshot], cfg: PreprocConfig,
                 blob_sigma: float = 1.5, cache: bool = True, dtype=t.float32):
        self.snapshots = snapshots
        self.cfg = cfg
        self.blob_sigma = blob_sigma
        self.dtype = dtype
        self._cache = None
        if cache:
            pairs = [self._compute(i) for i in range(len(snapshots))]
            self._cache = (t.stack([x for x, _ in pairs]),
                           t.stack([target for _, target in pairs]))

    def _compute(self, i):
        snapshot = self.snapshots[i]
        feat = delay_doppler_map(snapshot.y, snapshot.grid, self.cfg)
        target = render_label(label_etas(snapshot, self.cfg),
                              (feat.tau_axis, feat.alpha_axis), self.blob_sigma)
        return (t.from_numpy(feat.data).to(self.dtype),
                t.from_numpy(target).to(self.dtype))

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, i):
        if self._cache is not None:
            return self._cache[0][i], self._cache[1][i]
        return self._compute(i)

    @property
    def tensors(self):
        "all inputs and targets, like `TensorDataset.tensors`"
        if self._cache is None:
            pairs = [self._compute(i) for i in range(len(self))]
            return (t.stack([x for x, _ in pairs]), t.stack([y for _, y in pairs]))
        return self._cache
