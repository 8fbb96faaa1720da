"""Rotation augmentation: each rotation of a class becomes a new class."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .taskgen import FlatDataset


def rotate90(grid) -> np.ndarray:
    """Rotate 90 degrees clockwise: ``out[i][j] = grid[h-1-j][i]``."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ConfigError("rotate90 expects a 2-D grid")
    return grid.T[:, ::-1]


def augment_rotations(ds: FlatDataset) -> FlatDataset:
    """Quadruple samples and classes.

    A sample of class ``c`` rotated by ``r * 90`` degrees gets label
    ``c + r * C``; the ``r = 0`` block is the original data. Refuses a dataset
    that has already been augmented.
    """
    if ds.augmented:
        raise ConfigError("dataset is already rotation-augmented")
    if ds.grid_shape is None:
        raise ConfigError("rotation augmentation needs grid-structured samples")
    h, w = ds.grid_shape
    if h != w:
        # 90-degree turns would change the feature layout
        raise ConfigError("rotation augmentation needs square grids")
    rel = ds.relabeled()
    C = rel.C_effective
    grids = rel.features.reshape(-1, h, w)
    blocks, labels = [], []
    for r in range(4):
        blocks.append(grids.reshape(len(grids), -1))
        labels.append(rel.labels + r * C)
        grids = grids.transpose(0, 2, 1)[:, :, ::-1]
    N = len(ds)
    ids = np.concatenate([ds.ids + r * (ds.ids.max() + 1) for r in range(4)])
    return FlatDataset(
        features=np.vstack(blocks),
        labels=np.concatenate(labels),
        ids=ids,
        grid_shape=ds.grid_shape,
        augmented=True,
        meta={"original_size": N, "original_classes": C},
    )
