import numpy as np
import pytest

from amrvit.signal_core import SyntheticConfig, build_synthetic_dataset
from amrvit.signal_core.dataset import TRAIN, VAL, Dataset


def make_dataset(schemes, snrs=(20,), per_cell=10, seed=0) -> Dataset:
    """All rows tagged train and labeled."""
    ds = build_synthetic_dataset(SyntheticConfig(schemes=tuple(schemes), snr_list_db=tuple(snrs),
                                                 frames_per_cell=per_cell, seed=seed))
    ds.split = np.full(len(ds), TRAIN, dtype=np.int8)
    ds.labeled = np.ones(len(ds), dtype=bool)
    return ds


def mirrored(ds: Dataset) -> Dataset:
    """Append a copy of every train row as a validation row, so val accuracy tracks train accuracy."""
    n = len(ds)
    return Dataset(np.concatenate([ds.iq, ds.iq]), np.concatenate([ds.class_ids, ds.class_ids]),
                   np.concatenate([ds.snr_db, ds.snr_db]),
                   np.concatenate([ds.labeled, np.ones(n, dtype=bool)]),
                   np.concatenate([np.full(n, TRAIN, dtype=np.int8), np.full(n, VAL, dtype=np.int8)]),
                   seed=ds.seed, meta=dict(ds.meta))


@pytest.fixture
def tiny_dataset():
    return make_dataset(("BPSK", "FM"), per_cell=16)
