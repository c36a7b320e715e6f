"""Reader (and a small writer for fixtures) for RML2018.01A-layout HDF5 files.

Layout: ``X`` float32 ``[N, 1024, 2]`` (I, Q on the last axis), ``Y`` one-hot
``[N, 24]``, ``Z`` integer SNR in dB ``[N, 1]``. The class order of ``Y`` is
taken from a sidecar JSON list of 24 names.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import h5py
import numpy as np

from amrvit.errors import InsufficientSamplesError, MalformedLayoutError, UnknownClassError
from amrvit.signal_core.dataset import Dataset
from amrvit.signal_core.types import ModulationScheme

RML_FRAME_LEN = 1024
RML_NUM_CLASSES = 24
_CHUNK = 65536


def default_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".classes.json")


def read_class_map(path: str | Path) -> list[str]:
    try:
        names = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"class-mapping sidecar not found: {path}") from None
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise MalformedLayoutError(f"{path}: sidecar must be a JSON list of class names")
    if len(names) != RML_NUM_CLASSES:
        raise MalformedLayoutError(f"{path}: sidecar lists {len(names)} classes, expected {RML_NUM_CLASSES}")
    return names


def _column_argmax(ds: h5py.Dataset) -> np.ndarray:
    out = np.empty(ds.shape[0], dtype=np.int64)
    for a in range(0, ds.shape[0], _CHUNK):
        out[a:a + _CHUNK] = np.argmax(ds[a:a + _CHUNK], axis=1)
    return out


def load_rml(path: str | Path, class_names: Sequence[str], snr_min_db: int = -2, snr_max_db: int = 20,
             per_cell: int = 1000, rng: np.random.Generator | None = None,
             class_map: str | Path | Sequence[str] | None = None, frame_len: int = 512,
             decimate: bool = False) -> Dataset:
    """Draw a balanced subset of an RML file.

    Up to ``per_cell`` frames are drawn without replacement from every
    (class, SNR) cell with SNR in ``[snr_min_db, snr_max_db]``. Frames are cut
    to ``frame_len`` by keeping the leading samples, or by stride-2 decimation
    when ``decimate`` is set. Class ids follow :class:`ModulationScheme`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"RML file not found: {path}")
    if class_map is None:
        class_map = default_sidecar(path)
    file_names = list(class_map) if isinstance(class_map, (list, tuple)) else read_class_map(class_map)
    rng = rng if rng is not None else np.random.default_rng(0)

    wanted = []
    for name in class_names:
        if name not in file_names:
            raise UnknownClassError(f"class {name!r} is not in the file's class map")
        wanted.append((file_names.index(name), ModulationScheme.from_name(name)))

    with h5py.File(path, "r") as h5:
        for key in ("X", "Y", "Z"):
            if key not in h5:
                raise MalformedLayoutError(f"{path}: missing dataset {key!r}")
        X, Y, Z = h5["X"], h5["Y"], h5["Z"]
        n = X.shape[0]
        if X.ndim != 3 or X.shape[1] != RML_FRAME_LEN or X.shape[2] != 2:
            raise MalformedLayoutError(f"{path}: X has shape {X.shape}, expected [N, {RML_FRAME_LEN}, 2]")
        if Y.shape != (n, len(file_names)):
            raise MalformedLayoutError(f"{path}: Y has shape {Y.shape}, expected [{n}, {len(file_names)}]")
        if Z.shape not in ((n, 1), (n,)):
            raise MalformedLayoutError(f"{path}: Z has shape {Z.shape}, expected [{n}, 1]")
        needed = 2 * frame_len if decimate else frame_len
        if needed > RML_FRAME_LEN:
            raise MalformedLayoutError(f"cannot cut {frame_len} samples from {RML_FRAME_LEN}-sample frames")

        labels = _column_argmax(Y)
        snrs = np.asarray(Z[...]).reshape(n).astype(np.int64)
        levels = sorted(int(s) for s in np.unique(snrs) if snr_min_db <= s <= snr_max_db)

        picks, cls, snr = [], [], []
        for file_idx, scheme in wanted:
            for level in levels:
                cell = np.flatnonzero((labels == file_idx) & (snrs == level))
                if cell.size < per_cell:
                    raise InsufficientSamplesError(
                        f"cell ({scheme.value}, {level} dB) has {cell.size} samples, {per_cell} requested")
                chosen = np.sort(rng.choice(cell, size=per_cell, replace=False)) if per_cell else cell[:0]
                picks.append(chosen)
                cls.extend([scheme.class_id] * per_cell)
                snr.extend([level] * per_cell)

        order = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
        iq = np.empty((order.size, 2, frame_len), dtype=np.float32)
        if order.size:
            # h5py fancy indexing wants increasing, unique indices
            uniq, inverse = np.unique(order, return_inverse=True)
            rows = np.empty((uniq.size, RML_FRAME_LEN, 2), dtype=np.float32)
            for a in range(0, uniq.size, _CHUNK):
                rows[a:a + _CHUNK] = X[uniq[a:a + _CHUNK]]
            rows = rows[inverse]
            cut = rows[:, ::2, :][:, :frame_len] if decimate else rows[:, :frame_len]
            iq[:] = np.transpose(cut, (0, 2, 1))

    meta = {
        "schemes": list(class_names),
        "snr_list": levels,
        "frames_per_cell": per_cell,
        "frame_len": frame_len,
        "seed": None,
        "source": str(path),
    }
    return Dataset(iq, np.asarray(cls, dtype=np.int64), np.asarray(snr, dtype=np.int64), meta=meta)


def write_rml(path: str | Path, x: np.ndarray, class_index: np.ndarray, snr_db: np.ndarray,
              class_names: Sequence[str]) -> None:
    """Write an RML-layout file plus its sidecar; used to build fixtures."""
    x = np.asarray(x, dtype=np.float32)
    class_index = np.asarray(class_index, dtype=np.int64)
    onehot = np.zeros((x.shape[0], len(class_names)), dtype=np.int64)
    onehot[np.arange(x.shape[0]), class_index] = 1
    with h5py.File(path, "w") as h5:
        h5.create_dataset("X", data=x)
        h5.create_dataset("Y", data=onehot)
        h5.create_dataset("Z", data=np.asarray(snr_db, dtype=np.int64).reshape(-1, 1))
    default_sidecar(path).write_text(json.dumps(list(class_names)))


# Canonical RML2018.01A class list, offered for convenience when writing a
# sidecar; readers never assume it.
RML2018_CLASSES = [
    "OOK", "4ASK", "8ASK", "BPSK", "QPSK", "8PSK", "16PSK", "32PSK", "16APSK", "32APSK",
    "64APSK", "128APSK", "16QAM", "32QAM", "64QAM", "128QAM", "256QAM", "AM-SSB-WC",
    "AM-SSB-SC", "AM-DSB-WC", "AM-DSB-SC", "FM", "GMSK", "OQPSK",
]
