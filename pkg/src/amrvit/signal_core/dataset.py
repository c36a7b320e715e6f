"""Labeled I/Q datasets: synthesis, splitting, label masking and persistence."""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from amrvit.errors import InvalidArgumentError, MalformedLayoutError
from amrvit.signal_core.channel import add_awgn, apply_channel, random_channel
from amrvit.signal_core.modulation import DEFAULT_SPS, RRC_SPAN, modulate_symbols
from amrvit.signal_core.types import IQFrame, LabeledSample, ModulationScheme

UNASSIGNED, TRAIN, VAL, TEST = -1, 0, 1, 2
SPLIT_CODES = {"train": TRAIN, "val": VAL, "test": TEST}
SPLIT_NAMES = {v: k for k, v in SPLIT_CODES.items()}

DATASET_MAGIC = b"AMRVDSET"
DATASET_VERSION = 1


@dataclass
class Dataset:
    """Array-backed collection of labeled frames.

    ``iq`` has shape ``(N, 2, L)`` (I row, Q row). ``split`` holds one of the
    codes ``UNASSIGNED/TRAIN/VAL/TEST`` per sample and ``labeled`` marks which
    training samples may use their ground-truth label.
    """

    iq: np.ndarray
    class_ids: np.ndarray
    snr_db: np.ndarray
    labeled: np.ndarray | None = None
    split: np.ndarray | None = None
    seed: int | None = None
    fractions: tuple[float, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.iq = np.asarray(self.iq, dtype=np.float32)
        n = self.iq.shape[0]
        if self.iq.ndim != 3 or self.iq.shape[1] != 2:
            raise InvalidArgumentError(f"iq must have shape (N, 2, L), got {self.iq.shape}")
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(n)
        self.snr_db = np.asarray(self.snr_db, dtype=np.int64).reshape(n)
        self.labeled = (np.ones(n, dtype=bool) if self.labeled is None
                        else np.asarray(self.labeled, dtype=bool).reshape(n))
        self.split = (np.full(n, UNASSIGNED, dtype=np.int8) if self.split is None
                      else np.asarray(self.split, dtype=np.int8).reshape(n))
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= len(ModulationScheme)):
            raise InvalidArgumentError("class ids must lie in 0..15")

    def __len__(self) -> int:
        return self.iq.shape[0]

    @property
    def frame_len(self) -> int:
        return self.iq.shape[2]

    def __getitem__(self, idx: int) -> LabeledSample:
        s = int(self.split[idx])
        return LabeledSample(
            frame=IQFrame(self.iq[idx, 0], self.iq[idx, 1]),
            class_id=int(self.class_ids[idx]),
            snr_db=int(self.snr_db[idx]),
            labeled=bool(self.labeled[idx]),
            split=SPLIT_NAMES.get(s),
        )

    def __iter__(self) -> Iterator[LabeledSample]:
        return (self[k] for k in range(len(self)))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, iq=self.iq[idx], class_ids=self.class_ids[idx], snr_db=self.snr_db[idx],
                       labeled=self.labeled[idx], split=self.split[idx], meta=dict(self.meta))

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_CODES[split])

    def part(self, split: str) -> "Dataset":
        return self.subset(self.indices(split))

    def cell_counts(self) -> Counter:
        return Counter(zip(self.class_ids.tolist(), self.snr_db.tolist()))

    def classes_present(self) -> list[int]:
        return sorted(set(self.class_ids.tolist()))


@dataclass
class SyntheticConfig:
    schemes: Sequence[ModulationScheme | str] = tuple(ModulationScheme)
    snr_list_db: Sequence[int] = tuple(range(-2, 21, 2))
    frames_per_cell: int = 10
    frame_len: int = 512
    samples_per_symbol: int = DEFAULT_SPS
    seed: int = 0
    max_freq_offset: float = 0.002
    gain_range: tuple[float, float] = (0.5, 1.5)

    def resolved_schemes(self) -> list[ModulationScheme]:
        return [s if isinstance(s, ModulationScheme) else ModulationScheme.from_name(s) for s in self.schemes]


def synth_frame(scheme: ModulationScheme, snr_db: float, frame_len: int, rng: np.random.Generator,
                sps: int = DEFAULT_SPS, max_freq_offset: float = 0.002,
                gain_range: tuple[float, float] = (0.5, 1.5)) -> IQFrame:
    """Modulate, pass through a random flat channel, add noise, crop to ``frame_len``."""
    # pad by a filter span on both sides so the crop is free of edge transients
    nsym = math.ceil(frame_len / sps) + 2 * RRC_SPAN
    bits = rng.integers(0, 2, nsym * scheme.bits_per_symbol)
    x = modulate_symbols(scheme, bits, sps, rng)
    start = RRC_SPAN * sps
    x = IQFrame(x.i[start:start + frame_len], x.q[start:start + frame_len])
    x = apply_channel(x, random_channel(rng, max_freq_offset, gain_range))
    return add_awgn(x, snr_db, rng)


def build_synthetic_dataset(config: SyntheticConfig) -> Dataset:
    schemes = config.resolved_schemes()
    snrs = [int(s) for s in config.snr_list_db]
    if not snrs:
        raise InvalidArgumentError("snr_list_db must not be empty")
    if config.frame_len < 1 or config.frames_per_cell < 0:
        raise InvalidArgumentError("frame_len must be positive and frames_per_cell non-negative")
    n = len(schemes) * len(snrs) * config.frames_per_cell
    iq = np.empty((n, 2, config.frame_len), dtype=np.float32)
    cls = np.empty(n, dtype=np.int64)
    snr = np.empty(n, dtype=np.int64)
    k = 0
    for si, scheme in enumerate(schemes):
        for ti, s in enumerate(snrs):
            # one independent stream per cell so cells can be generated in any order
            rng = np.random.default_rng([config.seed, scheme.class_id, ti])
            for _ in range(config.frames_per_cell):
                f = synth_frame(scheme, s, config.frame_len, rng, config.samples_per_symbol,
                                config.max_freq_offset, config.gain_range)
                iq[k, 0], iq[k, 1] = f.i, f.q
                cls[k], snr[k] = scheme.class_id, s
                k += 1
    meta = {
        "schemes": [s.value for s in schemes],
        "snr_list": snrs,
        "frames_per_cell": config.frames_per_cell,
        "frame_len": config.frame_len,
        "seed": config.seed,
    }
    return Dataset(iq, cls, snr, seed=config.seed, meta=meta)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(ds: Dataset, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """Shuffle with ``seed`` and tag every sample train/val/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be three positive values summing to 1, got {fractions}")
    n = len(ds)
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = _round_half_up(fractions[0] * n)
    n_val = _round_half_up(fractions[1] * n)
    n_train = min(n_train, n - 2)
    n_val = max(1, min(n_val, n - n_train - 1))
    split = np.empty(n, dtype=np.int8)
    split[perm[:n_train]] = TRAIN
    split[perm[n_train:n_train + n_val]] = VAL
    split[perm[n_train + n_val:]] = TEST
    return replace(ds, split=split, labeled=np.ones(n, dtype=bool), seed=seed, fractions=fractions)


def label_mask(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Keep labels on a per-class stratified ``fraction`` of the training split."""
    if not 0 < fraction <= 1:
        raise InvalidArgumentError(f"label fraction must be in (0, 1], got {fraction}")
    train = ds.split == TRAIN
    labeled = np.ones(len(ds), dtype=bool)
    rng = np.random.default_rng(seed)
    for c in ds.classes_present():
        idx = np.flatnonzero(train & (ds.class_ids == c))
        if idx.size == 0:
            raise InvalidArgumentError(
                f"class {ModulationScheme.from_id(c).value} has no training samples to label")
        k = max(1, _round_half_up(fraction * idx.size))
        keep = rng.choice(idx, size=k, replace=False)
        labeled[idx] = False
        labeled[keep] = True
    return replace(ds, labeled=labeled)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the dataset as magic + header length + JSON header + float32 frames."""
    header = {
        "version": DATASET_VERSION,
        "schemes": ds.meta.get("schemes"),
        "snr_list": ds.meta.get("snr_list"),
        "frames_per_cell": ds.meta.get("frames_per_cell"),
        "frame_len": ds.frame_len,
        "seed": ds.meta.get("seed", ds.seed),
    }
    if header["schemes"] is None or header["snr_list"] is None or header["frames_per_cell"] is None:
        raise InvalidArgumentError("dataset lacks the grid metadata needed for persistence")
    expected_cls, expected_snr = _grid_labels(header)
    if not (np.array_equal(expected_cls, ds.class_ids) and np.array_equal(expected_snr, ds.snr_db)):
        raise InvalidArgumentError("dataset samples are not in scheme/SNR grid order")
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(ds.iq.astype("<f4").tobytes())


def _grid_labels(header: dict) -> tuple[np.ndarray, np.ndarray]:
    ids = [ModulationScheme.from_name(s).class_id for s in header["schemes"]]
    snrs = header["snr_list"]
    per = header["frames_per_cell"]
    cls = np.repeat(ids, len(snrs) * per).astype(np.int64)
    snr = np.tile(np.repeat(snrs, per), len(ids)).astype(np.int64)
    return cls, snr


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise MalformedLayoutError(f"{path}: not a dataset file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("version") != DATASET_VERSION:
        raise MalformedLayoutError(f"{path}: unsupported version {header.get('version')}")
    cls, snr = _grid_labels(header)
    L = header["frame_len"]
    body = np.frombuffer(raw, dtype="<f4", offset=12 + hlen)
    if body.size != cls.size * 2 * L:
        raise MalformedLayoutError(f"{path}: expected {cls.size * 2 * L} floats, found {body.size}")
    iq = body.reshape(cls.size, 2, L).astype(np.float32)
    meta = {k: header[k] for k in ("schemes", "snr_list", "frames_per_cell", "frame_len", "seed")}
    return Dataset(iq, cls, snr, seed=header["seed"], meta=meta)
