"""Core signal containers and the modulation class vocabulary."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from amrvit.errors import InvalidArgumentError, UnknownClassError


@dataclass(frozen=True)
class IQFrame:
    """One complex baseband frame stored as separate I and Q rows."""

    i: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        i = np.ascontiguousarray(self.i, dtype=np.float32)
        q = np.ascontiguousarray(self.q, dtype=np.float32)
        if i.ndim != 1 or q.ndim != 1:
            raise InvalidArgumentError("I and Q must be 1-D vectors")
        if i.shape != q.shape:
            raise InvalidArgumentError(f"I/Q length mismatch: {i.size} vs {q.size}")
        if i.size == 0:
            raise InvalidArgumentError("frame must contain at least one sample")
        if not (np.isfinite(i).all() and np.isfinite(q).all()):
            raise InvalidArgumentError("frame contains non-finite values")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "q", q)

    def __len__(self) -> int:
        return self.i.size

    @classmethod
    def from_complex(cls, x: np.ndarray) -> "IQFrame":
        x = np.asarray(x)
        return cls(x.real.astype(np.float32), x.imag.astype(np.float32))

    @classmethod
    def from_array(cls, iq: np.ndarray) -> "IQFrame":
        """Build from a ``(2, L)`` array (I row, Q row)."""
        iq = np.asarray(iq)
        if iq.ndim != 2 or iq.shape[0] != 2:
            raise InvalidArgumentError(f"expected shape (2, L), got {iq.shape}")
        return cls(iq[0], iq[1])

    def to_complex(self) -> np.ndarray:
        return self.i.astype(np.float64) + 1j * self.q.astype(np.float64)

    def to_array(self) -> np.ndarray:
        return np.stack([self.i, self.q])

    def power(self) -> float:
        return float(np.mean(self.i.astype(np.float64) ** 2 + self.q.astype(np.float64) ** 2))


def rms_normalize(iq: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale frames so the RMS sample magnitude is 1.

    Accepts a single ``(2, L)`` frame or a batch ``(N, 2, L)``.
    """
    iq = np.asarray(iq, dtype=np.float32)
    p = np.mean(iq.astype(np.float64) ** 2, axis=(-2, -1), keepdims=True) * 2.0
    return (iq / np.sqrt(np.maximum(p, eps))).astype(np.float32)


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _psk_points(m: int, offset: float) -> np.ndarray:
    pts = np.empty(m, dtype=np.complex128)
    for pos in range(m):
        pts[_gray(pos)] = np.exp(1j * (2 * np.pi * pos / m + offset))
    return pts


def _square_qam_points(m: int) -> np.ndarray:
    side = int(round(math.sqrt(m)))
    half_bits = int(math.log2(side))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    pam = np.empty(side)
    for pos in range(side):
        pam[_gray(pos)] = levels[pos]
    pts = np.empty(m, dtype=np.complex128)
    for idx in range(m):
        hi, lo = idx >> half_bits, idx & (side - 1)
        pts[idx] = pam[hi] + 1j * pam[lo]
    return pts


def _cross_qam_points(m: int) -> np.ndarray:
    # 32QAM: 6x6 grid minus 4 corners; 128QAM: 12x12 grid minus 4x(2x2) corners
    side, cut = {32: (6, 1), 128: (12, 2)}[m]
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    pts = []
    for a in range(side):
        for b in range(side):
            corner_a = a < cut or a >= side - cut
            corner_b = b < cut or b >= side - cut
            if corner_a and corner_b:
                continue
            pts.append(levels[a] + 1j * levels[b])
    assert len(pts) == m
    return np.asarray(pts)


# ring sizes and radii (inner radius 1); DVB-S2/S2X-like geometries
_APSK_RINGS = {
    16: ([4, 12], [1.0, 2.7]),
    32: ([4, 12, 16], [1.0, 2.64, 4.64]),
    64: ([4, 12, 20, 28], [1.0, 2.4, 4.3, 7.0]),
    128: ([16, 16, 16, 16, 16, 48], [1.0, 1.715, 2.118, 2.681, 2.75, 3.124]),
}


def _apsk_points(m: int) -> np.ndarray:
    counts, radii = _APSK_RINGS[m]
    pts = []
    for ring, (n, r) in enumerate(zip(counts, radii)):
        offset = np.pi / n if ring % 2 else np.pi / 4 if n == 4 else 0.0
        pts.extend(r * np.exp(1j * (2 * np.pi * np.arange(n) / n + offset)))
    return np.asarray(pts)


class ModulationScheme(enum.Enum):
    """The 16 modulation classes, in class-index order."""

    BPSK = "BPSK"
    QPSK = "QPSK"
    PSK8 = "8PSK"
    APSK16 = "16APSK"
    APSK32 = "32APSK"
    APSK64 = "64APSK"
    APSK128 = "128APSK"
    QAM16 = "16QAM"
    QAM32 = "32QAM"
    QAM64 = "64QAM"
    QAM128 = "128QAM"
    QAM256 = "256QAM"
    AM_DSB_SC = "AM-DSB-SC"
    AM_DSB_WC = "AM-DSB-WC"
    FM = "FM"
    GMSK = "GMSK"

    @classmethod
    def from_name(cls, name: str) -> "ModulationScheme":
        for s in cls:
            if s.value == name or s.name == name:
                return s
        raise UnknownClassError(f"unknown modulation class {name!r}")

    @classmethod
    def from_id(cls, class_id: int) -> "ModulationScheme":
        members = list(cls)
        if not 0 <= class_id < len(members):
            raise InvalidArgumentError(f"class id {class_id} outside 0..{len(members) - 1}")
        return members[class_id]

    @property
    def class_id(self) -> int:
        return list(type(self)).index(self)

    @property
    def is_digital(self) -> bool:
        return self not in (ModulationScheme.AM_DSB_SC, ModulationScheme.AM_DSB_WC,
                            ModulationScheme.FM, ModulationScheme.GMSK)

    @property
    def order(self) -> int:
        return {
            "BPSK": 2, "QPSK": 4, "8PSK": 8,
            "16APSK": 16, "32APSK": 32, "64APSK": 64, "128APSK": 128,
            "16QAM": 16, "32QAM": 32, "64QAM": 64, "128QAM": 128, "256QAM": 256,
        }.get(self.value, 2)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order)) if self.is_digital else 1

    @cached_property
    def constellation(self) -> np.ndarray:
        """Unit-average-energy symbol table indexed by the bit-group integer."""
        if not self.is_digital:
            raise InvalidArgumentError(f"{self.value} has no constellation")
        m = self.order
        if self is ModulationScheme.BPSK:
            pts = _psk_points(2, 0.0)
        elif self is ModulationScheme.QPSK:
            pts = _psk_points(4, np.pi / 4)
        elif self is ModulationScheme.PSK8:
            pts = _psk_points(8, 0.0)
        elif self.value.endswith("APSK"):
            pts = _apsk_points(m)
        elif m in (32, 128):
            pts = _cross_qam_points(m)
        else:
            pts = _square_qam_points(m)
        pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
        pts.setflags(write=False)
        return pts


NUM_CLASSES = len(ModulationScheme)
CLASS_NAMES = [s.value for s in ModulationScheme]


@dataclass(frozen=True)
class ChannelParams:
    """Flat channel of the form ``A * exp(j(w n + theta))``."""

    gain: float = 1.0
    freq_offset: float = 0.0
    phase_offset: float = 0.0

    def __post_init__(self):
        vals = (self.gain, self.freq_offset, self.phase_offset)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgumentError(f"non-finite channel parameters {vals}")
        if self.gain <= 0:
            raise InvalidArgumentError(f"gain must be positive, got {self.gain}")
        if not -math.pi <= self.freq_offset < math.pi:
            raise InvalidArgumentError(f"freq_offset {self.freq_offset} outside [-pi, pi)")
        if not 0 <= self.phase_offset < 2 * math.pi:
            raise InvalidArgumentError(f"phase_offset {self.phase_offset} outside [0, 2pi)")


@dataclass(frozen=True)
class LabeledSample:
    frame: IQFrame
    class_id: int
    snr_db: int
    labeled: bool = True
    split: str | None = None
