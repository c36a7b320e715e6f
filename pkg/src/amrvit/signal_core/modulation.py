"""Baseband waveform synthesis for the 16 modulation classes."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps_signal

from amrvit.errors import InvalidArgumentError
from amrvit.signal_core.types import IQFrame, ModulationScheme

RRC_ROLLOFF = 0.35
RRC_SPAN = 8
DEFAULT_SPS = 8
MESSAGE_CUTOFF = 0.1  # fraction of Nyquist
FM_INDEX = 0.5
AM_DEPTH = 0.5
GMSK_BT = 0.3
GMSK_SPAN = 4


def rrc_taps(rolloff: float = RRC_ROLLOFF, span: int = RRC_SPAN, sps: int = DEFAULT_SPS) -> np.ndarray:
    """Root-raised-cosine impulse response scaled so that ``sum(h**2) == sps``.

    With that scaling a stream of unit-energy symbols comes out with unit
    average power per sample.
    """
    n = span * sps
    t = (np.arange(n + 1) - n / 2) / sps
    b = rolloff
    h = np.empty_like(t)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            h[k] = 1.0 - b + 4 * b / np.pi
        elif b > 0 and abs(abs(tk) - 1 / (4 * b)) < 1e-9:
            h[k] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                       + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            num = np.sin(np.pi * tk * (1 - b)) + 4 * b * tk * np.cos(np.pi * tk * (1 + b))
            den = np.pi * tk * (1 - (4 * b * tk) ** 2)
            h[k] = num / den
    return h * np.sqrt(sps / np.sum(h ** 2))


def pulse_shape(symbols: np.ndarray, sps: int, rolloff: float = RRC_ROLLOFF, span: int = RRC_SPAN) -> np.ndarray:
    """Upsample and RRC-filter; output length is ``len(symbols) * sps``."""
    if sps == 1:
        return symbols.astype(np.complex128)
    up = np.zeros(symbols.size * sps, dtype=np.complex128)
    up[::sps] = symbols
    h = rrc_taps(rolloff, span, sps)
    delay = (h.size - 1) // 2
    return np.convolve(up, h)[delay:delay + up.size]


def _bits_to_ints(bits: np.ndarray, k: int) -> np.ndarray:
    groups = bits.reshape(-1, k)
    weights = 1 << np.arange(k - 1, -1, -1)
    return groups @ weights


def band_limited_message(n: int, rng: np.random.Generator, cutoff: float = MESSAGE_CUTOFF) -> np.ndarray:
    """Unit-RMS low-pass Gaussian message of length ``n``."""
    taps = sps_signal.firwin(129, cutoff)
    pad = taps.size
    white = rng.standard_normal(n + 2 * pad)
    m = np.convolve(white, taps, mode="same")[pad:pad + n]
    return m / np.sqrt(np.mean(m ** 2))


def gaussian_taps(bt: float, sps: int, span: int = GMSK_SPAN) -> np.ndarray:
    t = (np.arange(span * sps + 1) - span * sps / 2) / sps
    sigma = np.sqrt(np.log(2)) / (2 * np.pi * bt)
    h = np.exp(-t ** 2 / (2 * sigma ** 2))
    return h / h.sum()


def _analog(scheme: ModulationScheme, bits: np.ndarray, sps: int, rng: np.random.Generator) -> np.ndarray:
    n = bits.size * sps
    if scheme is ModulationScheme.GMSK:
        nrz = np.repeat(2.0 * bits - 1.0, sps)
        if sps > 1:
            nrz = np.convolve(nrz, gaussian_taps(GMSK_BT, sps), mode="same")
        phase = np.cumsum(nrz) * (np.pi / 2) / sps
        return np.exp(1j * phase)
    m = band_limited_message(n, rng)
    if scheme is ModulationScheme.AM_DSB_SC:
        x = m.astype(np.complex128)
    elif scheme is ModulationScheme.AM_DSB_WC:
        x = (1.0 + AM_DEPTH * m / np.max(np.abs(m))).astype(np.complex128)
    else:  # FM
        f_msg = MESSAGE_CUTOFF / 2  # cycles/sample
        deviation = FM_INDEX * f_msg
        x = np.exp(1j * 2 * np.pi * deviation * np.cumsum(m / np.max(np.abs(m))))
    return x / np.sqrt(np.mean(np.abs(x) ** 2))


def modulate_symbols(scheme: ModulationScheme, bits, samples_per_symbol: int = DEFAULT_SPS,
                     rng: np.random.Generator | None = None) -> IQFrame:
    """Map ``bits`` to a pulse-shaped baseband frame.

    Digital schemes map groups of ``bits_per_symbol`` bits (MSB first) onto the
    unit-energy constellation and RRC-shape them. AM/FM draw a band-limited
    message from ``rng`` (one "symbol" per bit, bit values unused); GMSK
    shapes the bits directly.
    """
    if not isinstance(scheme, ModulationScheme):
        raise InvalidArgumentError(f"unsupported scheme {scheme!r}")
    if samples_per_symbol < 1:
        raise InvalidArgumentError(f"samples_per_symbol must be >= 1, got {samples_per_symbol}")
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = scheme.bits_per_symbol
    if bits.size == 0 or bits.size % k:
        raise InvalidArgumentError(
            f"{scheme.value} needs a nonzero multiple of {k} bits, got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise InvalidArgumentError("bits must be 0/1")
    if scheme.is_digital:
        symbols = scheme.constellation[_bits_to_ints(bits, k)]
        x = pulse_shape(symbols, samples_per_symbol)
    else:
        if rng is None:
            rng = np.random.default_rng()
        x = _analog(scheme, bits, samples_per_symbol, rng)
    return IQFrame.from_complex(x)
