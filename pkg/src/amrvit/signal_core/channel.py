"""Flat-channel impairments: gain, carrier offsets and AWGN."""

from __future__ import annotations

import math

import numpy as np

from amrvit.errors import InvalidArgumentError
from amrvit.signal_core.types import ChannelParams, IQFrame


def apply_channel(frame: IQFrame, params: ChannelParams) -> IQFrame:
    """Return ``A * exp(j(w n + theta)) * x[n]``."""
    vals = (params.gain, params.freq_offset, params.phase_offset)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidArgumentError(f"non-finite channel parameters {vals}")
    n = np.arange(len(frame))
    rot = params.gain * np.exp(1j * (params.freq_offset * n + params.phase_offset))
    return IQFrame.from_complex(rot * frame.to_complex())


def add_awgn(frame: IQFrame, snr_db: float, rng: np.random.Generator) -> IQFrame:
    """Add complex white Gaussian noise at ``snr_db`` relative to the frame power."""
    p = frame.power()
    if p <= 0:
        raise InvalidArgumentError("cannot set an SNR on a zero-power frame")
    var = p / (2.0 * 10.0 ** (snr_db / 10.0))
    sd = math.sqrt(var)
    ni = rng.normal(0.0, sd, len(frame))
    nq = rng.normal(0.0, sd, len(frame))
    return IQFrame(frame.i + ni, frame.q + nq)


def measured_snr_db(clean: IQFrame, noisy: IQFrame) -> float:
    noise = noisy.to_complex() - clean.to_complex()
    return 10.0 * math.log10(clean.power() / np.mean(np.abs(noise) ** 2))


def random_channel(rng: np.random.Generator, max_freq_offset: float = 0.002,
                   gain_range: tuple[float, float] = (0.5, 1.5)) -> ChannelParams:
    return ChannelParams(
        gain=float(rng.uniform(*gain_range)),
        freq_offset=float(rng.uniform(-max_freq_offset, max_freq_offset)),
        phase_offset=float(rng.uniform(0.0, 2 * math.pi)),
    )
