"""I/Q augmentations and the one-transform-per-sample policy."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from amrvit.errors import AugmentationError, InvalidArgumentError
from amrvit.signal_core.types import IQFrame

MAX_WARP_RETRIES = 8


class AugmentKind(enum.Enum):
    ROTATE = "rotate"
    FLIP_H = "flip_h"
    FLIP_V = "flip_v"
    GAUSSIAN_NOISE = "gaussian_noise"
    SCALE = "scale"
    MAGNITUDE_WARP = "magnitude_warp"
    TIME_WARP = "time_warp"


@dataclass
class AugmentPolicy:
    """Parameters for every kind plus the set the policy may pick from."""

    noise_sigma: float = 0.05
    scale_sigma: float = 0.1
    mw_knots: int = 4
    mw_sigma: float = 0.2
    tw_knots: int = 4
    tw_sigma: float = 0.2
    rotate_angles: tuple[float, ...] = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
    enabled_kinds: tuple[AugmentKind, ...] = field(default_factory=lambda: tuple(AugmentKind))

    def __post_init__(self):
        self.enabled_kinds = tuple(k if isinstance(k, AugmentKind) else AugmentKind(k) for k in self.enabled_kinds)
        if not self.enabled_kinds:
            raise InvalidArgumentError("at least one augmentation kind must be enabled")
        if min(self.noise_sigma, self.scale_sigma, self.mw_sigma, self.tw_sigma) < 0:
            raise InvalidArgumentError("augmentation sigmas must be non-negative")
        if self.mw_knots < 2 or self.tw_knots < 2:
            raise InvalidArgumentError("warps need at least 2 knots")


def natural_cubic_spline(xk: np.ndarray, yk: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the natural cubic spline through ``(xk, yk)`` at ``x``.

    Second derivatives at the knots come from the standard tridiagonal system
    with zero curvature at both ends, solved by forward elimination.
    """
    xk = np.asarray(xk, dtype=np.float64)
    yk = np.asarray(yk, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = xk.size
    if n < 2 or yk.size != n or np.any(np.diff(xk) <= 0):
        raise InvalidArgumentError("spline needs >= 2 strictly increasing knots")
    h = np.diff(xk)
    m = np.zeros(n)
    if n > 2:
        diag = 2.0 * (h[:-1] + h[1:])
        off = h[1:-1].copy()
        rhs = 6.0 * (np.diff(yk[1:]) / h[1:] - np.diff(yk[:-1]) / h[:-1])
        # Thomas algorithm on the (n-2)x(n-2) system
        for k in range(1, n - 2):
            w = off[k - 1] / diag[k - 1]
            diag[k] -= w * off[k - 1]
            rhs[k] -= w * rhs[k - 1]
        sol = np.empty(n - 2)
        sol[-1] = rhs[-1] / diag[-1]
        for k in range(n - 4, -1, -1):
            sol[k] = (rhs[k] - off[k] * sol[k + 1]) / diag[k]
        m[1:-1] = sol
    seg = np.clip(np.searchsorted(xk, x, side="right") - 1, 0, n - 2)
    x0, x1 = xk[seg], xk[seg + 1]
    hs = h[seg]
    a = (x1 - x) / hs
    b = (x - x0) / hs
    return (a * yk[seg] + b * yk[seg + 1]
            + ((a ** 3 - a) * m[seg] + (b ** 3 - b) * m[seg + 1]) * hs ** 2 / 6.0)


def rotate(frame: IQFrame, angle: float) -> IQFrame:
    c, s = math.cos(angle), math.sin(angle)
    i = frame.i.astype(np.float64)
    q = frame.q.astype(np.float64)
    return IQFrame(i * c - q * s, i * s + q * c)


def flip_h(frame: IQFrame) -> IQFrame:
    return IQFrame(-frame.i, frame.q)


def flip_v(frame: IQFrame) -> IQFrame:
    return IQFrame(frame.i, -frame.q)


def gaussian_noise(frame: IQFrame, sigma: float, rng: np.random.Generator) -> IQFrame:
    if sigma < 0:
        raise InvalidArgumentError(f"noise sigma must be >= 0, got {sigma}")
    n = len(frame)
    return IQFrame(frame.i + rng.normal(0.0, sigma, n), frame.q + rng.normal(0.0, sigma, n))


def draw_scale(rng: np.random.Generator, sigma: float = 0.1) -> float:
    return float(np.clip(rng.normal(1.0, sigma), 0.5, 1.5))


def scale(frame: IQFrame, rng: np.random.Generator, sigma: float = 0.1) -> IQFrame:
    s = draw_scale(rng, sigma)
    return IQFrame(frame.i * s, frame.q * s)


def _knot_positions(length: int, knots: int) -> np.ndarray:
    return np.linspace(0.0, length - 1, knots)


def magnitude_envelope(length: int, control: np.ndarray) -> np.ndarray:
    """Spline envelope through ``control`` values placed at equal spacing."""
    control = np.asarray(control, dtype=np.float64)
    return natural_cubic_spline(_knot_positions(length, control.size), control, np.arange(length))


def magnitude_warp(frame: IQFrame, knots: int = 4, sigma: float = 0.2,
                   rng: np.random.Generator | None = None) -> IQFrame:
    if knots < 2:
        raise InvalidArgumentError("magnitude warp needs >= 2 knots")
    rng = rng if rng is not None else np.random.default_rng()
    env = magnitude_envelope(len(frame), rng.normal(1.0, sigma, knots))
    return IQFrame(frame.i * env, frame.q * env)


def warp_path(length: int, offsets: np.ndarray) -> np.ndarray:
    """Warp map through knots displaced by ``offsets`` (ends forced to 0)."""
    offsets = np.asarray(offsets, dtype=np.float64).copy()
    offsets[0] = offsets[-1] = 0.0
    xk = _knot_positions(length, offsets.size)
    w = natural_cubic_spline(xk, xk + offsets, np.arange(length))
    w[0], w[-1] = 0.0, length - 1.0
    return w


def resample(frame: IQFrame, positions: np.ndarray) -> IQFrame:
    grid = np.arange(len(frame))
    return IQFrame(np.interp(positions, grid, frame.i), np.interp(positions, grid, frame.q))


def time_warp(frame: IQFrame, knots: int = 4, sigma: float = 0.2,
              rng: np.random.Generator | None = None) -> IQFrame:
    """Resample along a smooth monotone warp of the time axis.

    Interior knots are displaced by ``N(0, (sigma * knot_spacing)^2)``;
    non-monotone draws are redrawn up to ``MAX_WARP_RETRIES`` times.
    """
    if knots < 2:
        raise InvalidArgumentError("time warp needs >= 2 knots")
    rng = rng if rng is not None else np.random.default_rng()
    length = len(frame)
    if length < 2:
        return frame
    spacing = (length - 1) / (knots - 1)
    for _ in range(MAX_WARP_RETRIES + 1):
        w = warp_path(length, rng.normal(0.0, sigma * spacing, knots))
        if np.all(np.diff(w) > 0):
            return resample(frame, w)
    raise AugmentationError(f"no monotone warp after {MAX_WARP_RETRIES} retries (sigma={sigma})")


def apply_kind(frame: IQFrame, kind: AugmentKind, rng: np.random.Generator,
               policy: AugmentPolicy | None = None) -> IQFrame:
    p = policy or AugmentPolicy()
    if kind is AugmentKind.ROTATE:
        return rotate(frame, float(p.rotate_angles[rng.integers(len(p.rotate_angles))]))
    if kind is AugmentKind.FLIP_H:
        return flip_h(frame)
    if kind is AugmentKind.FLIP_V:
        return flip_v(frame)
    if kind is AugmentKind.GAUSSIAN_NOISE:
        return gaussian_noise(frame, p.noise_sigma, rng)
    if kind is AugmentKind.SCALE:
        return scale(frame, rng, p.scale_sigma)
    if kind is AugmentKind.MAGNITUDE_WARP:
        return magnitude_warp(frame, p.mw_knots, p.mw_sigma, rng)
    return time_warp(frame, p.tw_knots, p.tw_sigma, rng)


def augment(frame: IQFrame, rng: np.random.Generator,
            policy: AugmentPolicy | None = None) -> tuple[IQFrame, AugmentKind]:
    """Apply exactly one augmentation, chosen uniformly from the enabled kinds."""
    p = policy or AugmentPolicy()
    kind = p.enabled_kinds[rng.integers(len(p.enabled_kinds))]
    return apply_kind(frame, kind, rng, p), kind


def augment_batch(iq: np.ndarray, rng: np.random.Generator,
                  policy: AugmentPolicy | None = None) -> tuple[np.ndarray, list[AugmentKind]]:
    """Augment every ``(2, L)`` frame of an ``(N, 2, L)`` batch once."""
    out = np.empty_like(iq, dtype=np.float32)
    kinds = []
    for k in range(iq.shape[0]):
        f, kind = augment(IQFrame(iq[k, 0], iq[k, 1]), rng, policy)
        out[k, 0], out[k, 1] = f.i, f.q
        kinds.append(kind)
    return out, kinds
