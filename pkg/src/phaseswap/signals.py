"""Deterministic signal mathematics.

Every function here works channel-wise on ``(C, W)`` float64 arrays. The
forward DFT is unnormalized and the inverse carries the ``1/W`` factor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import (
    IncompatibleSignalsError,
    InvalidSignalError,
    NonRealResultError,
    ParameterError,
)

#: Imaginary residual tolerated (relative to unit-scale data) before an
#: inverse transform is declared non-real.
IMAG_TOL = 1e-9
#: Floor on the standard deviation used by :func:`normalize`.
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Signal:
    """A ``C x W`` multichannel segment sampled at ``sample_rate`` Hz."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidSignalError(f"signal must be C x W with C, W >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidSignalError("signal contains non-finite values")
        if not self.sample_rate > 0:
            raise InvalidSignalError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Spectrum:
    """Per-channel complex DFT coefficients, shape ``(C, W)``."""

    coeffs: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim == 1:
            coeffs = coeffs[None, :]
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def bins(self) -> int:
        return self.coeffs.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return phase_angle(self.coeffs)

    def is_conjugate_symmetric(self, tol: float = 1e-9) -> bool:
        mirrored = np.conj(np.roll(self.coeffs[:, ::-1], 1, axis=1))
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        return bool(np.max(np.abs(self.coeffs - mirrored), initial=0.0) <= tol * scale)


def phase_angle(z: np.ndarray) -> np.ndarray:
    """``atan2(Im z, Re z)`` with the angle of an exact zero defined as 0."""
    z = np.asarray(z)
    angle = np.arctan2(z.imag, z.real)
    # atan2(0, -0.0) is pi; pin every exact zero to 0
    angle[z == 0] = 0.0
    return angle


def _check_finite(data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise InvalidSignalError("signal contains non-finite values")


def naive_dft(data: np.ndarray) -> np.ndarray:
    """O(W^2) reference DFT along the last axis, by explicit summation."""
    data = np.asarray(data, dtype=np.float64)
    w = data.shape[-1]
    n = np.arange(w)
    # reduce k*n mod W before scaling so the twiddle angles stay exact for large W
    kernel = np.exp(-2j * np.pi * ((np.outer(n, n) % w) / w))
    return data @ kernel.T


def dft_array(data: np.ndarray) -> np.ndarray:
    """Forward FFT along the last axis (unnormalized)."""
    return np.fft.fft(np.asarray(data, dtype=np.float64), axis=-1)


def inverse_dft_array(coeffs: np.ndarray, tol: float = IMAG_TOL) -> np.ndarray:
    """Inverse FFT along the last axis, returning the real part.

    Raises :class:`NonRealResultError` when the imaginary residual exceeds
    ``tol`` times the scale of the result (scale floored at 1).
    """
    values = np.fft.ifft(coeffs, axis=-1)
    residual = float(np.max(np.abs(values.imag), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(values.real), initial=0.0)))
    if residual >= tol * scale:
        raise NonRealResultError(
            f"inverse DFT has imaginary residual {residual:.3e}; spectrum is not conjugate-symmetric"
        )
    return np.ascontiguousarray(values.real)


def dft(x: Signal) -> Spectrum:
    _check_finite(x.data)
    return Spectrum(dft_array(x.data), x.sample_rate)


def inverse_dft(s: Spectrum) -> Signal:
    return Signal(inverse_dft_array(s.coeffs), s.sample_rate)


def phase_swap_array(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Combine the DFT magnitude of ``x1`` with the DFT phase of ``x2``.

    Works on any pair of equal-shape arrays, transforming along the last
    axis. Bins where ``|F(x1)|`` is exactly zero produce a zero coefficient.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise IncompatibleSignalsError(f"cannot phase-swap shapes {x1.shape} and {x2.shape}")
    magnitude = np.abs(dft_array(x1))
    phase = phase_angle(dft_array(x2))
    coeffs = magnitude * np.exp(1j * phase)
    coeffs[magnitude == 0] = 0.0
    return inverse_dft_array(coeffs)


def phase_swap(x1: Signal, x2: Signal) -> Signal:
    """Magnitude of ``x1`` with the phase of ``x2``, channel-wise."""
    if x1.data.shape != x2.data.shape or x1.sample_rate != x2.sample_rate:
        raise IncompatibleSignalsError(
            f"incompatible signals: {x1.data.shape}@{x1.sample_rate}Hz vs "
            f"{x2.data.shape}@{x2.sample_rate}Hz"
        )
    return Signal(phase_swap_array(x1.data, x2.data), x1.sample_rate)


def channel_mask_array(data: np.ndarray, keep: int, rng: np.random.Generator) -> np.ndarray:
    channels = data.shape[-2]
    if not 1 <= keep <= channels:
        raise ParameterError(f"keep must be in [1, {channels}], got {keep}")
    kept = rng.choice(channels, size=keep, replace=False)
    out = np.zeros_like(data)
    out[..., kept, :] = data[..., kept, :]
    return out


def channel_mask(x: Signal, keep: int, rng: np.random.Generator) -> Signal:
    """Zero all but ``keep`` uniformly chosen channels."""
    return Signal(channel_mask_array(x.data, keep, rng), x.sample_rate)


def normalize_array(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.shape[-1] < 2:
        raise ParameterError("normalization needs more than one sample per channel")
    mean = data.mean(axis=-1, keepdims=True)
    std = data.std(axis=-1, keepdims=True)
    return (data - mean) / np.maximum(std, STD_FLOOR)


def normalize(r):
    """Zero-mean, unit-variance per channel.

    Accepts anything with a ``data`` field (a :class:`Signal` or a
    :class:`~phaseswap.edf.Recording`) and returns a copy of the same type.
    """
    return dataclasses.replace(r, data=normalize_array(r.data))


def resample_array(data: np.ndarray, sample_rate: float, target_rate: float) -> np.ndarray:
    """DFT-domain resampling along the last axis.

    The output length is ``round(W * target_rate / sample_rate)``. Spectral
    content below both Nyquist frequencies is carried over unchanged; the
    shared Nyquist bin of even lengths is split or merged so the result
    stays real.
    """
    if not sample_rate > 0 or not target_rate > 0:
        raise ParameterError(f"rates must be positive, got {sample_rate} -> {target_rate}")
    data = np.asarray(data, dtype=np.float64)
    n_in = data.shape[-1]
    n_out = int(round(n_in * target_rate / sample_rate))
    if n_out < 1:
        raise ParameterError(f"resampling {n_in} samples to {target_rate} Hz leaves no samples")
    if n_out == n_in:
        return data.copy()

    spectrum = dft_array(data)
    out = np.zeros(data.shape[:-1] + (n_out,), dtype=np.complex128)
    n = min(n_in, n_out)
    nyq = n // 2 + 1
    out[..., :nyq] = spectrum[..., :nyq]
    if n > 2:
        out[..., -(n - nyq):] = spectrum[..., -(n - nyq):]
    if n % 2 == 0:
        if n_out < n_in:
            # fold the dropped mirror of the new Nyquist bin back in
            out[..., n // 2] += spectrum[..., -(n // 2)]
        else:
            out[..., n // 2] *= 0.5
            out[..., n_out - n // 2] = out[..., n // 2]
    return inverse_dft_array(out) * (n_out / n_in)


def resample(x: Signal, target_rate: float) -> Signal:
    if not target_rate > 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    return Signal(resample_array(x.data, x.sample_rate, target_rate), float(target_rate))
