"""Stylized single-coil MR measurement model.

The system operator is a unitary (1/sqrt(n)) 2-D DFT followed by
restriction to a set of kept k-space columns, a Cartesian phase-encode
line mask with a fully sampled center band.  Low frequencies live at the
center of the grid: forward transforms are fftshifted before masking.

Measurement noise is iid circular complex Gaussian added in k-space and
rescaled so the requested SNR holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ParameterError


@dataclass(frozen=True)
class SamplingMask:
    """Cartesian column-line k-space mask.

    ``kept_columns`` are indices into the fftshifted grid, so the
    always-kept center band corresponds to the lowest frequencies.
    """

    height: int
    width: int
    kept_columns: tuple[int, ...]
    center_fraction: float
    seed: int
    target_R: float

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ParameterError("mask dims must be positive")
        cols = tuple(sorted(set(self.kept_columns)))
        if not cols:
            raise ParameterError("kept_columns must be nonempty")
        if cols[0] < 0 or cols[-1] >= self.width:
            raise ParameterError("column index out of range")
        object.__setattr__(self, "kept_columns", cols)
        band = center_band(self.width, self.center_fraction)
        if not set(band) <= set(cols):
            raise ParameterError("center band must be fully sampled")

    @property
    def num_samples(self) -> int:
        return self.height * len(self.kept_columns)

    def to_grid(self) -> np.ndarray:
        """0/1 image of the mask (all rows kept on selected columns)."""
        grid = np.zeros((self.height, self.width))
        grid[:, list(self.kept_columns)] = 1.0
        return grid

    @staticmethod
    def from_grid(grid: np.ndarray, center_fraction: float, seed: int, target_R: float) -> "SamplingMask":
        h, w = grid.shape
        cols = tuple(int(c) for c in np.nonzero(grid.any(axis=0))[0])
        return SamplingMask(h, w, cols, center_fraction, seed, target_R)


@dataclass(frozen=True)
class KSpaceMeasurement:
    """Complex samples g (one per kept k-space location) plus provenance."""

    mask: SamplingMask
    values: np.ndarray
    snr_db: float
    noise_seed: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != (self.mask.num_samples,):
            raise ContractViolation(
                f"expected {self.mask.num_samples} samples, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ParameterError("measurement values must be finite")
        object.__setattr__(self, "values", vals)


def center_band(width: int, center_fraction: float) -> tuple[int, ...]:
    """Indices of the always-kept central column band.

    Band size b = ceil(center_fraction * width), placed at
    floor(width/2) - floor(b/2) .. + b - 1.  Empty for fraction 0.
    """
    if not 0.0 <= center_fraction <= 1.0:
        raise ParameterError("center_fraction must lie in [0, 1]")
    b = math.ceil(center_fraction * width)
    if b == 0:
        return ()
    start = width // 2 - b // 2
    return tuple(range(start, start + b))


def generate_cartesian_mask(
    height: int,
    width: int,
    R: float,
    center_fraction: float = 0.08,
    seed: int = 0,
) -> SamplingMask:
    """Draw a seeded random column mask keeping ceil(width/R) lines."""
    if R < 1.0:
        raise ParameterError("undersampling ratio R must be >= 1")
    budget = math.ceil(width / R)
    band = center_band(width, center_fraction)
    if budget < len(band):
        raise ParameterError(
            f"center band ({len(band)} columns) exceeds sampling budget ({budget})"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    outside = np.array([c for c in range(width) if c not in set(band)])
    extra = rng.choice(outside, size=budget - len(band), replace=False) if budget > len(band) else []
    cols = tuple(sorted(set(band) | {int(c) for c in extra}))
    return SamplingMask(height, width, cols, center_fraction, seed, float(R))


def _unitary_fft2(f: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(f)) / math.sqrt(f.size)


def _unitary_ifft2(k: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(k)) * math.sqrt(k.size)


def forward(f: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Unitary DFT then column restriction; row-major over rows, then kept columns."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mask.height, mask.width):
        raise ContractViolation(f"image shape {f.shape} != mask dims")
    k = _unitary_fft2(f)
    return np.ascontiguousarray(k[:, list(mask.kept_columns)]).reshape(-1)


def adjoint(v: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Zero-fill, inverse unitary DFT, real part.

    Adjoint of ``forward`` under Re<.,.> on the measurement side:
    Re<forward(f), v> = <f, adjoint(v)> for all real f.
    """
    v = np.asarray(v, dtype=np.complex128)
    if v.shape != (mask.num_samples,):
        raise ContractViolation(f"sample vector length {v.shape} != {mask.num_samples}")
    k = np.zeros((mask.height, mask.width), dtype=np.complex128)
    k[:, list(mask.kept_columns)] = v.reshape(mask.height, -1)
    return np.real(_unitary_ifft2(k))


def add_noise(clean: np.ndarray, snr_db: float, seed: int = 0) -> np.ndarray:
    """Add circular complex Gaussian noise at exactly the requested SNR.

    The noise draw is rescaled so 20 log10(||clean|| / ||noise||) == snr_db;
    snr_db = +inf returns the input untouched.
    """
    clean = np.asarray(clean, dtype=np.complex128)
    if math.isinf(snr_db) and snr_db > 0:
        return clean.copy()
    signal = np.linalg.norm(clean)
    if signal == 0.0:
        raise ParameterError("cannot set a finite SNR on an all-zero signal")
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    noise *= signal * 10.0 ** (-snr_db / 20.0) / np.linalg.norm(noise)
    return clean + noise


def measure_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Realized SNR in dB; +inf when the vectors coincide."""
    clean = np.asarray(clean, dtype=np.complex128)
    diff = np.linalg.norm(np.asarray(noisy, dtype=np.complex128) - clean)
    if diff == 0.0:
        return math.inf
    return 20.0 * math.log10(np.linalg.norm(clean) / diff)


def simulate_measurement(
    f: np.ndarray, mask: SamplingMask, snr_db: float, noise_seed: int
) -> KSpaceMeasurement:
    clean = forward(f, mask)
    return KSpaceMeasurement(mask, add_noise(clean, snr_db, noise_seed), snr_db, noise_seed)
