"""Sparsifying operators: orthonormal Haar wavelets, finite differences,
the anisotropic TV seminorm, and the diagonal reweighting used by the
reference-image reconstruction baseline.

Wavelet coefficients flatten deterministically (final LL first, then per
level coarse-to-fine in LH, HL, HH order, each row-major) so that files
and reweighting diagonals index the same way everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParameterError

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class WaveletCoeffs:
    """Multilevel 2-D Haar decomposition.

    ``bands[i]`` holds the (LH, HL, HH) triple of level i, finest first;
    ``ll`` is the final approximation.  LH = low-pass rows / high-pass
    columns.
    """

    ll: np.ndarray
    bands: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]

    @property
    def levels(self) -> int:
        return len(self.bands)

    @property
    def size(self) -> int:
        return self.ll.size + sum(b.size for trio in self.bands for b in trio)

    def flatten(self) -> np.ndarray:
        parts = [self.ll.ravel()]
        for trio in reversed(self.bands):  # coarse -> fine
            parts.extend(b.ravel() for b in trio)
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> "WaveletCoeffs":
        """Rebuild a structurally identical decomposition from flat values."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ContractViolation(f"flat length {flat.shape} != {self.size}")
        pos = self.ll.size
        ll = flat[:pos].reshape(self.ll.shape)
        new_bands: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for trio in reversed(self.bands):
            rebuilt = []
            for b in trio:
                rebuilt.append(flat[pos : pos + b.size].reshape(b.shape))
                pos += b.size
            new_bands.append(tuple(rebuilt))
        return WaveletCoeffs(ll, tuple(reversed(new_bands)))


def _haar_split(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    even = np.take(x, range(0, x.shape[axis], 2), axis=axis)
    odd = np.take(x, range(1, x.shape[axis], 2), axis=axis)
    return (even + odd) / _SQRT2, (even - odd) / _SQRT2


def _haar_merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape)
    even = (lo + hi) / _SQRT2
    odd = (lo - hi) / _SQRT2
    sl_even = [slice(None)] * out.ndim
    sl_even[axis] = slice(0, None, 2)
    sl_odd = [slice(None)] * out.ndim
    sl_odd[axis] = slice(1, None, 2)
    out[tuple(sl_even)] = even
    out[tuple(sl_odd)] = odd
    return out


def max_levels(height: int, width: int) -> int:
    return int(math.log2(min(height, width)))


def clamp_levels(requested: int, height: int, width: int) -> int:
    """Protocol clamp: at most log2(min(h, w)) - 1 decomposition levels."""
    return max(1, min(requested, max_levels(height, width) - 1))


def dwt2(f: np.ndarray, levels: int) -> WaveletCoeffs:
    """Orthonormal multilevel 2-D Haar analysis (power-of-two dims only)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ContractViolation("dwt2 expects a 2-D array")
    h, w = f.shape
    if h < 1 or w < 1 or (h & (h - 1)) or (w & (w - 1)):
        raise ParameterError(f"dims must be powers of two, got {f.shape}")
    if levels < 1 or levels > max_levels(h, w):
        raise ParameterError(
            f"levels must lie in 1..{max_levels(h, w)} for shape {f.shape}"
        )
    bands = []
    ll = f
    for _ in range(levels):
        lo_r, hi_r = _haar_split(ll, axis=0)
        ll_next, lh = _haar_split(lo_r, axis=1)
        hl, hh = _haar_split(hi_r, axis=1)
        bands.append((lh, hl, hh))
        ll = ll_next
    return WaveletCoeffs(ll, tuple(bands))


def idwt2(c: WaveletCoeffs) -> np.ndarray:
    """Orthonormal Haar synthesis; exact inverse of dwt2."""
    ll = c.ll
    for lh, hl, hh in reversed(c.bands):
        lo_r = _haar_merge(ll, lh, axis=1)
        hi_r = _haar_merge(hl, hh, axis=1)
        ll = _haar_merge(lo_r, hi_r, axis=0)
    return ll


@dataclass(frozen=True)
class DiffField:
    """Forward differences of an image: dx is h x (w-1), dy is (h-1) x w."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape[0] != self.dy.shape[0] + 1 or self.dy.shape[1] != self.dx.shape[1] + 1:
            raise ContractViolation(
                f"inconsistent difference field shapes {self.dx.shape}, {self.dy.shape}"
            )


def finite_diff(f: np.ndarray) -> DiffField:
    f = np.asarray(f, dtype=np.float64)
    return DiffField(dx=f[:, 1:] - f[:, :-1], dy=f[1:, :] - f[:-1, :])


def finite_diff_adjoint(d: DiffField) -> np.ndarray:
    """Negative divergence; satisfies <finite_diff(f), d> = <f, adjoint(d)>."""
    h = d.dy.shape[0] + 1
    w = d.dx.shape[1] + 1
    if d.dx.shape != (h, w - 1) or d.dy.shape != (h - 1, w):
        raise ContractViolation("difference field shapes disagree")
    out = np.zeros((h, w))
    out[:, :-1] -= d.dx
    out[:, 1:] += d.dx
    out[:-1, :] -= d.dy
    out[1:, :] += d.dy
    return out


def tv_seminorm(f: np.ndarray) -> float:
    """Anisotropic total variation: l1 norm of all forward differences."""
    d = finite_diff(f)
    return float(np.sum(np.abs(d.dx)) + np.sum(np.abs(d.dy)))


@dataclass(frozen=True)
class WeightDiag:
    """Diagonal reweighting for wavelet coefficients, weights in (0, 1/eps]."""

    weights: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0) or np.any(w > 1.0 / self.epsilon + 1e-12):
            raise ParameterError("weights must lie in (0, 1/epsilon]")
        object.__setattr__(self, "weights", w)


def update_weights(c: WaveletCoeffs | np.ndarray, epsilon: float) -> WeightDiag:
    """w_i = 1 / (|c_i| + epsilon): small coefficients get large weights."""
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    flat = c.flatten() if isinstance(c, WaveletCoeffs) else np.asarray(c, dtype=np.float64).ravel()
    return WeightDiag(weights=1.0 / (np.abs(flat) + epsilon), epsilon=epsilon)


def reweight_epsilon(c: WaveletCoeffs | np.ndarray, scale: float = 1e-3, floor: float = 1e-8) -> float:
    """Scale-aware epsilon for reweighting: 1e-3 of the peak coefficient."""
    flat = c.flatten() if isinstance(c, WaveletCoeffs) else np.asarray(c).ravel()
    peak = float(np.max(np.abs(flat))) if flat.size else 0.0
    return max(scale * peak, floor)
