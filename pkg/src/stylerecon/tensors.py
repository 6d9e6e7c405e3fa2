"""Dense-array plumbing: TNSR serialization and the gradient contract.

Images ("real grids") are 2-D float64 arrays, Fourier intermediates are
complex128 arrays, latents are 1-D float64 arrays.  Everything numeric in
the toolkit is 64-bit: the solvers are iterative first-order methods and
the adjoint/gradient test tolerances (1e-10 .. 1e-12) need the headroom.

The TNSR container is the repo-wide tensor file format: ``TNSR`` magic,
u8 dtype tag (0 = real64, 1 = pairs of real64 re/im), u8 ndim, ndim x u32
little-endian dims, then the raw little-endian row-major payload.
Round-trips are bit-exact.

Differentiable operations follow a two-method contract (``apply`` plus
``vjp``); ``finite_difference_check`` probes any such operation against
central differences and is used throughout the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ContractViolation, NumericalFailure, ParameterError

_MAGIC = b"TNSR"
_TAG_REAL64 = 0
_TAG_COMPLEX128 = 1


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a real64 or complex128 array to TNSR bytes."""
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        tag, payload_dtype = _TAG_REAL64, "<f8"
    elif arr.dtype == np.complex128:
        tag, payload_dtype = _TAG_COMPLEX128, "<c16"
    else:
        raise ParameterError(f"TNSR stores float64 or complex128, got {arr.dtype}")
    if arr.ndim == 0 or arr.ndim > 255:
        raise ParameterError(f"TNSR stores 1..255 dims, got ndim={arr.ndim}")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ParameterError("dimension exceeds u32 range")
    header = _MAGIC + struct.pack("<BB", tag, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).astype(payload_dtype).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    """Parse TNSR bytes back into an array (inverse of tensor_to_bytes)."""
    if buf[:4] != _MAGIC:
        raise ParameterError("not a TNSR payload (bad magic)")
    tag, ndim = struct.unpack_from("<BB", buf, 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    offset = 6 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 0
    if tag == _TAG_REAL64:
        dtype, itemsize = "<f8", 8
    elif tag == _TAG_COMPLEX128:
        dtype, itemsize = "<c16", 16
    else:
        raise ParameterError(f"unknown TNSR dtype tag {tag}")
    expected = offset + count * itemsize
    if len(buf) != expected:
        raise ParameterError(f"TNSR payload length {len(buf)} != expected {expected}")
    flat = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return flat.reshape(dims).astype(flat.dtype.newbyteorder("="))


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


class DiffOp(Protocol):
    """Forward evaluation plus a hand-derived vector-Jacobian product.

    ``in_shape``/``out_shape`` declare the contract; ``out_shape = ()``
    marks scalar-valued operations.
    """

    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]

    def apply(self, x: np.ndarray) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray: ...


def vjp_contract(op: DiffOp, point: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Evaluate J^T . cotangent for ``op`` at ``point`` with shape checks."""
    point = np.asarray(point, dtype=np.float64)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if point.shape != tuple(op.in_shape):
        raise ContractViolation(
            f"point shape {point.shape} != op input shape {tuple(op.in_shape)}"
        )
    if cotangent.shape != tuple(op.out_shape):
        raise ContractViolation(
            f"cotangent shape {cotangent.shape} != op output shape {tuple(op.out_shape)}"
        )
    grad = np.asarray(op.vjp(point, cotangent), dtype=np.float64)
    if grad.shape != tuple(op.in_shape):
        raise ContractViolation(
            f"vjp returned shape {grad.shape}, expected {tuple(op.in_shape)}"
        )
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    probe_count: int

    def __post_init__(self):
        if self.max_relative_error < 0:
            raise ParameterError("max_relative_error must be >= 0")
        if self.probe_count < 1:
            raise ParameterError("probe_count must be >= 1")


def relative_error(a: float, b: float) -> float:
    """|a - b| / max(|a|, |b|, 1e-8), the repo-wide gradient-check metric."""
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_difference_check(
    op: DiffOp,
    point: np.ndarray,
    probes: int = 8,
    step: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Probe ``op.vjp`` against central differences.

    For each probe a random unit input direction d and unit cotangent c
    are drawn; the directional derivative <c, (op(x+h d) - op(x-h d))/2h>
    is compared against <vjp(x, c), d>.  The worst relative error over
    all probes is reported.
    """
    if step <= 0:
        raise ParameterError("step must be > 0")
    if probes < 1:
        raise ParameterError("probes must be >= 1")
    point = np.asarray(point, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for i in range(probes):
        d = rng.standard_normal(op.in_shape)
        d /= np.linalg.norm(d)
        if op.out_shape == ():
            c = np.asarray(1.0)
        else:
            c = rng.standard_normal(op.out_shape)
            c /= np.linalg.norm(c)
        plus = np.asarray(op.apply(point + step * d), dtype=np.float64)
        minus = np.asarray(op.apply(point - step * d), dtype=np.float64)
        if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
            raise NumericalFailure(f"non-finite op value at probe {i} (step {step})")
        fd = float(np.vdot(c, (plus - minus) / (2.0 * step)))
        an = float(np.vdot(vjp_contract(op, point, c), d))
        worst = max(worst, relative_error(an, fd))
    return GradCheckReport(max_relative_error=worst, probe_count=probes)


class FuncOp:
    """Wrap explicit apply/vjp callables into the DiffOp contract."""

    def __init__(
        self,
        in_shape: Sequence[int],
        out_shape: Sequence[int],
        apply_fn: Callable[[np.ndarray], np.ndarray],
        vjp_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ):
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)
        self._apply = apply_fn
        self._vjp = vjp_fn

    def apply(self, x):
        return self._apply(x)

    def vjp(self, x, cotangent):
        return self._vjp(x, cotangent)


def identity_op(shape) -> FuncOp:
    return FuncOp(shape, shape, lambda x: x, lambda x, c: c)


def square_op(shape) -> FuncOp:
    """Elementwise x**2; Jacobian is diag(2x)."""
    return FuncOp(shape, shape, lambda x: x * x, lambda x, c: 2.0 * x * c)


def sin_sum_op(shape) -> FuncOp:
    """x -> sum(sin x), the standard smooth scalar test function."""
    return FuncOp(shape, (), lambda x: np.sum(np.sin(x)), lambda x, c: np.cos(x) * c)


def dft_energy_op(shape) -> FuncOp:
    """x -> ||Fx||^2 for the unitary 2-D DFT; by Parseval the gradient is 2x."""
    n = float(np.prod(shape))

    def apply_fn(x):
        return np.asarray(np.sum(np.abs(np.fft.fft2(x)) ** 2) / n)

    return FuncOp(shape, (), apply_fn, lambda x, c: 2.0 * x * c)


@dataclass(frozen=True)
class RegisteredOp:
    """A named differentiable operation plus a sampler for test points."""

    name: str
    op: DiffOp
    sample_point: Callable[[np.random.Generator], np.ndarray]


def basic_op_registry(shape=(8, 8)) -> list[RegisteredOp]:
    """The always-available differentiable operations.

    Modules with their own differentiable operations (the generator, the
    reconstruction penalties) extend this list in the test suite.
    """

    def sampler(rng):
        return rng.standard_normal(shape)

    return [
        RegisteredOp("identity", identity_op(shape), sampler),
        RegisteredOp("square", square_op(shape), sampler),
        RegisteredOp("sin_sum", sin_sum_op(shape), sampler),
        RegisteredOp("dft_energy", dft_energy_op(shape), sampler),
    ]
