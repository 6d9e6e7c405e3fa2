import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stylerecon import tensors
from stylerecon.errors import ContractViolation, NumericalFailure, ParameterError

finite_f8 = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite_f8))
@settings(max_examples=50, deadline=None)
def test_tnsr_roundtrip_real_bit_exact(arr):
    back = tensors.tensor_from_bytes(tensors.tensor_to_bytes(arr))
    assert back.dtype == np.float64
    assert back.shape == arr.shape
    assert arr.tobytes() == back.tobytes()


@given(
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite_f8),
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite_f8),
)
@settings(max_examples=30, deadline=None)
def test_tnsr_roundtrip_complex_bit_exact(re, im):
    if re.shape != im.shape:
        re = re[: min(re.shape[0], im.shape[0]), : min(re.shape[1], im.shape[1])]
        im = im[: re.shape[0], : re.shape[1]]
    arr = re + 1j * im
    back = tensors.tensor_from_bytes(tensors.tensor_to_bytes(arr))
    assert back.dtype == np.complex128
    assert arr.tobytes() == back.tobytes()


def test_tnsr_1d_and_file_roundtrip(tmp_path):
    v = np.linspace(-3.0, 7.0, 13)
    path = tmp_path / "v.tnsr"
    tensors.save_tensor(path, v)
    again = tensors.load_tensor(path)
    assert again.shape == (13,)
    assert v.tobytes() == again.tobytes()


def test_tnsr_header_layout():
    arr = np.zeros((2, 3))
    buf = tensors.tensor_to_bytes(arr)
    assert buf[:4] == b"TNSR"
    assert buf[4] == 0  # real64 tag
    assert buf[5] == 2  # ndim
    assert int.from_bytes(buf[6:10], "little") == 2
    assert int.from_bytes(buf[10:14], "little") == 3
    assert len(buf) == 14 + 6 * 8

    cbuf = tensors.tensor_to_bytes(arr.astype(np.complex128))
    assert cbuf[4] == 1
    assert len(cbuf) == 14 + 6 * 16


def test_tnsr_rejects_garbage():
    with pytest.raises(ParameterError):
        tensors.tensor_from_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ParameterError):
        tensors.tensor_to_bytes(np.zeros((2, 2), dtype=np.float32))
    good = tensors.tensor_to_bytes(np.zeros((2, 2)))
    with pytest.raises(ParameterError):
        tensors.tensor_from_bytes(good[:-1])  # truncated payload


def test_vjp_identity_returns_cotangent():
    op = tensors.identity_op((4, 4))
    c = np.arange(16.0).reshape(4, 4)
    out = tensors.vjp_contract(op, np.zeros((4, 4)), c)
    np.testing.assert_array_equal(out, c)


def test_vjp_square_matches_analytic_derivative():
    op = tensors.square_op((1,))
    out = tensors.vjp_contract(op, np.array([3.0]), np.array([1.0]))
    np.testing.assert_allclose(out, [6.0], rtol=0, atol=0)


def test_vjp_dft_energy_is_twice_input():
    rng = np.random.Generator(np.random.PCG64(3))
    x = rng.standard_normal((8, 8))
    op = tensors.dft_energy_op((8, 8))
    grad = tensors.vjp_contract(op, x, np.asarray(1.0))
    np.testing.assert_allclose(grad, 2.0 * x, atol=1e-12)


def test_vjp_contract_shape_mismatch():
    op = tensors.identity_op((4, 4))
    with pytest.raises(ContractViolation):
        tensors.vjp_contract(op, np.zeros((3, 4)), np.zeros((4, 4)))
    with pytest.raises(ContractViolation):
        tensors.vjp_contract(op, np.zeros((4, 4)), np.zeros((4, 5)))


def test_fd_check_linear_op_is_exact():
    op = tensors.identity_op((6,))
    report = tensors.finite_difference_check(op, np.zeros(6), probes=4, step=0.1)
    assert report.max_relative_error <= 1e-10
    assert report.probe_count == 4


def test_fd_check_sin_sum_meets_truncation_bound():
    # Central differences on sum(sin x) have truncation error |f'''| h^2 / 6;
    # with h = 1e-4 and gradient magnitudes O(1) the relative error must sit
    # well below 1e-6.  Verified against the analytic bound below.
    rng = np.random.Generator(np.random.PCG64(11))
    x = rng.standard_normal(16)
    op = tensors.sin_sum_op((16,))
    report = tensors.finite_difference_check(op, x, probes=8, step=1e-4)
    h = 1e-4
    bound = h * h / 6.0  # |d^3/dt^3 sum(sin)| <= 1 along unit directions
    assert report.max_relative_error <= 1e-6
    assert bound < 1e-6


def test_fd_check_catches_wrong_gradient():
    op = tensors.FuncOp(
        (8,), (), lambda x: np.sum(np.sin(x)), lambda x, c: 2.0 * np.cos(x) * c
    )
    report = tensors.finite_difference_check(op, np.full(8, 0.3), probes=4, step=1e-4)
    assert abs(report.max_relative_error - 1.0) < 0.51  # rel err of 2g vs g is ~1


def test_fd_check_reports_nonfinite_location():
    def bad(x):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.sum(np.log(x))  # -inf/nan for x <= 0
        return np.asarray(out)

    op = tensors.FuncOp((3,), (), bad, lambda x, c: c / x)
    with pytest.raises(NumericalFailure, match="probe"):
        tensors.finite_difference_check(op, np.array([1e-6, 1.0, 1.0]), probes=4, step=1e-4)


def test_fd_check_parameter_validation():
    op = tensors.identity_op((3,))
    with pytest.raises(ParameterError):
        tensors.finite_difference_check(op, np.zeros(3), probes=0)
    with pytest.raises(ParameterError):
        tensors.finite_difference_check(op, np.zeros(3), step=0.0)


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_vjp_linearity(a, b):
    rng = np.random.Generator(np.random.PCG64(7))
    x = rng.standard_normal((5, 5))
    c1 = rng.standard_normal((5, 5))
    c2 = rng.standard_normal((5, 5))
    op = tensors.square_op((5, 5))
    combo = tensors.vjp_contract(op, x, a * c1 + b * c2)
    parts = a * tensors.vjp_contract(op, x, c1) + b * tensors.vjp_contract(op, x, c2)
    np.testing.assert_allclose(combo, parts, atol=1e-12)


def test_basic_registry_ops_pass_fd_checks():
    rng = np.random.Generator(np.random.PCG64(42))
    for entry in tensors.basic_op_registry():
        for trial in range(5):
            point = entry.sample_point(rng)
            report = tensors.finite_difference_check(
                entry.op, point, probes=8, step=1e-4, seed=trial
            )
            assert report.max_relative_error <= 1e-5, entry.name
