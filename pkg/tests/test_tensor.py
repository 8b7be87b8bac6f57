import numpy as np
import pytest

from app.core.errors import ConfigurationError, DimensionError
from app.models.tensor import ComplexTensor, Precision, Tensor, broadcast_mul, reshape


def test_tensor_is_read_only_copy():
    source = np.arange(6.0).reshape(2, 3)
    t = Tensor(source)
    source[0, 0] = 99.0
    assert t.data[0, 0] == 0.0
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_tensor_rejects_zero_extent_and_complex():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 0)))
    with pytest.raises(DimensionError):
        Tensor(np.ones(3, dtype=complex))


def test_scalar_becomes_rank_one():
    assert Tensor(3.0).shape == (1,)


def test_precision_parse_and_tags():
    assert Precision.parse("SINGLE") is Precision.SINGLE
    assert Precision.from_tag(Precision.DOUBLE.tag) is Precision.DOUBLE
    assert Tensor(np.ones(2), "single").data.dtype == np.float32
    with pytest.raises(ConfigurationError):
        Precision.parse("half")


def test_precision_parse_accepts_members():
    assert Precision.parse(Precision.DOUBLE) is Precision.DOUBLE
    assert Precision.parse("Double") is Precision.DOUBLE
    assert Tensor(np.ones(2), Precision.SINGLE).precision is Precision.SINGLE
    z = ComplexTensor.from_complex(np.ones(3) + 1j, Precision.DOUBLE)
    assert z.precision is Precision.DOUBLE


def test_complex_tensor_shape_mismatch():
    with pytest.raises(DimensionError):
        ComplexTensor(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))


def test_broadcast_ones_filter_is_identity(rng):
    b = ComplexTensor.from_complex(rng.standard_normal((2, 3, 4, 5)) + 1j * rng.standard_normal((2, 3, 4, 5)))
    out = broadcast_mul(Tensor(np.ones((2, 3, 1, 1))), b)
    np.testing.assert_array_equal(out.to_complex(), b.to_complex())


def test_broadcast_scalar_doubling():
    b = ComplexTensor(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), Tensor(np.zeros((1, 1, 2, 2))))
    out = broadcast_mul(Tensor(np.full((1, 1, 1, 1), 2.0)), b)
    np.testing.assert_array_equal(out.re.data[0, 0], [[2.0, 4.0], [6.0, 8.0]])
    np.testing.assert_array_equal(out.im.data, 0.0)


def test_broadcast_matches_materialized_product(rng):
    a = ComplexTensor.from_complex(rng.standard_normal((2, 2, 1, 1)) + 1j * rng.standard_normal((2, 2, 1, 1)))
    b = ComplexTensor.from_complex(rng.standard_normal((2, 2, 8, 8)) + 1j * rng.standard_normal((2, 2, 8, 8)))
    out = broadcast_mul(a, b)

    ar = np.broadcast_to(a.re.data, b.shape)
    ai = np.broadcast_to(a.im.data, b.shape)
    expected_re = np.empty(b.shape)
    expected_im = np.empty(b.shape)
    for idx in np.ndindex(b.shape):
        expected_re[idx] = ar[idx] * b.re.data[idx] - ai[idx] * b.im.data[idx]
        expected_im[idx] = ar[idx] * b.im.data[idx] + ai[idx] * b.re.data[idx]
    np.testing.assert_array_equal(out.re.data, expected_re)
    np.testing.assert_array_equal(out.im.data, expected_im)


def test_broadcast_shape_error_names_both_shapes(rng):
    b = ComplexTensor.from_complex(np.ones((2, 3, 4, 5), dtype=complex))
    with pytest.raises(DimensionError) as info:
        broadcast_mul(Tensor(np.ones((3, 3, 1, 1))), b)
    assert info.value.shapes == ((3, 3, 1, 1), (2, 3, 4, 5))
    assert "(3, 3, 1, 1)" in str(info.value) and "(2, 3, 4, 5)" in str(info.value)


def test_reshape_keeps_flat_order(rng):
    t = Tensor(rng.standard_normal((6, 4, 5)))
    r = reshape(t, (2, 3, 4, 5))
    np.testing.assert_array_equal(r.data.ravel(), t.data.ravel())
    np.testing.assert_array_equal(reshape(r, t.shape).data, t.data)


def test_reshape_singleton_and_errors():
    assert reshape(Tensor(np.array([7.0])), (1, 1, 1, 1)).data[0, 0, 0, 0] == 7.0
    with pytest.raises(DimensionError):
        reshape(Tensor(np.ones(6)), (4, 2))


def test_reshape_round_trip_random_shapes(rng):
    for _ in range(20):
        dims = [int(d) for d in rng.integers(1, 5, size=int(rng.integers(1, 5)))]
        t = Tensor(rng.standard_normal(dims))
        flat = reshape(t, (t.size,))
        np.testing.assert_array_equal(reshape(flat, dims).data, t.data)
