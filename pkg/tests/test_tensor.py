from hypothesis import given, strategies as st
import numpy as np

from skpd_mcca.errors import DimensionError
from skpd_mcca.tensor import (
    BlockShape,
    kron,
    reshape_R,
    reshape_R_batch,
    reshape_R_inverse,
    vec,
    vec_inverse,
)


def test_block_shape_pads_order_two_images():
    shape = BlockShape.from_dims((32, 32), (8, 8))
    assert shape.full_dims == (32, 32, 1)
    assert shape.grid_dims == (4, 4, 1)
    assert shape.n_blocks == 16
    assert shape.block_size == 64
    assert shape.image_dims == (32, 32)
    assert shape.block_index(1, 2) == 6


def test_block_shape_rejects_non_dividing_blocks():
    try:
        BlockShape.from_dims((32, 30), (8, 8))
        assert False, "expected rejection"
    except DimensionError as exc:
        assert "does not divide" in str(exc)


def test_vec_is_row_major():
    t = np.arange(6.0).reshape(2, 3)
    assert vec(t).tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    np.testing.assert_array_equal(vec_inverse(vec(t), (2, 3)), t)


def test_vec_inverse_rejects_wrong_length():
    try:
        vec_inverse(np.zeros(5), (2, 3))
        assert False, "expected rejection"
    except DimensionError as exc:
        assert "cannot fill" in str(exc)


def test_kron_rejects_mixed_orders():
    try:
        kron(np.ones((2, 2)), np.ones((2, 2, 2)))
        assert False, "expected rejection"
    except DimensionError:
        pass


def test_reshape_R_of_kron_is_rank_one():
    # R(A kron B) = vec(A) vec(B)^T
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((4, 5))
    shape = BlockShape.from_dims((12, 10), (4, 5))
    m = reshape_R(kron(a, b), shape)
    np.testing.assert_allclose(m, np.outer(vec(a), vec(b)), atol=1e-12)


def test_reshape_R_of_order_three_kron():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((2, 3, 2))
    b = rng.standard_normal((2, 2, 3))
    shape = BlockShape.from_dims((4, 6, 6), (2, 2, 3))
    m = reshape_R(kron(a, b), shape)
    np.testing.assert_allclose(m, np.outer(vec(a), vec(b)), atol=1e-12)


@given(st.integers(min_value=0, max_value=10_000))
def test_reshape_R_is_linear(seed):
    rng = np.random.default_rng(seed)
    shape = BlockShape.from_dims((6, 8, 4), (3, 2, 2))
    s = rng.standard_normal((6, 8, 4))
    t = rng.standard_normal((6, 8, 4))
    a, b = rng.standard_normal(2)
    np.testing.assert_allclose(
        reshape_R(a * s + b * t, shape),
        a * reshape_R(s, shape) + b * reshape_R(t, shape),
        atol=1e-12,
    )


def test_reshape_R_rows_are_blocks():
    t = np.arange(16.0).reshape(4, 4)
    shape = BlockShape.from_dims((4, 4), (2, 2))
    m = reshape_R(t, shape)
    np.testing.assert_array_equal(m[shape.block_index(0, 1)], [2.0, 3.0, 6.0, 7.0])
    np.testing.assert_array_equal(m[shape.block_index(1, 0)], [8.0, 9.0, 12.0, 13.0])


def test_inner_product_identity():
    # <X, sum_r A_r kron B_r> = sum_r vec(A_r)^T R(X) vec(B_r)
    rng = np.random.default_rng(3)
    shape = BlockShape.from_dims((6, 8), (3, 4))
    x = rng.standard_normal((6, 8))
    alphas = rng.standard_normal((shape.n_blocks, 2))
    betas = rng.standard_normal((shape.block_size, 2))
    c = sum(
        kron(alphas[:, r].reshape(2, 2), betas[:, r].reshape(3, 4)) for r in range(2)
    )
    lhs = float(np.sum(x * c))
    rhs = float(np.einsum("pd,pr,dr->", reshape_R(x, shape), alphas, betas))
    assert abs(lhs - rhs) < 1e-10


def test_reshape_R_batch_matches_per_sample():
    rng = np.random.default_rng(4)
    shape = BlockShape.from_dims((8, 8), (4, 2))
    images = rng.standard_normal((5, 8, 8))
    batch = reshape_R_batch(images, shape)
    assert batch.shape == (5, shape.n_blocks, shape.block_size)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], reshape_R(images[i], shape))


def test_reshape_R_inverse_rejects_wrong_matrix():
    shape = BlockShape.from_dims((4, 4), (2, 2))
    try:
        reshape_R_inverse(np.zeros((4, 3)), shape)
        assert False, "expected rejection"
    except DimensionError:
        pass


@given(
    st.sampled_from([(2, 1, 1), (2, 2, 1), (1, 3, 2), (3, 2, 2)]),
    st.sampled_from([(1, 1, 1), (2, 1, 1), (2, 2, 2), (1, 2, 3)]),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_reshape_R_inverse_recovers_tensor(grid, block, seed):
    full = tuple(g * b for g, b in zip(grid, block))
    shape = BlockShape.from_dims(full, block)
    t = np.random.default_rng(seed).standard_normal(full)
    np.testing.assert_array_equal(reshape_R_inverse(reshape_R(t, shape), shape), t)
