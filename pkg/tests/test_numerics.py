import numpy as np
import pytest

from diarc.numerics import (
    Adam,
    CheckpointError,
    DegenerateBatchError,
    DimensionError,
    OptimizationError,
    Tensor,
    add,
    concat,
    cross_entropy,
    dropout,
    embedding,
    finite_difference_error,
    layer_norm,
    load_checkpoint,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    save_checkpoint,
    sigmoid,
    sigmoid_cross_entropy,
    softmax,
    sqrt,
    sum_,
    tanh,
    transpose,
)

TOL = 1e-3
rng = np.random.default_rng(1234)


# -- matmul -------------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(matmul(a, b).data, b.data)


def test_matmul_dot_product():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_gradient_is_row_sums_of_b():
    # d(sum(a @ b))/da = column-broadcast of b's row sums
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b_val = rng.normal(size=(5, 3))
    loss = sum_(matmul(a, Tensor(b_val)))
    loss.backward()
    expected = np.broadcast_to(b_val.sum(axis=1), (4, 5))
    assert np.allclose(a.grad, expected, atol=1e-5)

    err = finite_difference_error(
        lambda ps: sum_(matmul(ps[0], ps[1])),
        [rng.normal(size=(4, 5)), rng.normal(size=(5, 3))],
    )
    assert err < TOL


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


# -- softmax ------------------------------------------------------------------


def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3] * 3)


def test_softmax_stability_no_overflow():
    out = softmax(Tensor([1000.0, 0.0]))
    assert np.isfinite(out.data).all()
    assert np.allclose(out.data, [1.0, 0.0], atol=1e-6)


def test_softmax_values():
    out = softmax(Tensor([1.0, 2.0, 3.0]))
    # 64-bit oracle: exp(x - max) / sum
    assert np.allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-6)


def test_softmax_sums_to_one_extreme_magnitudes():
    gen = np.random.default_rng(7)
    for _ in range(50):
        shape = tuple(gen.integers(1, 5, size=gen.integers(1, 4)))
        scale = gen.choice([1.0, 1e2, 1e4])
        x = gen.normal(size=shape) * scale
        axis = int(gen.integers(0, len(shape)))
        out = softmax(Tensor(x), axis=axis)
        sums = out.data.sum(axis=axis)
        assert np.allclose(sums, 1.0, atol=1e-6)
        assert (out.data >= 0).all()


def test_softmax_gradient():
    err = finite_difference_error(
        lambda ps: sum_(mul(softmax(ps[0], axis=-1), ps[1])),
        [rng.normal(size=(3, 6)), rng.normal(size=(3, 6))],
    )
    assert err < TOL


# -- layer_norm ---------------------------------------------------------------


def test_layer_norm_constant_input():
    out = layer_norm(Tensor([1.0, 1.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.0, 0.0], atol=1e-3)


def test_layer_norm_unit_variance_passthrough():
    out = layer_norm(Tensor([-1.0, 1.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [-1.0, 1.0], atol=1e-3)


def test_layer_norm_rejects_scalar_axis():
    with pytest.raises(DimensionError):
        layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))


def test_layer_norm_gradient():
    def build(ps):
        x, g, b, w = ps
        return sum_(mul(layer_norm(x, g, b), w))

    err = finite_difference_error(
        build,
        [rng.normal(size=(3, 8)), rng.normal(size=8), rng.normal(size=8),
         rng.normal(size=(3, 8))],
    )
    assert err < TOL


# -- cross_entropy ------------------------------------------------------------


def test_cross_entropy_uniform():
    logits = Tensor(np.zeros((3, 4)))
    loss = cross_entropy(logits, np.array([0, 1, 2]), pad_id=-1)
    assert np.isclose(loss.item(), np.log(4), atol=1e-6)


def test_cross_entropy_margin_limit():
    last = None
    for margin in (2.0, 10.0, 50.0):
        logits = np.zeros((2, 5), dtype=np.float32)
        logits[0, 3] = margin
        logits[1, 1] = margin
        loss = cross_entropy(Tensor(logits), np.array([3, 1]), pad_id=-1).item()
        if last is not None:
            assert loss < last
        last = loss
    assert last < 1e-6


def test_cross_entropy_value():
    loss = cross_entropy(Tensor([[1.0, 2.0]]), np.array([1]), pad_id=-1)
    assert np.isclose(loss.item(), 0.31326169, atol=1e-5)


def test_cross_entropy_pad_positions_contribute_zero():
    logits = rng.normal(size=(4, 6)).astype(np.float32)
    full = cross_entropy(Tensor(logits[:2]), np.array([1, 2]), pad_id=0).item()
    padded = cross_entropy(
        Tensor(logits), np.array([1, 2, 0, 0]), pad_id=0
    ).item()
    assert np.isclose(full, padded, atol=1e-6)


def test_cross_entropy_all_pad_rejected():
    with pytest.raises(DegenerateBatchError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([9, 9]), pad_id=9)


def test_cross_entropy_gradient():
    targets = np.array([1, 0, 2, -5])
    err = finite_difference_error(
        lambda ps: cross_entropy(ps[0], targets, pad_id=-5),
        [rng.normal(size=(4, 3))],
    )
    assert err < TOL


# -- assorted op gradients ------------------------------------------------------


@pytest.mark.parametrize("op", [relu, sigmoid, tanh])
def test_elementwise_gradients(op):
    err = finite_difference_error(
        lambda ps: sum_(mul(op(ps[0]), ps[1])),
        [rng.normal(size=(4, 3)) + 0.1, rng.normal(size=(4, 3))],
    )
    assert err < TOL


def test_sqrt_gradient():
    err = finite_difference_error(
        lambda ps: sum_(sqrt(add(mul(ps[0], ps[0]), 0.5))),
        [rng.normal(size=(3, 3))],
    )
    assert err < TOL


def test_broadcast_add_mul_gradients():
    def build(ps):
        x, b, s = ps
        return mean(mul(add(x, b), s))

    err = finite_difference_error(
        build, [rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=(4, 3))]
    )
    assert err < TOL


def test_concat_transpose_reshape_gradients():
    def build(ps):
        a, b, w = ps
        joined = concat([a, b], axis=1)
        flat = reshape(transpose(joined, (1, 0)), (-1,))
        return sum_(mul(flat, w))

    err = finite_difference_error(
        build,
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), rng.normal(size=10)],
    )
    assert err < TOL


def test_embedding_gradient():
    ids = np.array([[0, 2], [2, 1]])

    def build(ps):
        table, w = ps
        return sum_(mul(embedding(table, ids), w))

    err = finite_difference_error(
        build, [rng.normal(size=(3, 4)), rng.normal(size=(2, 2, 4))]
    )
    assert err < TOL


def test_sigmoid_cross_entropy_gradient():
    y = (rng.random((4, 5)) > 0.5).astype(np.float64)
    err = finite_difference_error(
        lambda ps: sigmoid_cross_entropy(ps[0], y), [rng.normal(size=(4, 5))]
    )
    assert err < TOL


def test_dropout_gradient_with_fixed_mask():
    def build(ps):
        gen = np.random.default_rng(99)
        return sum_(dropout(ps[0], 0.4, gen, training=True))

    err = finite_difference_error(build, [rng.normal(size=(5, 5))])
    assert err < TOL


def test_composed_graph_gradient():
    # embedding -> single-head attention -> layer norm -> projection -> CE
    ids = np.array([2, 0, 3, 1])
    targets = np.array([1, 3, 0, -1])

    def build(ps):
        table, wq, wk, wv, gain, bias, proj = ps
        x = embedding(table, ids)
        q, k, v = matmul(x, wq), matmul(x, wk), matmul(x, wv)
        att = matmul(softmax(mul(matmul(q, transpose(k, (1, 0))), 0.5), axis=-1), v)
        normed = layer_norm(att, gain, bias)
        logits = matmul(normed, proj)
        return cross_entropy(logits, targets, pad_id=-1)

    d = 6
    err = finite_difference_error(
        build,
        [rng.normal(size=(4, d)), rng.normal(size=(d, d)), rng.normal(size=(d, d)),
         rng.normal(size=(d, d)), rng.normal(size=d), rng.normal(size=d),
         rng.normal(size=(d, 5))],
    )
    assert err < TOL


def test_backward_requires_scalar():
    t = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        add(t, 1.0).backward()


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2, dtype=np.float32)
    opt = Adam([("p", p)], lr=0.1)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])
    assert opt.state.step == 1


def test_adam_first_step_is_signed_lr():
    p = Tensor(np.array([0.5, 0.5, 0.5]), requires_grad=True)
    p.grad = np.array([0.3, -2.0, 7.5], dtype=np.float32)
    opt = Adam([("p", p)], lr=1e-2)
    opt.step()
    expected = 0.5 - 1e-2 * np.sign([0.3, -2.0, 7.5])
    assert np.allclose(p.data, expected, atol=1e-6)


def test_adam_descends_quadratic():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("w", w)], lr=0.05)
    values = []
    for _ in range(2):
        loss = mul(w, w)
        opt.zero_grad()
        sum_(loss).backward()
        opt.step()
        values.append(float(w.data[0] ** 2))
    assert values[0] < 1.0 and values[1] < values[0]


def test_adam_rejects_nonfinite_gradient():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([np.nan], dtype=np.float32)
    opt = Adam([("layer.weight", p)])
    with pytest.raises(OptimizationError) as exc:
        opt.step()
    assert "layer.weight" in str(exc.value)


# -- checkpoints -----------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    arrays = {
        "encoder.w": rng.normal(size=(7, 5)).astype(np.float32),
        "bias": rng.normal(size=11).astype(np.float32),
        "scalarish": np.array([3.14159], dtype=np.float32),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].dtype == np.float32
        assert arrays[name].tobytes() == loaded[name].tobytes()


def test_checkpoint_deterministic_bytes(tmp_path):
    arrays = {"b": np.ones(3, dtype=np.float32), "a": np.zeros(2, dtype=np.float32)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, arrays)
    save_checkpoint(p2, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTDIARC" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.ones(10, dtype=np.float32)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
