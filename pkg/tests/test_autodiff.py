import numpy as np
import pytest

from elgar import autodiff as ad


def op_check(build, shapes, rng, n_coords=8, h=1e-6, tol=1e-7):
    """Finite-difference check of <seed, build(inputs)> against the tape."""
    arrs = [rng.standard_normal(s) for s in shapes]
    tensors = [ad.Tensor(a.copy()) for a in arrs]
    out = build(*tensors)
    seed = rng.standard_normal(out.data.shape)
    out.backward(seed)

    def value():
        ts = [ad.Tensor(a) for a in arrs]
        return float((build(*ts).data * seed).sum())

    worst = 0.0
    for arr, t in zip(arrs, tensors):
        for _ in range(n_coords):
            i = rng.integers(arr.size)
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            hi = value()
            arr.flat[i] = orig - h
            lo = value()
            arr.flat[i] = orig
            fd = (hi - lo) / (2 * h)
            an = t.grad.flat[i] if t.grad is not None else 0.0
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst < tol, worst


def test_add_broadcast(rng):
    op_check(lambda a, b: ad.add(a, b), [(3, 4), (4,)], rng)
    op_check(lambda a, b: ad.add(a, b), [(3, 4), (1, 4)], rng)


def test_mul_broadcast(rng):
    op_check(lambda a, b: ad.mul(a, b), [(3, 4), (1, 4)], rng)
    op_check(lambda a, b: ad.mul(a, b), [(2, 3, 4), (4,)], rng)


def test_matmul_batched(rng):
    op_check(lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)], rng)
    op_check(lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 5)], rng)


def test_matmul_rejects_mismatched_batch(rng):
    with pytest.raises(ValueError):
        ad.matmul(ad.Tensor(np.zeros((2, 3, 4))), ad.Tensor(np.zeros((4, 5))))


def test_linear(rng):
    op_check(lambda x, w, b: ad.linear(x, w, b), [(5, 3), (3, 4), (4,)], rng)


def test_gelu(rng):
    op_check(lambda a: ad.gelu(a), [(4, 6)], rng)


def test_gelu_values():
    # the smooth unit passes through zero and is near-identity for large x
    x = ad.Tensor(np.array([[0.0, 10.0, -10.0]]))
    y = ad.gelu(x).data
    assert y[0, 0] == 0.0
    assert abs(y[0, 1] - 10.0) < 1e-6
    assert abs(y[0, 2]) < 1e-6


def test_softmax(rng):
    op_check(lambda a: ad.softmax(a), [(3, 5)], rng)
    y = ad.softmax(ad.Tensor(np.array([[1000.0, 1000.0]]))).data
    assert np.allclose(y, 0.5)  # shift keeps large logits finite


def test_layer_norm(rng):
    op_check(lambda a: ad.layer_norm(a), [(4, 6)], rng)
    y = ad.layer_norm(ad.Tensor(rng.standard_normal((3, 8)))).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-12
    assert np.abs(y.std(axis=-1) - 1.0).max() < 1e-3


def test_gather(rng):
    idx = np.array([0, 2, 2, 1])
    op_check(lambda t: ad.gather(t, idx), [(5, 3)], rng)
    # repeated rows accumulate gradient
    t = ad.Tensor(rng.standard_normal((5, 3)))
    out = ad.gather(t, idx)
    out.backward(np.ones((4, 3)))
    assert np.allclose(t.grad[2], 2.0)
    assert np.allclose(t.grad[3], 0.0)


def test_reshape_transpose_split(rng):
    op_check(lambda a: ad.reshape(a, (2, 6)), [(3, 4)], rng)
    op_check(lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 4)], rng)
    op_check(lambda a: ad.add(ad.split(a, 3)[0], ad.split(a, 3)[2]), [(2, 6)], rng)


def test_concat_rows(rng):
    op_check(lambda a, b: ad.concat_rows([a, b]), [(2, 3), (4, 3)], rng)


def test_diamond_graph_accumulates(rng):
    # y = a*a + a: gradient 2a + 1 through two paths
    a = ad.Tensor(np.array([3.0]))
    y = ad.add(ad.mul(a, a), a)
    y.backward(np.ones(1))
    assert np.allclose(a.grad, 7.0)


def test_backward_seed_shape_guard():
    a = ad.Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ad.add(a, a).backward(np.zeros(3))
