import numpy as np
import pytest

from sketchshape import autodiff as ad
from sketchshape.gradcheck import finite_difference_check


def par(name, arr):
    return ad.Parameter(name, np.asarray(arr, dtype=np.float64))


def test_matmul_identity():
    m = ad.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    out = ad.matmul(ad.tensor(np.eye(3)), m)
    assert np.array_equal(out.data, m.data)


def test_matmul_hand_case():
    a = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
    b = ad.tensor([[1.0], [1.0]])
    assert np.array_equal(ad.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_error_mentions_both_shapes():
    with pytest.raises(ad.ShapeMismatch, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((2, 3))))


def test_softmax_symmetry_and_stability():
    out = ad.softmax_rows(ad.tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)
    out = ad.softmax_rows(ad.tensor([[1000.0, 0.0]]))
    assert out.data[0, 0] > 1.0 - 1e-12
    assert out.data[0, 1] < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    x = ad.tensor(rng.normal(scale=1e6, size=(5, 9)))
    out = ad.softmax_rows(x)
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


def test_layer_norm_constant_row_is_bias():
    gain = ad.tensor(np.ones((1, 4)))
    bias = ad.tensor(np.zeros((1, 4)))
    out = ad.layer_norm(ad.tensor([[3.0, 3.0, 3.0, 3.0]]), gain, bias)
    assert np.abs(out.data).max() == 0.0


def test_layer_norm_two_point_row():
    eps = 1e-5
    gain = ad.tensor(np.ones((1, 2)))
    bias = ad.tensor(np.zeros((1, 2)))
    out = ad.layer_norm(ad.tensor([[1.0, 3.0]]), gain, bias, eps=eps)
    expected = np.array([[-1.0, 1.0]]) / np.sqrt(1.0 + eps)
    assert np.allclose(out.data, expected, atol=1e-15)


def test_mse_l1_values():
    a, b = ad.tensor([[0.0]]), ad.tensor([[2.0]])
    assert ad.mse(a, b).item() == 4.0
    assert ad.l1(a, b).item() == 2.0
    same = ad.tensor([[1.0, 2.0]])
    assert ad.mse(same, same).item() == 0.0
    assert ad.l1(same, same).item() == 0.0


def test_non_finite_raises():
    with pytest.raises(ad.NumericsError):
        ad.tensor([[np.inf]])


def test_backward_twice_is_error():
    p = par("w", [[1.0, 2.0]])
    with ad.GradTape() as tape:
        loss = ad.mse(tape.watch(p), ad.tensor([[0.0, 0.0]]))
        tape.backward(loss)
        with pytest.raises(ad.TapeError):
            tape.backward(loss)


def test_unused_parameter_gets_zero_gradient():
    used = par("u", [[1.0]])
    unused = par("x", [[5.0, 5.0]])
    with ad.GradTape() as tape:
        lu = tape.watch(used)
        tape.watch(unused)
        tape.backward(ad.mse(lu, ad.tensor([[0.0]])))
    assert unused.grad.shape == unused.value.shape
    assert np.all(unused.grad == 0.0)


def test_nested_tape_rejected():
    with ad.GradTape():
        with pytest.raises(ad.TapeError):
            ad.GradTape().__enter__()


def test_determinism():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    r1 = ad.matmul(ad.tensor(a), ad.tensor(b)).data
    r2 = ad.matmul(ad.tensor(a), ad.tensor(b)).data
    assert np.array_equal(r1, r2)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = par("a", rng.normal(size=(4, 5)))
    b = par("b", rng.normal(size=(5, 3)))
    gain = par("gain", 1.0 + 0.1 * rng.normal(size=(1, 3)))
    bias = par("bias", 0.1 * rng.normal(size=(1, 3)))
    # keep |a - b| away from the L1 kink
    target = ad.tensor(rng.normal(size=(4, 3)) + 3.0)

    def loss_fn(tape):
        prod = ad.matmul(tape.watch(a), tape.watch(b))
        normed = ad.layer_norm(prod, tape.watch(gain), tape.watch(bias))
        soft = ad.softmax_rows(normed)
        act = ad.relu(ad.sigmoid(soft))
        return ad.add(ad.mse(act, target), ad.l1(act, target))

    err = finite_difference_check(loss_fn, [a, b, gain, bias], seed=seed)
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_each_op_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    x = par("x", rng.normal(size=(3, 4)))
    r = par("r", rng.normal(size=(1, 4)))
    target = ad.tensor(rng.normal(size=(3, 4)) + 2.5)

    cases = {
        "softmax": lambda t: ad.softmax_rows(t.watch(x)),
        "relu": lambda t: ad.relu(t.watch(x)),
        "sigmoid": lambda t: ad.sigmoid(t.watch(x)),
        "transpose": lambda t: ad.transpose(ad.matmul(ad.transpose(t.watch(x)), t.watch(x))),
        "rowvec": lambda t: ad.add_rowvec(t.watch(x), t.watch(r)),
        "scale": lambda t: ad.scale(t.watch(x), -1.7),
        "sub": lambda t: ad.sub(t.watch(x), ad.scale(t.watch(x), 0.25)),
    }
    for name, fwd in cases.items():
        def loss_fn(tape, fwd=fwd):
            out = fwd(tape)
            tgt = target if out.shape == (3, 4) else ad.tensor(np.full(out.shape, 2.5))
            return ad.mse(out, tgt)

        err = finite_difference_check(loss_fn, [x, r], seed=seed)
        assert err < 1e-4, f"{name}: {err}"
