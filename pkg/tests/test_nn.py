import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from certsat.nn import autodiff as ad
from certsat.nn import (
    ParameterStore,
    ShapeMismatch,
    Tape,
    Tensor,
    adam_step,
    clip_gradients,
    global_norm,
    grad_check,
    load_checkpoint,
    lr_schedule,
    lstm_cell_step,
    mlp_forward,
    save_checkpoint,
)


def closure_for(store, fn):
    """Wrap ``fn(store) -> scalar Tensor`` as a grad_check closure."""
    def run():
        with Tape() as tape:
            loss = fn(store)
            tape.backward(loss)
        return loss.item(), tape.leaf_grads()
    return run


# -- layers -------------------------------------------------------------------

def test_mlp_identity():
    s = ParameterStore()
    s.add_mlp("m", [3, 3], activation=None, bias=False)
    s.values["m/W0"] = np.eye(3)
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(mlp_forward(s, "m", Tensor(x)).value, x)


def test_mlp_zero_sigmoid():
    s = ParameterStore()
    s.add_mlp("m", [4, 5, 2], out_activation="sigmoid")
    for k in s.values:
        s.values[k][:] = 0.0
    out = mlp_forward(s, "m", Tensor(np.random.default_rng(0).normal(size=(3, 4)))).value
    np.testing.assert_array_equal(out, np.full((3, 2), 0.5))


def test_mlp_shape_check():
    s = ParameterStore()
    s.add_mlp("m", [3, 2])
    with pytest.raises(ShapeMismatch):
        mlp_forward(s, "m", Tensor(np.zeros((1, 4))))


@pytest.mark.parametrize("layer_norm", [False, True])
def test_lstm_zero(layer_norm):
    s = ParameterStore()
    s.add_lstm("l", 3, 4, layer_norm=layer_norm)
    for k in s.values:
        s.values[k][:] = 0.0
    z = Tensor(np.zeros((2, 4)))
    h, c = lstm_cell_step(s, "l", Tensor(np.zeros((2, 3))), (z, z))
    np.testing.assert_array_equal(h.value, 0.0)
    np.testing.assert_array_equal(c.value, 0.0)


def test_lstm_reference_values():
    # hand-rolled gates with numpy as the oracle
    s = ParameterStore(3)
    s.add_lstm("l", 2, 3)
    rng = np.random.default_rng(1)
    x, h, c = rng.normal(size=(4, 2)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    z = np.concatenate([x, h], axis=1) @ s.values["l/W"] + s.values["l/b"]
    sig = lambda t: 1 / (1 + np.exp(-t))
    i, f, g, o = sig(z[:, :3]), sig(z[:, 3:6]), np.tanh(z[:, 6:9]), sig(z[:, 9:])
    c2 = f * c + i * g
    h2, c_out = lstm_cell_step(s, "l", Tensor(x), (Tensor(h), Tensor(c)))
    np.testing.assert_allclose(c_out.value, c2, atol=1e-12)
    np.testing.assert_allclose(h2.value, o * np.tanh(c2), atol=1e-12)


def test_lstm_shape_check():
    s = ParameterStore()
    s.add_lstm("l", 2, 3)
    z = Tensor(np.zeros((1, 3)))
    with pytest.raises(ShapeMismatch):
        lstm_cell_step(s, "l", Tensor(np.zeros((1, 5))), (z, z))


def test_duplicate_registration():
    s = ParameterStore()
    s.add("w", np.zeros(2))
    with pytest.raises(KeyError):
        s.add("w", np.zeros(2))


# -- gradients ----------------------------------------------------------------

def test_grad_check_linear_exact():
    s = ParameterStore()
    s.add("w", np.arange(5.0))
    rep = grad_check(closure_for(s, lambda st: ad.sum_all(st["w"])), s.values, tol=1e-9)
    assert rep.ok and rep.max_abs_error < 1e-9 and rep.checked == 5


def test_grad_check_flags_wrong_backward():
    s = ParameterStore()
    s.add("w", np.array([1.0, 2.0]))

    def bad(st):
        w = st["w"]
        sq = ad._out(w.value ** 2, (w,), lambda g: (g * w.value,))  # missing factor 2
        return ad.sum_all(sq)

    rep = grad_check(closure_for(s, bad), s.values)
    assert not rep.ok
    assert rep.worst[0] == "w"
    assert not grad_check(closure_for(s, bad), s.values, refine=True, floor=None).ok


def _relu_sum(st):
    return ad.sum_all(ad.relu(st["w"]))


def test_grad_check_kink_inside_stencil():
    s = ParameterStore()
    s.add("w", np.array([3e-6, -4e-6, 0.5]))  # first two within eps of the kink
    plain = grad_check(closure_for(s, _relu_sum), s.values, eps=1e-5)
    assert not plain.ok
    rep = grad_check(closure_for(s, _relu_sum), s.values, eps=1e-5, refine=True)
    assert rep.ok and rep.refined == 2 and rep.max_abs_error < 1e-9


def test_grad_check_refine_keeps_smooth_entries():
    s = ParameterStore()
    s.add("w", np.array([0.3, -1.2]))
    rep = grad_check(closure_for(s, lambda st: ad.sum_all(ad.tanh(st["w"]))), s.values, refine=True)
    assert rep.ok and rep.refined == 0


def test_grad_check_auto_floor():
    s = ParameterStore()
    s.add("w", np.array([2.0]))
    rep = grad_check(closure_for(s, lambda st: ad.sum_all(st["w"])), s.values, eps=1e-5, tol=1e-4, floor=None)
    assert rep.floor == pytest.approx(10 * np.finfo(np.float64).eps * 2.0 / 1e-9)


@pytest.mark.parametrize("layer_norm", [False, True])
def test_lstm_mlp_gradients(layer_norm):
    s = ParameterStore(7)
    s.add_mlp("m", [3, 4, 3], activation="tanh")
    s.add_lstm("l", 3, 3, layer_norm=layer_norm)
    rng = np.random.default_rng(2)
    for k in s.values:
        s.values[k] = s.values[k] + rng.normal(0, 0.2, s.values[k].shape)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=12)

    def loss(st):
        h = Tensor(np.zeros((4, 3)))
        c = Tensor(np.zeros((4, 3)))
        for _ in range(3):
            h, c = lstm_cell_step(st, "l", mlp_forward(st, "m", Tensor(x)), (h, c))
            x_ = h
        return ad.dot_const(ad.reshape(x_, (12,)), w)

    rep = grad_check(closure_for(s, loss), s.values, eps=1e-6, max_per_param=None)
    assert rep.max_rel_error < 1e-6


def _op_cases():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    return {
        "matmul": lambda a: ad.sum_all(ad.tanh(ad.matmul(a, Tensor(B)))),
        "matmul_t": lambda a: ad.sum_all(ad.sigmoid(ad.matmul_t(a, a))),
        "layer_norm": lambda a: ad.dot_const(ad.reshape(ad.layer_norm(a), (12,)), np.arange(12.0)),
        "mul_row": lambda a: ad.sum_all(ad.mul(ad.mul_row(a, Tensor(v)), a)),
        "take_put": lambda a: ad.sum_all(ad.relu(ad.put_rows(a, [0], ad.take(a, [2])))),
        "logsumexp": lambda a: ad.logsumexp(ad.reshape(a, (12,))),
        "log_prob": lambda a: ad.log_prob(ad.reshape(a, (12,)), [0, 2, 5, 7, 11], [2, 7]),
        "bce": lambda a: ad.bce_logits_sum(a, (np.arange(12) % 2).reshape(3, 4)),
        "mean_cols": lambda a: ad.sum_all(ad.mul(ad.tile_rows(ad.mean_rows(a), 3), ad.cols(ad.concat([a, a], 1), 2, 6))),
    }, A


@pytest.mark.parametrize("name", list(_op_cases()[0]))
def test_op_gradients(name):
    cases, A = _op_cases()
    s = ParameterStore()
    s.add("a", A)
    rep = grad_check(closure_for(s, lambda st: cases[name](st["a"])), s.values, eps=1e-6, max_per_param=None)
    assert rep.max_rel_error < 1e-6, rep


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 6), elements=st.floats(-5, 5)))
def test_layer_norm_standardizes(x):
    y = ad.layer_norm(Tensor(x), blocks=2).value.reshape(2, 2, 3)
    np.testing.assert_allclose(y.mean(axis=2), 0.0, atol=1e-9)
    assert np.all(y.var(axis=2) <= 1.0 + 1e-9)


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch):
        ad.layer_norm(Tensor(np.zeros((1, 5))), blocks=2)
    with Tape() as t:
        x = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ShapeMismatch):
            t.backward(ad.scale(x, 2.0))


def test_no_tape_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.scale(x, 2.0)
    assert not y.requires_grad


# -- optimisation -------------------------------------------------------------

def test_clip_halves_unit_norm():
    g = {"a": np.array([0.6]), "b": np.array([0.0, 0.8])}
    clipped, norm = clip_gradients(g, 0.5)
    assert norm == pytest.approx(1.0)
    np.testing.assert_allclose(clipped["a"], [0.3])
    np.testing.assert_allclose(clipped["b"], [0.0, 0.4])
    assert global_norm(clipped) == pytest.approx(0.5)


def test_clip_leaves_small():
    g = {"a": np.array([0.1])}
    assert clip_gradients(g, 0.5)[0]["a"] is g["a"]


def test_lr_schedule_endpoints():
    assert lr_schedule(0, 100) == 5e-5
    assert lr_schedule(100, 100) == 0.0
    assert lr_schedule(50, 100) == pytest.approx(2.5e-5)
    assert lr_schedule(200, 100) == 0.0


def test_adam_zero_grads_no_change():
    s = ParameterStore()
    s.add("w", np.array([1.0, -2.0]))
    adam_step(s, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(s.values["w"], [1.0, -2.0])


def test_adam_first_step_size():
    # bias-corrected first step moves each weight by lr * sign(g)
    s = ParameterStore()
    s.add("w", np.array([1.0, -2.0]))
    adam_step(s, {"w": np.array([3.0, -0.01])}, 0.1)
    np.testing.assert_allclose(s.values["w"], [0.9, -1.9], atol=1e-6)


def test_adam_respects_frozen():
    s = ParameterStore()
    s.add("w", np.array([1.0]))
    s.frozen = {"w"}
    adam_step(s, {"w": np.array([1.0])}, 0.1)
    assert s.values["w"][0] == 1.0


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    s = ParameterStore(4)
    s.add_mlp("m", [3, 2])
    s.add_lstm("l", 2, 2, layer_norm=True)
    s.add("scalar", np.array(2.5))
    s.save(tmp_path / "c.bin", {"note": "x"})
    t, meta = ParameterStore.load(tmp_path / "c.bin")
    assert meta == {"note": "x"}
    assert t.modules == s.modules
    for k, v in s.values.items():
        assert t.values[k].shape == v.shape
        np.testing.assert_array_equal(t.values[k], v)


def test_checkpoint_bytes_stable(tmp_path):
    tensors = {"b": np.arange(3.0), "a": np.eye(2)}
    save_checkpoint(tmp_path / "x", tensors)
    save_checkpoint(tmp_path / "y", dict(reversed(list(tensors.items()))))
    assert (tmp_path / "x").read_bytes() == (tmp_path / "y").read_bytes()
    got, meta = load_checkpoint(tmp_path / "x")
    assert meta == {} and set(got) == {"a", "b"}


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "g").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "g")
