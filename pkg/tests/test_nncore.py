import numpy as np
import pytest

from whitebait import nncore as nc

from fdcheck import numeric_grad, rel_error


def fd_check(build_loss, arrays, tol=1e-4, eps=1e-5):
    """Compare autodiff gradients against central differences for every
    array in `arrays`. `build_loss` must construct a fresh graph from the
    current array values and return (tape, loss, tensors) where tensors
    aligns with arrays."""
    tape, loss, tensors = build_loss()
    nc.backward(tape, loss)
    auto = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def loss_value():
        _, l, _ = build_loss()
        return l.data

    for arr, got in zip(arrays, auto):
        want = numeric_grad(loss_value, arr, eps=eps)
        assert rel_error(got, want) < tol


# ---------------------------------------------------------------------------
# Forward values

def test_sigmoid_zero():
    assert nc.sigmoid(nc.Tensor(0.0)).data == 0.5


def test_affine_identity():
    x = nc.Tensor([[1.0, -2.0], [0.5, 3.0]])
    w = nc.Tensor(np.eye(2))
    b = nc.Tensor(np.zeros(2))
    out = nc.affine(x, w, b)
    np.testing.assert_array_equal(out.data, x.data)


def test_mse_of_equal_inputs_is_zero():
    out = nc.mse(nc.Tensor([0.2]), nc.Tensor([0.2]))
    assert out.data == 0.0


def test_affine_shape_error_names_op():
    with pytest.raises(nc.ShapeError, match="affine"):
        nc.affine(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((4, 5))), None)


def test_matmul_shape_error():
    with pytest.raises(nc.ShapeError, match="matmul"):
        nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------------------
# Backward: analytic cases

def test_square_gradient():
    with nc.Tape() as tape:
        x = nc.Tensor(3.0)
        y = nc.mul(x, x)
    nc.backward(tape, y)
    assert x.grad == pytest.approx(6.0)


def test_sigmoid_gradient_at_zero():
    with nc.Tape() as tape:
        x = nc.Tensor(0.0)
        y = nc.sigmoid(x)
    nc.backward(tape, y)
    assert x.grad == pytest.approx(0.25)


def test_fanin_accumulates_both_paths():
    # x used twice: d(x*x)/dx = 2x, each mul path contributing x
    with nc.Tape() as tape:
        x = nc.Tensor([1.5, -0.5])
        y = nc.mean(nc.mul(x, x))
    nc.backward(tape, y)
    np.testing.assert_allclose(x.grad, 2.0 * x.data / 2.0)


def test_backward_requires_scalar_loss():
    with nc.Tape() as tape:
        x = nc.Tensor([1.0, 2.0])
        y = nc.mul(x, x)
    with pytest.raises(nc.ShapeError):
        nc.backward(tape, y)


def test_backward_visits_each_node_once():
    with nc.Tape() as tape:
        x = nc.Tensor([[0.3, -0.2]])
        w = nc.Tensor(np.full((2, 2), 0.1))
        h = nc.tanh(nc.affine(x, w, None))
        loss = nc.mean(h)
    nc.backward(tape, loss)
    assert len(tape) == 3
    assert all(node.visits == 1 for node in tape.nodes)


# ---------------------------------------------------------------------------
# Backward vs finite differences

def test_three_layer_graph_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.uniform(-2, 2, size=(4, 3))
    w1 = rng.uniform(-2, 2, size=(3, 5))
    b1 = rng.uniform(-2, 2, size=5)
    w2 = rng.uniform(-2, 2, size=(5, 4))
    b2 = rng.uniform(-2, 2, size=4)
    w3 = rng.uniform(-2, 2, size=(4, 1))
    b3 = rng.uniform(-2, 2, size=1)
    target = rng.uniform(0, 1, size=(4, 1))
    arrays = [x, w1, b1, w2, b2, w3, b3]

    def build():
        with nc.Tape() as tape:
            tensors = [nc.Tensor(a) for a in arrays]
            tx, tw1, tb1, tw2, tb2, tw3, tb3 = tensors
            h1 = nc.tanh(nc.affine(tx, tw1, tb1))
            h2 = nc.relu(nc.affine(h1, tw2, tb2))
            pred = nc.sigmoid(nc.affine(h2, tw3, tb3))
            loss = nc.mse(pred, nc.Tensor(target))
        return tape, loss, tensors

    fd_check(build, arrays)


@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((3, 4), (3, 1)), ((3, 4), (4,))])
@pytest.mark.parametrize("op", [nc.add, nc.sub, nc.mul, nc.div])
def test_elementwise_ops_match_finite_differences(op, shapes):
    rng = np.random.default_rng(11)
    a = rng.uniform(-2, 2, size=shapes[0])
    b = rng.uniform(0.5, 2.0, size=shapes[1])  # away from 0 for div
    arrays = [a, b]

    def build():
        with nc.Tape() as tape:
            ta, tb = nc.Tensor(a), nc.Tensor(b)
            loss = nc.mean(nc.mul(op(ta, tb), op(ta, tb)))
        return tape, loss, [ta, tb]

    fd_check(build, arrays)


def test_unary_ops_match_finite_differences():
    rng = np.random.default_rng(13)
    cases = [
        (nc.sigmoid, rng.uniform(-2, 2, size=(3, 3))),
        (nc.tanh, rng.uniform(-2, 2, size=(3, 3))),
        (nc.relu, rng.uniform(0.2, 2, size=(3, 3)) * rng.choice([-1, 1], size=(3, 3))),
        (nc.sqrt, rng.uniform(0.3, 2, size=(3, 3))),
    ]
    for op, a in cases:
        def build():
            with nc.Tape() as tape:
                t = nc.Tensor(a)
                loss = nc.mean(op(t))
            return tape, loss, [t]

        fd_check(build, [a])


def test_structural_ops_match_finite_differences():
    rng = np.random.default_rng(17)
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=(3, 2))
    arrays = [a, b]

    def build():
        with nc.Tape() as tape:
            ta, tb = nc.Tensor(a), nc.Tensor(b)
            joined = nc.concat([ta, tb], axis=1)
            piece = nc.slice_axis(joined, 1, 1, 5)
            flat = nc.reshape(piece, (12,))
            col = nc.mean(joined, axis=0)
            loss = nc.add(nc.mean(nc.mul(flat, flat)), nc.mean(nc.mul(col, col)))
        return tape, loss, [ta, tb]

    fd_check(build, arrays)


def test_matmul_and_mse_match_finite_differences():
    rng = np.random.default_rng(19)
    a = rng.uniform(-2, 2, size=(2, 3))
    b = rng.uniform(-2, 2, size=(3, 2))
    t = rng.uniform(-1, 1, size=(2, 2))
    arrays = [a, b, t]

    def build():
        with nc.Tape() as tape:
            ta, tb, tt = nc.Tensor(a), nc.Tensor(b), nc.Tensor(t)
            loss = nc.mse(nc.matmul(ta, tb), tt)
        return tape, loss, [ta, tb, tt]

    fd_check(build, arrays)


def test_gather_accumulates_repeated_rows():
    rng = np.random.default_rng(23)
    table = rng.uniform(-1, 1, size=(5, 3))
    ids = np.array([2, 2, 4])

    def build():
        with nc.Tape() as tape:
            tt = nc.Tensor(table)
            out = nc.gather_rows(tt, ids)
            loss = nc.mean(nc.mul(out, out))
        return tape, loss, [tt]

    fd_check(build, [table])
    # row 2 looked up twice: its gradient is the sum of both paths
    with nc.Tape() as tape:
        tt = nc.Tensor(table)
        out = nc.gather_rows(tt, np.array([2, 2]))
        loss = nc.mean(out)
    nc.backward(tape, loss)
    np.testing.assert_allclose(tt.grad[2], 2.0 * np.full(3, 1.0 / 6.0))
    assert np.all(tt.grad[[0, 1, 3, 4]] == 0.0)


def test_gather_rejects_out_of_range_ids():
    table = nc.Tensor(np.zeros((3, 2)))
    with pytest.raises(nc.ShapeError, match="out of range"):
        nc.gather_rows(table, np.array([3]))


# ---------------------------------------------------------------------------
# Numerics policy

def test_non_finite_result_raises():
    with pytest.raises(nc.NumericsError):
        nc.div(nc.Tensor([1.0]), nc.Tensor([0.0]))
    with pytest.raises(nc.NumericsError):
        nc.sqrt(nc.Tensor([-1.0]))


def test_inference_mode_records_nothing():
    x = nc.Tensor([1.0, 2.0])
    y = nc.mul(x, x)  # no tape active
    assert y.grad is None
    with nc.Tape() as tape:
        nc.mul(x, x)
    assert len(tape) == 1


# ---------------------------------------------------------------------------
# RMSProp

def test_rmsprop_single_step_matches_update_rule():
    sched = nc.TrainSchedule(learning_rate=1e-3, rho=0.9, epsilon=1e-8)
    p = nc.Parameter("w", [1.0])
    p.grad[...] = 1.0
    nc.rmsprop_step(p, sched)
    # direct evaluation of the rule
    acc = 0.9 * 0.0 + 0.1 * 1.0
    delta = 1e-3 * 1.0 / (np.sqrt(acc) + 1e-8)
    assert p.acc[0] == pytest.approx(0.1, abs=1e-15)
    assert 1.0 - p.data[0] == pytest.approx(delta, abs=1e-15)
    assert delta == pytest.approx(3.1623e-3, rel=1e-4)


def test_rmsprop_two_steps_accumulator():
    sched = nc.TrainSchedule()
    p = nc.Parameter("w", [0.0])
    p.grad[...] = 1.0
    nc.rmsprop_step(p, sched)
    p.grad[...] = 1.0
    nc.rmsprop_step(p, sched)
    assert p.acc[0] == pytest.approx(0.19, abs=1e-12)


def test_rmsprop_zero_gradient_decays_accumulator_only():
    sched = nc.TrainSchedule()
    p = nc.Parameter("w", [2.0])
    p.acc[...] = 0.4
    p.grad[...] = 0.0
    nc.rmsprop_step(p, sched)
    assert p.data[0] == 2.0
    assert p.acc[0] == pytest.approx(0.9 * 0.4)


def test_rmsprop_accumulator_stays_nonnegative():
    sched = nc.TrainSchedule()
    rng = np.random.default_rng(3)
    p = nc.Parameter("w", np.zeros(8))
    for _ in range(50):
        p.grad[...] = rng.normal(scale=3.0, size=8)
        nc.rmsprop_step(p, sched)
        assert np.all(p.acc >= 0.0)


def test_rmsprop_rejects_non_finite_gradient():
    p = nc.Parameter("w", [1.0])
    p.grad[...] = np.nan
    with pytest.raises(nc.NumericsError):
        nc.rmsprop_step(p, nc.TrainSchedule())


# ---------------------------------------------------------------------------
# Schedule

def run_fake_schedule(val_sequence, schedule):
    """Drive run_schedule with a scripted validation-loss sequence.

    The first value is the epoch-0 baseline. State is a single counter so
    snapshot/restore behaviour is observable.
    """
    vals = iter(val_sequence)
    state = {"epoch": 0}
    lrs = []

    def train_step(lr):
        state["epoch"] += 1
        lrs.append(lr)
        return 0.0

    def val_loss():
        return next(vals)

    result = nc.run_schedule(
        train_step,
        val_loss,
        schedule,
        snapshot=lambda: dict(state),
        restore=lambda snap: state.update(snap),
    )
    return result, state, lrs


def test_constant_val_loss_decays_after_patience_epochs():
    sched = nc.TrainSchedule(learning_rate=1e-3, patience=5, max_epochs=12)
    result, _, lrs = run_fake_schedule([1.0] * 13, sched)
    # epochs 1..5 run at the base rate; the first decay lands before epoch 6
    assert lrs[:5] == [1e-3] * 5
    assert lrs[5] == pytest.approx(5e-4)
    assert result.best_epoch == 0


def test_strictly_decreasing_runs_to_cap_and_best_is_last():
    sched = nc.TrainSchedule(max_epochs=10)
    vals = [1.0 - 0.05 * i for i in range(11)]
    result, _, lrs = run_fake_schedule(vals, sched)
    assert len(lrs) == 10
    assert result.best_epoch == 10
    assert len(result.history) == 11  # baseline + 10 epochs


def test_best_epoch_params_are_restored():
    sched = nc.TrainSchedule(max_epochs=6, patience=10)
    vals = [2.0, 1.0, 0.5, 0.6, 0.6, 0.6, 0.6]
    result, state, _ = run_fake_schedule(vals, sched)
    assert result.best_epoch == 2
    assert result.best_val == 0.5
    assert state["epoch"] == 2  # restored to the epoch-2 snapshot


def test_schedule_stops_when_lr_would_drop_below_min():
    sched = nc.TrainSchedule(
        learning_rate=1e-3, patience=1, lr_decay_factor=0.5,
        min_lr=3e-4, max_epochs=50,
    )
    # never improves: decay after epoch 1 (1e-3 -> 5e-4), then the decay
    # after epoch 2 would hit 2.5e-4 < min_lr, so training stops there.
    result, _, lrs = run_fake_schedule([1.0] * 51, sched)
    assert lrs == [1e-3, 5e-4]
    assert result.history[-1].epoch == 2


def test_schedule_validates_ranges():
    with pytest.raises(ValueError):
        nc.TrainSchedule(learning_rate=0.0)
    with pytest.raises(ValueError):
        nc.TrainSchedule(rho=1.0)
    with pytest.raises(ValueError):
        nc.TrainSchedule(lr_decay_factor=0.0)


# ---------------------------------------------------------------------------
# Serialization, seed streams, determinism

def test_parameter_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    params = [
        nc.Parameter("embed/weights", rng.normal(size=(7, 3))),
        nc.Parameter("dense/bias", rng.normal(size=4)),
    ]
    path = tmp_path / "params.bin"
    nc.save_parameters(path, params)
    loaded = nc.load_parameters(path)
    assert set(loaded) == {"embed/weights", "dense/bias"}
    for p in params:
        np.testing.assert_array_equal(loaded[p.name], p.data)


def test_parameter_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTAPARAMFILE")
    with pytest.raises(ValueError, match="magic"):
        nc.load_parameters(path)


def test_parameter_file_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "params.bin"
    nc.save_parameters(path, [nc.Parameter("w", [1.0])])
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        nc.load_parameters(path)


def test_seed_stream_reproducible_and_name_dependent():
    a1 = nc.seed_stream(42, "init/post_text").uniform(size=4)
    a2 = nc.seed_stream(42, "init/post_text").uniform(size=4)
    b = nc.seed_stream(42, "init/post_time").uniform(size=4)
    c = nc.seed_stream(43, "init/post_text").uniform(size=4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_identical_seeds_give_bit_identical_tensors():
    def pipeline():
        rng = nc.seed_stream(9, "demo")
        w = nc.Parameter("w", rng.uniform(-0.05, 0.05, size=(4, 4)))
        x = nc.Tensor(rng.uniform(-2, 2, size=(3, 4)))
        with nc.Tape() as tape:
            h = nc.tanh(nc.affine(x, w, None))
            loss = nc.mean(nc.mul(h, h))
        nc.backward(tape, loss)
        nc.rmsprop_step(w, nc.TrainSchedule())
        return w.data.tobytes(), w.grad.tobytes(), loss.data.tobytes()

    assert pipeline() == pipeline()
