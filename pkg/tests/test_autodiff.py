"""
Autodiff engine tests.

Group 1: every primitive passes a central finite-difference check.
Group 2: tape semantics and error reporting.
Group 3: losses, normalization, dropout and Adam against hand values.
"""

from __future__ import annotations

import numpy as np
import pytest

from charging_forecast import autodiff as ad
from charging_forecast.errors import ContractError, DimensionError, ParameterError

TOLERANCE = 1e-4


def _weighted_sum(out: ad.DiffTensor, weights: np.ndarray) -> ad.DiffTensor:
    return ad.sum_all(ad.mul(out, ad.constant(weights)))


def _assert_gradients(loss_fn, params) -> None:
    errors = ad.gradient_check(loss_fn, params)
    assert max(errors.values()) < TOLERANCE, errors


# ── Group 1: gradient checks ──────────────────────────────────────────────────


def test_matmul_gradient(rng):
    a = ad.DiffTensor(rng.standard_normal((3, 4)))
    b = ad.DiffTensor(rng.standard_normal((4, 2)))
    w = rng.standard_normal((3, 2))
    _assert_gradients(lambda: _weighted_sum(ad.matmul(a, b), w), {"a": a, "b": b})


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
def test_elementwise_gradients(rng, op):
    a = ad.DiffTensor(rng.standard_normal((3, 2)))
    b = ad.DiffTensor(rng.standard_normal((3, 2)))
    w = rng.standard_normal((3, 2))
    _assert_gradients(lambda: _weighted_sum(op(a, b), w), {"a": a, "b": b})


def test_scale_and_add_constant_gradient(rng):
    x = ad.DiffTensor(rng.standard_normal((2, 5)))
    offset = rng.standard_normal((2, 5))
    w = rng.standard_normal((2, 5))
    _assert_gradients(lambda: _weighted_sum(ad.add_constant(ad.scale(x, -1.7), offset), w), {"x": x})


def test_add_bias_gradient(rng):
    x = ad.DiffTensor(rng.standard_normal((4, 3)))
    bias = ad.DiffTensor(rng.standard_normal(3))
    w = rng.standard_normal((4, 3))
    _assert_gradients(lambda: _weighted_sum(ad.add_bias(x, bias), w), {"x": x, "bias": bias})


def test_concat_columns_gradient(rng):
    a = ad.DiffTensor(rng.standard_normal((3, 2)))
    b = ad.DiffTensor(rng.standard_normal((3, 4)))
    w = rng.standard_normal((3, 6))
    _assert_gradients(lambda: _weighted_sum(ad.concat_columns([a, b]), w), {"a": a, "b": b})


def test_permute_reshape_gradient(rng):
    x = ad.DiffTensor(rng.standard_normal((6, 4)))
    w = rng.standard_normal((2, 4, 3))
    _assert_gradients(
        lambda: _weighted_sum(ad.permute_reshape(x, (2, 3, 4), (0, 2, 1), (2, 4, 3)), w), {"x": x}
    )


def test_graph_propagate_gradient(rng):
    adjacency = rng.standard_normal((3, 3))
    x = ad.DiffTensor(rng.standard_normal((6, 2)))
    w = rng.standard_normal((6, 2))
    _assert_gradients(lambda: _weighted_sum(ad.graph_propagate(adjacency, x), w), {"x": x})


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
def test_activation_gradients(rng, kind):
    x = ad.DiffTensor(rng.standard_normal((4, 3)))
    w = rng.standard_normal((4, 3))
    _assert_gradients(lambda: _weighted_sum(ad.activation(x, kind), w), {"x": x})


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradient(rng, training):
    x = ad.DiffTensor(rng.standard_normal((6, 3)))
    gamma = ad.DiffTensor(rng.uniform(0.5, 1.5, 3))
    beta = ad.DiffTensor(rng.standard_normal(3))
    state = ad.BatchNormState(running_mean=rng.standard_normal(3), running_var=rng.uniform(0.5, 2.0, 3))
    w = rng.standard_normal((6, 3))

    def loss():
        return _weighted_sum(ad.batch_norm(x, gamma, beta, training=training, state=state), w)

    _assert_gradients(loss, {"x": x, "gamma": gamma, "beta": beta})


def test_dropout_gradient_with_fixed_mask(rng):
    x = ad.DiffTensor(rng.standard_normal((5, 4)))
    w = rng.standard_normal((5, 4))
    _assert_gradients(lambda: _weighted_sum(ad.dropout(x, 0.3, training=True, rng=7), w), {"x": x})


def test_loss_gradients(rng):
    pred = ad.DiffTensor(rng.standard_normal((4, 3)) * 2.0)
    target = rng.standard_normal((4, 3))
    _assert_gradients(lambda: ad.huber_loss(pred, target, 1.0), {"pred": pred})
    _assert_gradients(lambda: ad.mse_loss(pred, target), {"pred": pred})
    _assert_gradients(lambda: ad.mean_all(ad.tanh(pred)), {"pred": pred})


# ── Group 2: tape semantics ───────────────────────────────────────────────────


def test_operations_outside_a_tape_are_not_recorded():
    x = ad.DiffTensor([[1.0, 2.0]])
    loss = ad.sum_all(x)
    assert loss.tape is None
    with pytest.raises(ContractError):
        ad.backward(loss)


def test_constants_are_not_recorded():
    with ad.Tape() as tape:
        ad.add(ad.constant([1.0]), ad.constant([2.0]))
    assert len(tape) == 0


def test_entering_a_tape_resets_it():
    x = ad.DiffTensor([1.0, 2.0])
    tape = ad.Tape()
    with tape:
        ad.sum_all(x)
    assert len(tape) == 1
    with tape:
        pass
    assert len(tape) == 0


def test_backward_needs_scalar_loss():
    x = ad.DiffTensor([1.0, 2.0])
    with ad.Tape() as tape:
        y = ad.scale(x, 2.0)
        with pytest.raises(ContractError):
            tape.backward(y)


def test_loss_from_another_tape_is_rejected():
    x = ad.DiffTensor([1.0, 2.0])
    with ad.Tape():
        loss = ad.sum_all(x)
    with ad.Tape() as other:
        with pytest.raises(ContractError):
            other.backward(loss)


def test_gradients_accumulate_through_shared_inputs():
    x = ad.DiffTensor([3.0])
    with ad.Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
        tape.backward(loss)
    assert x.grad[0] == pytest.approx(6.0)


def test_backward_of_sums_gives_ones_and_identity(rng):
    values = rng.standard_normal((3, 4))
    x = ad.DiffTensor(values)
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    y = ad.DiffTensor(values)
    with ad.Tape() as tape:
        tape.backward(ad.scale(ad.sum_all(ad.mul(y, y)), 0.5))
    np.testing.assert_allclose(y.grad, values, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.DiffTensor(np.zeros((2, 3))), ad.DiffTensor(np.zeros((2, 3))))


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(ad.DiffTensor(np.zeros(2)), ad.DiffTensor(np.zeros(3)))


def test_item_requires_single_element():
    with pytest.raises(ContractError):
        ad.DiffTensor([1.0, 2.0]).item()


# ── Group 3: hand values ──────────────────────────────────────────────────────


def test_huber_loss_mixes_both_regimes():
    pred = ad.DiffTensor([0.0, 3.0])
    assert ad.huber_loss(pred, [0.5, 0.0], 1.0).item() == pytest.approx((0.125 + 2.5) / 2)


@pytest.mark.parametrize("delta", [0.5, 1.0, 3.0])
def test_huber_is_continuous_at_delta(delta):
    below = ad.huber_loss(ad.DiffTensor([delta - 1e-9]), [0.0], delta).item()
    above = ad.huber_loss(ad.DiffTensor([delta + 1e-9]), [0.0], delta).item()
    assert abs(above - below) < 1e-6


def test_huber_delta_must_be_positive():
    with pytest.raises(ParameterError):
        ad.huber_loss(ad.DiffTensor([0.0]), [0.0], 0.0)


def test_sigmoid_is_stable_for_large_inputs():
    out = ad.sigmoid(ad.constant([-800.0, 0.0, 800.0])).values
    assert np.all(np.isfinite(out))
    assert out.tolist() == pytest.approx([0.0, 0.5, 1.0])


def test_dropout_eval_is_identity_and_training_rescales():
    x = ad.constant(np.ones((200, 50)))
    assert np.array_equal(ad.dropout(x, 0.5, training=False).values, x.values)
    kept = ad.dropout(x, 0.5, training=True, rng=0).values
    assert set(np.unique(kept)) <= {0.0, 2.0}
    assert kept.mean() == pytest.approx(1.0, abs=0.05)


def test_dropout_probability_range():
    with pytest.raises(ParameterError):
        ad.dropout(ad.constant([1.0]), 1.0, training=True)


def test_batch_norm_updates_running_statistics():
    x = ad.constant([[1.0], [3.0]])
    state = ad.BatchNormState.create(1)
    ad.batch_norm(x, ad.constant([1.0]), ad.constant([0.0]), training=True, state=state)
    assert state.running_mean[0] == pytest.approx(0.2)
    # unbiased batch variance is 2
    assert state.running_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * 2.0)


def test_batch_norm_hand_example():
    out = ad.batch_norm(
        ad.constant([[1.0], [3.0]]), ad.constant([1.0]), ad.constant([0.0]), training=True, state=None
    )
    np.testing.assert_allclose(out.values, [[-1.0], [1.0]], atol=1e-4)


def test_batch_norm_constant_column_maps_to_beta():
    x = ad.constant([[2.0, 1.0], [2.0, 3.0], [2.0, 5.0]])
    out = ad.batch_norm(x, ad.constant([1.0, 1.0]), ad.constant([0.0, 0.0]), training=True, state=None)
    assert np.all(np.isfinite(out.values))
    np.testing.assert_array_equal(out.values[:, 0], [0.0, 0.0, 0.0])


def test_batch_norm_eval_needs_state():
    with pytest.raises(ContractError):
        ad.batch_norm(ad.constant([[1.0]]), ad.constant([1.0]), ad.constant([0.0]), training=False, state=None)


def test_adam_first_step_moves_by_learning_rate():
    p = ad.DiffTensor([1.0])
    p.grad[...] = 0.5
    state = ad.AdamState(learning_rate=0.1)
    ad.adam_step([p], state)
    assert p.values[0] == pytest.approx(0.9, abs=1e-6)
    assert p.grad[0] == 0.0
    assert state.step_count == 1


def test_adam_default_first_step_on_unit_gradient():
    p = ad.DiffTensor([2.0])
    p.grad[...] = 1.0
    ad.adam_step([p], ad.AdamState(learning_rate=0.001))
    assert p.values[0] - 2.0 == pytest.approx(-0.001, rel=1e-6)


def test_adam_with_zero_gradient_keeps_parameters():
    p = ad.DiffTensor([[1.5, -2.0], [0.0, 4.0]])
    before = p.values.copy()
    state = ad.AdamState(learning_rate=0.1)
    for _ in range(3):
        ad.adam_step([p], state)
    np.testing.assert_array_equal(p.values, before)


def test_clip_grad_norm_rescales_to_bound():
    a = ad.DiffTensor([0.0, 0.0])
    a.grad[...] = [3.0, 4.0]
    norm = ad.clip_grad_norm({"a": a}, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(a.grad) == pytest.approx(1.0)


def test_glorot_uniform_respects_limit(rng):
    w = ad.glorot_uniform(rng, 10, 6)
    assert w.shape == (10, 6)
    assert np.abs(w.values).max() <= np.sqrt(6.0 / 16.0)
