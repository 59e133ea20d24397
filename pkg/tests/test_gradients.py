"""Hand-written reverse-mode gradients against finite differences.

The finite-difference oracle is the ground truth here; the loss caps are
checked against the classical closed forms for softmax cross entropy.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ARCTAN_PI, dense_batch, spike_batch, tiny_net
from spikesam.gradients import (
    Batch,
    backward,
    batch_loss,
    central_difference,
    cross_entropy,
    finite_difference_oracle,
    gradcheck,
    logit_jacobians,
    per_sample_gradients,
)
from spikesam.network import (
    FAST_SIGMOID,
    HARD,
    SurrogateSpec,
    forward,
    parameter_vector,
    replace_parameters,
)

# ---------------------------------------------------------------------------
# Cross entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_frozen_values():
    loss, grad, hess = cross_entropy(np.array([10.0, 0.0, 0.0]), 0)
    assert loss == pytest.approx(9.0795737467244446e-05, rel=1e-13)
    assert grad[0] == pytest.approx(0.99990920838434097818 - 1.0, rel=1e-12)
    loss2, grad2, _ = cross_entropy(np.array([0.0, 0.0]), 0)
    assert loss2 == pytest.approx(math.log(2.0), rel=1e-15)
    np.testing.assert_allclose(grad2, [-0.5, 0.5], atol=1e-15)
    assert 0.0 <= hess <= 0.5 + 1e-12


def test_cross_entropy_shift_invariance_and_overflow():
    o = np.array([1.0, -2.0, 0.5])
    base, g, _ = cross_entropy(o, 1)
    shifted, gs, _ = cross_entropy(o + 1000.0, 1)
    assert shifted == pytest.approx(base, rel=1e-12)
    np.testing.assert_allclose(gs, g, atol=1e-12)
    huge, _, _ = cross_entropy(np.array([1e308, 0.0]), 1)
    assert np.isfinite(huge)


def test_cross_entropy_validation():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 2)), 0)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(3), 3)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(3), -1)


@settings(max_examples=80, deadline=None)
@given(
    logits=st.lists(st.floats(-30, 30), min_size=2, max_size=6),
    label_pick=st.integers(0, 5),
)
def test_cross_entropy_caps_property(logits, label_pick):
    o = np.asarray(logits)
    label = label_pick % o.size
    loss, grad, hess = cross_entropy(o, label)
    assert loss >= 0.0
    assert np.linalg.norm(grad) <= math.sqrt(2.0) + 1e-12
    assert np.abs(grad).sum() <= 2.0 + 1e-12
    assert hess <= 0.5 + 1e-12
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Reverse sweep vs. finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "dims,n_classes,family,k,train_alpha",
    [
        ((6, 5, 4), 3, "arctan", math.pi, True),
        ((5, 4), 2, "arctan", 0.7, False),
        ((4, 6, 3), 2, FAST_SIGMOID, 2.0, True),
    ],
)
def test_gradcheck_small_nets(dims, n_classes, family, k, train_alpha):
    params = tiny_net(dims=dims, n_classes=n_classes, seed=hash((dims, k)) % 2**31)
    spec = SurrogateSpec(family, k)
    batch = spike_batch(params, n_samples=3, n_steps=5, seed=21)
    res = gradcheck(params, spec, batch, include_alpha=train_alpha)
    assert res.passed, f"max rel err {res.max_rel_err:.3e}"
    assert res.max_rel_err <= 1e-5


def test_gradcheck_dense_inputs():
    params = tiny_net(dims=(5, 4), n_classes=3, alpha=0.7, theta=0.3, seed=22)
    batch = dense_batch(params, n_samples=4, n_steps=6, seed=23)
    res = gradcheck(params, ARCTAN_PI, batch, include_alpha=True)
    assert res.passed


def test_backward_loss_matches_batch_loss():
    params = tiny_net(seed=24)
    batch = spike_batch(params, seed=25)
    bundle = backward(params, ARCTAN_PI, batch)
    assert bundle.loss == pytest.approx(batch_loss(params, ARCTAN_PI, batch), rel=1e-14)


def test_input_gradients_match_finite_difference():
    params = tiny_net(dims=(4, 3), n_classes=2, seed=26)
    batch = dense_batch(params, n_samples=2, n_steps=3, seed=27)
    bundle = backward(params, ARCTAN_PI, batch)

    def fn(flat: np.ndarray) -> float:
        return batch_loss(params, ARCTAN_PI, Batch(flat.reshape(batch.inputs.shape), batch.labels))

    want = central_difference(fn, batch.inputs.ravel()).reshape(batch.inputs.shape)
    np.testing.assert_allclose(bundle.input_grads, want, rtol=1e-5, atol=1e-8)


def test_per_sample_gradients_average_to_batch_gradient():
    params = tiny_net(dims=(6, 5, 4), n_classes=3, seed=28)
    batch = spike_batch(params, n_samples=5, n_steps=4, seed=29)
    whole = backward(params, ARCTAN_PI, batch).grads.vector(True)
    per = per_sample_gradients(params, ARCTAN_PI, batch)
    singles = np.stack(
        [
            backward(params, ARCTAN_PI, Batch(batch.inputs[i : i + 1], batch.labels[i : i + 1]))
            .grads.vector(True)
            for i in range(batch.n_samples)
        ]
    )
    np.testing.assert_allclose(singles.mean(axis=0), whole, rtol=1e-12, atol=1e-14)
    assert per.per_sample_grad_norms.shape == (batch.n_samples,)
    # Norms consistent with the single-sample sweeps (alpha excluded there).
    want_norms = [
        float(np.linalg.norm(backward(params, ARCTAN_PI, Batch(batch.inputs[i : i + 1], batch.labels[i : i + 1])).grads.vector(False)))
        for i in range(batch.n_samples)
    ]
    np.testing.assert_allclose(per.per_sample_grad_norms, want_norms, rtol=1e-10)


def test_logit_jacobians_against_finite_difference():
    params = tiny_net(dims=(4, 3), n_classes=3, seed=30)
    frames = dense_batch(params, n_samples=1, n_steps=3, seed=31).inputs[0]
    j_w, j_x = logit_jacobians(params, ARCTAN_PI, frames)
    w0 = parameter_vector(params, include_alpha=False)
    assert j_w.shape == (3, w0.size)
    assert j_x.shape == (3, frames.size)

    for c in range(3):
        def logit_c_of_w(vec: np.ndarray, c=c) -> float:
            p = replace_parameters(params, vec, False)
            return float(forward(p, ARCTAN_PI, frames).logits[0, c])

        def logit_c_of_x(flat: np.ndarray, c=c) -> float:
            return float(forward(params, ARCTAN_PI, flat.reshape(frames.shape)).logits[0, c])

        np.testing.assert_allclose(j_w[c], central_difference(logit_c_of_w, w0), rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(
            j_x[c], central_difference(logit_c_of_x, frames.ravel()), rtol=1e-4, atol=1e-7
        )


def test_logit_jacobians_compose_to_loss_gradient():
    params = tiny_net(dims=(5, 4), n_classes=3, seed=32)
    frames = dense_batch(params, n_samples=1, n_steps=4, seed=33).inputs[0]
    label = 1
    j_w, j_x = logit_jacobians(params, ARCTAN_PI, frames)
    trace = forward(params, ARCTAN_PI, frames)
    _, v, _ = cross_entropy(trace.logits[0], label)
    bundle = backward(params, ARCTAN_PI, Batch(frames[None], np.array([label])))
    np.testing.assert_allclose(j_w.T @ v, bundle.grads.vector(False), rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(j_x.T @ v, bundle.input_grads[0].ravel(), rtol=1e-11, atol=1e-13)


def test_gradient_rejects_hard_spec():
    params = tiny_net(seed=34)
    batch = spike_batch(params, seed=35)
    hard = SurrogateSpec(HARD, 1.0)
    with pytest.raises(ValueError):
        backward(params, hard, batch)
    with pytest.raises(ValueError):
        finite_difference_oracle(params, hard, batch)
    with pytest.raises(ValueError):
        logit_jacobians(params, hard, batch.inputs[0])


def test_central_difference_on_polynomial():
    got = central_difference(lambda v: float(v[0] ** 2), np.array([3.0]))
    assert got[0] == pytest.approx(6.0, rel=1e-8)


def test_batch_validation():
    with pytest.raises(ValueError):
        Batch(np.zeros((2, 3)), np.zeros(2, dtype=np.int64))
    with pytest.raises(ValueError):
        Batch(np.zeros((2, 3, 4)), np.zeros(3, dtype=np.int64))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.1, 0.9), theta=st.floats(0.2, 1.0))
def test_property_gradcheck_random_tiny_nets(seed, alpha, theta):
    params = tiny_net(dims=(4, 3), n_classes=2, alpha=alpha, theta=theta, seed=seed)
    batch = spike_batch(params, n_samples=2, n_steps=3, seed=seed + 1)
    assert gradcheck(params, ARCTAN_PI, batch, include_alpha=True).passed
