"""Exact reverse-mode gradients for the unrolled spiking dynamics.

The reverse sweep mirrors the forward recursion by hand.  Writing with
``gz[l, t] = dLoss/dz[l, t]`` and ``gu[l, t] = dLoss/du[l, t]``:

    gz[l, t] = (top layer:  gzbar / T
                otherwise:  gu[l+1, t] @ W[l+1])  -  theta[l] * gu[l, t+1]
    gu[l, t] = sigma'(u[l, t] - theta[l]) * gz[l, t] + alpha * gu[l, t+1]

with ``gu[l, T+1] = 0``.  Layers are processed top-down (the cross-layer
term needs the full time course of ``gu[l+1]``), time backwards within each
layer.  Thresholds receive two contributions: through the spike argument
``u - theta`` and through the reset term ``-theta * z[l, t-1]``.  Only the
adjacent layer's ``gu`` array is kept alive, so peak memory stays within a
small constant of the forward trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .network import (
    HARD,
    InstabilityError,
    NetworkParams,
    StateTrace,
    SurrogateSpec,
    forward,
    parameter_count,
    parameter_vector,
    replace_parameters,
    surrogate_derivative,
)

_CE_GRAD_L2_CAP = math.sqrt(2.0)
_CE_GRAD_L1_CAP = 2.0
_CE_HESS_CAP = 0.5
_BOUND_SLACK = 1e-12


@dataclass
class Batch:
    """A batch of frame sequences with integer class labels."""

    inputs: np.ndarray  # (n, T, d0)
    labels: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 3:
            raise ValueError(f"inputs must be (n, T, d0), got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be one integer per sequence")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs have non-finite entries")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative class indices")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray
    threshold: np.ndarray


@dataclass
class ParamGrads:
    """Gradients in the same structure as :class:`NetworkParams`.

    ``alpha`` is always computed; whether it enters the canonical vector is
    the caller's choice (frozen by default, matching the direct
    parameterization of the leak).
    """

    layers: list[LayerGrads]
    w_out: np.ndarray
    b_out: np.ndarray
    alpha: float

    def vector(self, include_alpha: bool = False) -> np.ndarray:
        pieces = []
        for layer in self.layers:
            pieces.extend((layer.weight.ravel(), layer.bias, layer.threshold))
        pieces.extend((self.w_out.ravel(), self.b_out))
        if include_alpha:
            pieces.append(np.array([self.alpha]))
        return np.concatenate(pieces)


@dataclass
class GradientBundle:
    """Loss value plus every gradient a training or analysis step needs."""

    loss: float
    grads: ParamGrads
    input_grads: np.ndarray  # (n, T, d0)
    per_sample_grad_norms: np.ndarray | None = None
    per_sample_grad_vectors: np.ndarray | None = None  # (n, P), alpha excluded


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray, float]:
    """Single-sample cross entropy with max-subtracted log-sum-exp.

    Returns ``(loss, gradient, hessian_norm)`` where the gradient is
    ``softmax(logits) - onehot(label)``.  The classical caps — gradient
    2-norm below sqrt(2), 1-norm below 2, Hessian spectral norm below 1/2 —
    are asserted on every call.
    """
    o = np.asarray(logits, dtype=np.float64)
    if o.ndim != 1:
        raise ValueError("logits must be a single class-score vector")
    if not 0 <= label < o.size:
        raise ValueError(f"label {label} out of range for {o.size} classes")
    m = float(o.max())
    lse = m + math.log(float(np.exp(o - m).sum()))
    loss = lse - float(o[label])
    p = np.exp(o - lse)
    grad = p.copy()
    grad[label] -= 1.0
    hessian = np.diag(p) - np.outer(p, p)
    hess_norm = float(np.linalg.eigvalsh(hessian)[-1])
    assert np.linalg.norm(grad) <= _CE_GRAD_L2_CAP + _BOUND_SLACK
    assert np.abs(grad).sum() <= _CE_GRAD_L1_CAP + _BOUND_SLACK
    assert hess_norm <= _CE_HESS_CAP + _BOUND_SLACK
    return loss, grad, hess_norm


def _softmax_loss_and_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy over a batch and the per-sample logit gradients."""
    if np.any(labels >= logits.shape[1]):
        raise ValueError("label exceeds the network's class count")
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    rows = np.arange(logits.shape[0])
    losses = lse[:, 0] - logits[rows, labels]
    v = np.exp(logits - lse)
    v[rows, labels] -= 1.0
    return float(losses.mean()), v


def _require_smooth(spec: SurrogateSpec) -> None:
    if spec.family == HARD:
        raise ValueError("gradient path needs a smooth spike family; the hard step is eval-only")


def batch_loss(params: NetworkParams, spec: SurrogateSpec, batch: Batch) -> float:
    """Mean cross entropy of the smooth forward pass on the batch."""
    _require_smooth(spec)
    trace = forward(params, spec, batch.inputs)
    loss, _ = _softmax_loss_and_grad(trace.logits, batch.labels)
    return loss


def _reverse_sweep(
    params: NetworkParams,
    trace: StateTrace,
    v: np.ndarray,
    per_sample: bool = False,
) -> tuple[ParamGrads, np.ndarray, np.ndarray | None]:
    """Propagate logit cotangents ``v`` (n, C) back to parameters and inputs.

    With ``per_sample=True`` the batch axis is never summed over: the third
    return value holds one canonical gradient vector per sample (each the
    exact gradient of that sample's own scalar objective ``v_i @ o_i``).
    """
    spec = trace.spec
    n, n_steps, _ = trace.inputs.shape
    alpha = params.alpha
    n_layers = params.n_layers

    if per_sample:
        sample_pieces: list[list[np.ndarray]] = [[] for _ in range(n_layers)]
        d_w_out = np.einsum("nc,nd->ncd", v, trace.zbar)
        d_b_out = v.copy()
    else:
        d_w_out = v.T @ trace.zbar
        d_b_out = v.sum(axis=0)

    gzbar = v @ params.w_out  # (n, d_L)
    d_alpha = np.zeros(n) if per_sample else 0.0
    layer_grads: list[LayerGrads | None] = [None] * n_layers
    gu_above: np.ndarray | None = None

    for idx in range(n_layers - 1, -1, -1):
        layer = params.layers[idx]
        u = trace.u[idx]
        z = trace.z[idx]
        sp = surrogate_derivative(spec, u - layer.threshold)
        gu = np.empty_like(u)
        gz = np.empty_like(u)
        gu_next = np.zeros((n, layer.d_out))
        for t in range(n_steps - 1, -1, -1):
            if idx == n_layers - 1:
                gz_t = gzbar / n_steps - layer.threshold * gu_next
            else:
                gz_t = gu_above[:, t, :] @ params.layers[idx + 1].weight - layer.threshold * gu_next
            gu_t = sp[:, t, :] * gz_t + alpha * gu_next
            gz[:, t, :] = gz_t
            gu[:, t, :] = gu_t
            gu_next = gu_t
        if not np.all(np.isfinite(gu)):
            bad_t = int(np.argwhere(~np.isfinite(gu).all(axis=(0, 2)))[-1][0])
            raise InstabilityError(
                f"non-finite gradient first appears at layer {idx + 1}, step {bad_t + 1}"
            )

        z_prev = trace.z[idx - 1] if idx > 0 else trace.inputs
        z_shift = np.zeros_like(z)
        z_shift[:, 1:, :] = z[:, :-1, :]
        u_shift = np.zeros_like(u)
        u_shift[:, 1:, :] = u[:, :-1, :]
        spike_arg_term = sp * gz  # dLoss/d(theta) contribution via the spike argument

        if per_sample:
            d_weight = np.einsum("ntd,ntj->ndj", gu, z_prev)
            d_bias = gu.sum(axis=1)
            d_theta = -(spike_arg_term.sum(axis=1) + (z_shift * gu).sum(axis=1))
            sample_pieces[idx] = [d_weight.reshape(n, -1), d_bias, d_theta]
            d_alpha = d_alpha + (u_shift * gu).sum(axis=(1, 2))
            layer_grads[idx] = LayerGrads(
                d_weight.sum(axis=0), d_bias.sum(axis=0), d_theta.sum(axis=0)
            )
        else:
            layer_grads[idx] = LayerGrads(
                weight=np.einsum("ntd,ntj->dj", gu, z_prev),
                bias=gu.sum(axis=(0, 1)),
                threshold=-(spike_arg_term.sum(axis=(0, 1)) + (z_shift * gu).sum(axis=(0, 1))),
            )
            d_alpha += float((u_shift * gu).sum())

        gu_above = gu
        if idx == 0:
            input_grads = gu @ params.layers[0].weight  # (n, T, d0)

    per_sample_vectors = None
    if per_sample:
        pieces = []
        for idx in range(n_layers):
            pieces.extend(sample_pieces[idx])
        pieces.extend((d_w_out.reshape(n, -1), d_b_out))
        per_sample_vectors = np.concatenate(pieces, axis=1)
        grads = ParamGrads(
            layers=list(layer_grads),
            w_out=d_w_out.sum(axis=0),
            b_out=d_b_out.sum(axis=0),
            alpha=float(np.sum(d_alpha)),
        )
    else:
        grads = ParamGrads(
            layers=list(layer_grads), w_out=d_w_out, b_out=d_b_out, alpha=float(d_alpha)
        )
    return grads, input_grads, per_sample_vectors


def backward(params: NetworkParams, spec: SurrogateSpec, batch: Batch) -> GradientBundle:
    """Loss and exact gradients of the mean cross entropy over the batch."""
    _require_smooth(spec)
    trace = forward(params, spec, batch.inputs)
    loss, v = _softmax_loss_and_grad(trace.logits, batch.labels)
    v /= batch.n_samples  # mean reduction
    grads, input_grads, _ = _reverse_sweep(params, trace, v)
    return GradientBundle(loss=loss, grads=grads, input_grads=input_grads)


def per_sample_gradients(params: NetworkParams, spec: SurrogateSpec, batch: Batch) -> GradientBundle:
    """Per-sample parameter gradients (of each sample's own loss) and input gradients.

    The bundle's ``grads`` field holds the batch-mean gradient, which equals
    the mean of the per-sample vectors by construction of the sweep.
    """
    _require_smooth(spec)
    trace = forward(params, spec, batch.inputs)
    loss, v = _softmax_loss_and_grad(trace.logits, batch.labels)
    grads, input_grads, vectors = _reverse_sweep(params, trace, v, per_sample=True)
    n = batch.n_samples
    mean_grads = ParamGrads(
        layers=[
            LayerGrads(lg.weight / n, lg.bias / n, lg.threshold / n) for lg in grads.layers
        ],
        w_out=grads.w_out / n,
        b_out=grads.b_out / n,
        alpha=grads.alpha / n,
    )
    return GradientBundle(
        loss=loss,
        grads=mean_grads,
        input_grads=input_grads,
        per_sample_grad_norms=np.linalg.norm(vectors, axis=1),
        per_sample_grad_vectors=vectors,
    )


def logit_jacobians(
    params: NetworkParams, spec: SurrogateSpec, frames: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of one sample's logits w.r.t. parameters and inputs.

    Returns ``(j_w, j_x)`` with shapes (C, P) and (C, T * d0), alpha
    excluded from the parameter axis.  Implemented as one per-sample sweep
    on the sample tiled C times with identity cotangents, which yields one
    Jacobian row per copy.
    """
    _require_smooth(spec)
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("logit_jacobians expects a single (T, d0) sequence")
    n_classes = params.n_classes
    tiled = np.broadcast_to(x, (n_classes, *x.shape)).copy()
    trace = forward(params, spec, tiled)
    v = np.eye(n_classes)
    _, input_grads, vectors = _reverse_sweep(params, trace, v, per_sample=True)
    return vectors, input_grads.reshape(n_classes, -1)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = h
        grad[i] = (fn(x + bump) - fn(x - bump)) / (2.0 * h)
    return grad


def finite_difference_oracle(
    params: NetworkParams,
    spec: SurrogateSpec,
    batch: Batch,
    h: float = 1e-6,
    include_alpha: bool = False,
) -> np.ndarray:
    """Central-difference gradient of the batch loss over the canonical vector."""
    _require_smooth(spec)

    def fn(vec: np.ndarray) -> float:
        return batch_loss(replace_parameters(params, vec, include_alpha), spec, batch)

    return central_difference(fn, parameter_vector(params, include_alpha), h)


@dataclass(frozen=True)
class GradcheckResult:
    max_rel_err: float
    n_params: int
    passed: bool


def gradcheck(
    params: NetworkParams,
    spec: SurrogateSpec,
    batch: Batch,
    h: float = 1e-6,
    tol: float = 1e-5,
    include_alpha: bool = True,
) -> GradcheckResult:
    """Compare the reverse sweep against the finite-difference oracle.

    Per-coordinate error is ``|a - b| / max(1, |a|, |b|)`` — relative where
    the gradient is appreciable and absolute near zero, where a pure ratio
    would amplify finite-difference noise.
    """
    bundle = backward(params, spec, batch)
    analytic = bundle.grads.vector(include_alpha)
    numeric = finite_difference_oracle(params, spec, batch, h=h, include_alpha=include_alpha)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = float(np.max(np.abs(analytic - numeric) / scale))
    return GradcheckResult(max_rel_err=err, n_params=analytic.size, passed=err <= tol)
