"""Two-pass sharpness-aware updates and the convergence experiment.

One update: (1) gradient at the current point, (2) normalized ascent
perturbation of radius ``rho``, (3) gradient at the perturbed point on a
second minibatch, (4) base-rule update with the second gradient.  Setting
``rho = 0`` with a reused second minibatch reproduces the plain baseline
update exactly (the perturbed point is the original point and the recomputed
gradient is bit-identical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .bounds import assumptions_from, check_caps, compute_constants, convergence_rhs
from .gradients import Batch, backward
from .network import (
    NetworkParams,
    SurrogateSpec,
    parameter_count,
    parameter_vector,
    replace_parameters,
    threshold_slices,
)

SGD = "sgd"
MOMENTUM = "momentum"
REUSED = "reused"
INDEPENDENT = "independent"


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters for baseline and two-pass training.

    ``second_batch`` picks the minibatch policy for the second pass:
    ``"independent"`` (a fresh batch, matching the convergence analysis) or
    ``"reused"`` (the same batch, the common practical choice).  Thresholds
    train by default; the leak is frozen by default (its exact gradient is
    still computed and reported).
    """

    eta: float
    rho: float = 0.0
    delta: float = 1e-12
    base: str = SGD
    momentum: float = 0.9
    second_batch: str = INDEPENDENT
    train_threshold: bool = True
    train_alpha: bool = False
    theta_floor: float = 1e-3

    def __post_init__(self) -> None:
        if self.eta <= 0.0:
            raise ValueError("step size must be positive")
        if self.rho < 0.0:
            raise ValueError("perturbation radius must be non-negative")
        if self.delta <= 0.0:
            raise ValueError("normalization floor must be positive")
        if self.base not in (SGD, MOMENTUM):
            raise ValueError(f"unknown base rule {self.base!r}")
        if self.second_batch not in (REUSED, INDEPENDENT):
            raise ValueError(f"unknown second-batch policy {self.second_batch!r}")
        if self.theta_floor <= 0.0:
            raise ValueError("threshold floor must be positive (thresholds stay positive)")


@dataclass(frozen=True)
class StepReport:
    """What one update did: losses, gradient norms, perturbation size, passes."""

    loss_first: float
    grad_norm_first: float
    epsilon_norm: float
    loss_second: float | None
    grad_norm_second: float | None
    n_passes: int


def sam_perturbation(grad: np.ndarray, rho: float, delta: float = 1e-12) -> np.ndarray:
    """Normalized ascent direction ``rho * g / (||g|| + delta)``.

    The floor ``delta`` makes the zero-gradient case well defined (returns
    the zero vector); the result's norm never exceeds ``rho``.
    """
    if rho < 0.0:
        raise ValueError("perturbation radius must be non-negative")
    if rho == 0.0:
        return np.zeros_like(grad)
    eps = grad * (rho / (float(np.linalg.norm(grad)) + delta))
    assert float(np.linalg.norm(eps)) <= rho * (1.0 + 1e-12)
    return eps


LossGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


def two_pass_update(
    w: np.ndarray,
    loss_grad: LossGrad,
    cfg: OptimizerConfig,
    velocity: np.ndarray | None = None,
    loss_grad_second: LossGrad | None = None,
) -> tuple[np.ndarray, np.ndarray | None, StepReport]:
    """One sharpness-aware update on a plain parameter vector.

    ``loss_grad`` evaluates the first-pass objective; ``loss_grad_second``
    (default: the same function) evaluates the second pass at the perturbed
    point.  Returns the new vector, the updated momentum buffer, and a report.
    """
    loss1, g1 = loss_grad(w)
    eps = sam_perturbation(g1, cfg.rho, cfg.delta)
    second = loss_grad_second if loss_grad_second is not None else loss_grad
    loss2, g2 = second(w + eps)
    if cfg.base == MOMENTUM:
        velocity = g2.copy() if velocity is None else cfg.momentum * velocity + g2
        step = velocity
    else:
        step = g2
    w_new = w - cfg.eta * step
    report = StepReport(
        loss_first=loss1,
        grad_norm_first=float(np.linalg.norm(g1)),
        epsilon_norm=float(np.linalg.norm(eps)),
        loss_second=loss2,
        grad_norm_second=float(np.linalg.norm(g2)),
        n_passes=2,
    )
    return w_new, velocity, report


def single_pass_update(
    w: np.ndarray,
    loss_grad: LossGrad,
    cfg: OptimizerConfig,
    velocity: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None, StepReport]:
    """One plain baseline update on a parameter vector."""
    loss1, g1 = loss_grad(w)
    if cfg.base == MOMENTUM:
        velocity = g1.copy() if velocity is None else cfg.momentum * velocity + g1
        step = velocity
    else:
        step = g1
    w_new = w - cfg.eta * step
    report = StepReport(
        loss_first=loss1,
        grad_norm_first=float(np.linalg.norm(g1)),
        epsilon_norm=0.0,
        loss_second=None,
        grad_norm_second=None,
        n_passes=1,
    )
    return w_new, velocity, report


def trainable_mask(params: NetworkParams, cfg: OptimizerConfig) -> np.ndarray:
    """Boolean mask over the canonical vector selecting trainable coordinates."""
    mask = np.ones(parameter_count(params, cfg.train_alpha), dtype=bool)
    if not cfg.train_threshold:
        for sl in threshold_slices(params):
            mask[sl] = False
    return mask


class SastOptimizer:
    """Stateful optimizer wrapping the vector-level updates for networks.

    Holds the momentum buffer (when the base rule uses one) and the
    trainable-coordinate mask.  Frozen coordinates receive no perturbation
    and no update.  After each update the thresholds are projected onto the
    admissible set (clamped at ``theta_floor``), keeping the model inside
    the strictly-positive-threshold family.
    """

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.velocity: np.ndarray | None = None

    def _project(self, params: NetworkParams, w: np.ndarray) -> np.ndarray:
        out = w.copy()
        for sl in threshold_slices(params):
            np.maximum(out[sl], self.cfg.theta_floor, out=out[sl])
        return out

    def _loss_grad(self, template: NetworkParams, spec: SurrogateSpec, batch: Batch, mask: np.ndarray) -> LossGrad:
        include_alpha = self.cfg.train_alpha

        def fn(w: np.ndarray) -> tuple[float, np.ndarray]:
            # Evaluation points may leave the admissible set (the ascent
            # offset can push a threshold below its floor), so project first.
            p = replace_parameters(template, self._project(template, w), include_alpha)
            bundle = backward(p, spec, batch)
            return bundle.loss, bundle.grads.vector(include_alpha) * mask

        return fn

    def sast_step(
        self,
        params: NetworkParams,
        spec: SurrogateSpec,
        batch: Batch,
        second_batch: Batch | None = None,
    ) -> tuple[NetworkParams, StepReport]:
        """One two-pass update; with ``rho = 0`` prefer :meth:`baseline_step`."""
        cfg = self.cfg
        if cfg.second_batch == INDEPENDENT and second_batch is None:
            raise ValueError("independent second-batch policy needs a second batch")
        mask = trainable_mask(params, cfg)
        w = parameter_vector(params, cfg.train_alpha)
        first = self._loss_grad(params, spec, batch, mask)
        second = first if second_batch is None else self._loss_grad(params, spec, second_batch, mask)
        w_new, self.velocity, report = two_pass_update(w, first, cfg, self.velocity, second)
        return replace_parameters(params, self._project(params, w_new), cfg.train_alpha), report

    def baseline_step(
        self, params: NetworkParams, spec: SurrogateSpec, batch: Batch
    ) -> tuple[NetworkParams, StepReport]:
        """One single-pass update (ignores ``rho``)."""
        cfg = self.cfg
        mask = trainable_mask(params, cfg)
        w = parameter_vector(params, cfg.train_alpha)
        w_new, self.velocity, report = single_pass_update(
            w, self._loss_grad(params, spec, batch, mask), cfg, self.velocity
        )
        return replace_parameters(params, self._project(params, w_new), cfg.train_alpha), report


# ---------------------------------------------------------------------------
# Convergence experiment
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTask:
    """A fixed finite-sum objective for the convergence experiment.

    ``batch_size = None`` runs full-batch (both passes see the whole set, so
    the gradient-noise level is exactly zero).  ``margin`` inflates the caps
    measured at the initial point so they can stay valid along the run; cap
    validity is re-checked on the fly and reported.
    """

    params0: NetworkParams
    spec: SurrogateSpec
    data: Batch
    batch_size: int | None = None
    margin: float = 2.0


@dataclass(frozen=True)
class ConvergenceReport:
    """Assembled two sides of the mean-squared-gradient guarantee."""

    lhs: float
    rhs: float
    rhs_descent: float
    rhs_perturb: float
    rhs_noise: float
    beta: float
    eta: float
    rho: float
    sigma_sq: float
    loss0: float
    loss_star: float
    n_updates: int
    n_seeds: int
    eta_admissible: bool
    caps_held: bool
    grad_sq_traces: tuple[tuple[float, ...], ...]
    loss_traces: tuple[tuple[float, ...], ...]

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def _chunk_stream(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of disjoint index chunks, reshuffling each data pass."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start : start + batch_size]


def _gradient_noise_sq(
    params: NetworkParams,
    spec: SurrogateSpec,
    data: Batch,
    batch_size: int,
    mask: np.ndarray,
    include_alpha: bool,
    rng: np.random.Generator,
) -> float:
    """Mean squared minibatch-gradient deviation over one random partition."""
    full = backward(params, spec, data).grads.vector(include_alpha) * mask
    order = rng.permutation(data.n_samples)
    devs = []
    for start in range(0, data.n_samples - batch_size + 1, batch_size):
        idx = order[start : start + batch_size]
        g = backward(params, spec, Batch(data.inputs[idx], data.labels[idx])).grads.vector(include_alpha)
        devs.append(float(np.sum((g * mask - full) ** 2)))
    return float(np.mean(devs))


def convergence_trial(
    task: ConvergenceTask,
    cfg: OptimizerConfig,
    n_updates: int,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    cap_check_every: int = 10,
) -> ConvergenceReport:
    """Run sharpness-aware training and assemble the convergence inequality.

    The left side averages the full-objective squared gradient norm over
    iterates and seeds; the right side uses the closed-form smoothness
    constant from caps measured at the start (inflated by ``task.margin``),
    the observed best loss as the lower-bound proxy, and a measured
    gradient-noise level (zero for full-batch runs, the largest partition
    estimate seen for minibatch runs — refreshed once per data pass).

    A step size above the admissible threshold ``1 / (4 beta)`` does not
    abort the run but is flagged, since the guarantee does not cover it.
    """
    data = task.data
    r_x = float(np.sqrt((data.inputs**2).sum(axis=2)).max())
    n_steps = data.inputs.shape[1]
    assume = assumptions_from(task.params0, task.spec, r_x, n_steps, margin=task.margin)
    constants = compute_constants(assume)
    beta = constants.beta
    eta_admissible = cfg.eta <= constants.max_stable_step * (1.0 + 1e-12)

    include_alpha = cfg.train_alpha
    mask = trainable_mask(task.params0, cfg)
    full_batch = task.batch_size is None or task.batch_size >= data.n_samples

    grad_traces: list[tuple[float, ...]] = []
    loss_traces: list[tuple[float, ...]] = []
    sigma_sq = 0.0
    loss_star = math.inf
    caps_held = True

    for seed in seeds:
        rng = np.random.default_rng(seed)
        opt = SastOptimizer(cfg)
        params = task.params0.copy()
        chunks = None
        steps_per_pass = 1
        if not full_batch:
            chunks = _chunk_stream(data.n_samples, task.batch_size, rng)
            pairs = 2 if cfg.second_batch == INDEPENDENT else 1
            steps_per_pass = max(1, data.n_samples // task.batch_size // pairs)
        grads_sq = []
        losses = []
        for k in range(n_updates):
            full = backward(params, task.spec, data)
            g_full = full.grads.vector(include_alpha) * mask
            grads_sq.append(float(np.sum(g_full**2)))
            losses.append(full.loss)
            loss_star = min(loss_star, full.loss)
            if k % cap_check_every == 0 and not check_caps(params, assume):
                caps_held = False
            if full_batch:
                batch = second = data
            else:
                if k % steps_per_pass == 0:
                    sigma_sq = max(
                        sigma_sq,
                        _gradient_noise_sq(
                            params, task.spec, data, task.batch_size, mask, include_alpha, rng
                        ),
                    )
                idx = next(chunks)
                batch = Batch(data.inputs[idx], data.labels[idx])
                if cfg.second_batch == INDEPENDENT:
                    idx2 = next(chunks)
                    second = Batch(data.inputs[idx2], data.labels[idx2])
                else:
                    second = batch
            params, _ = opt.sast_step(params, task.spec, batch, second)
        final = backward(params, task.spec, data)
        loss_star = min(loss_star, final.loss)
        if not check_caps(params, assume):
            caps_held = False
        grad_traces.append(tuple(grads_sq))
        loss_traces.append(tuple(losses))

    lhs = float(np.mean([np.mean(t) for t in grad_traces]))
    loss0 = float(np.mean([t[0] for t in loss_traces]))
    rhs, descent, perturb, noise = convergence_rhs(
        loss0, loss_star, cfg.eta, n_updates, beta, cfg.rho, sigma_sq
    )
    return ConvergenceReport(
        lhs=lhs,
        rhs=rhs,
        rhs_descent=descent,
        rhs_perturb=perturb,
        rhs_noise=noise,
        beta=beta,
        eta=cfg.eta,
        rho=cfg.rho,
        sigma_sq=sigma_sq,
        loss0=loss0,
        loss_star=loss_star,
        n_updates=n_updates,
        n_seeds=len(seeds),
        eta_admissible=eta_admissible,
        caps_held=caps_held,
        grad_sq_traces=tuple(grad_traces),
        loss_traces=tuple(loss_traces),
    )
