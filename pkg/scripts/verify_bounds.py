#!/usr/bin/env python3
"""Falsification battery for the closed-form bounds.

Draws random admissible configurations (contraction factor below one by
construction), then hammers each closed-form constant with Monte Carlo
probes: membrane-state caps, input-Lipschitz secants, the two-pass ascent
cap, and loss stability under bounded input perturbation.  Exits nonzero
if any probe lands above its bound.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from spikesam.bounds import (
    assumptions_from,
    compute_constants,
    input_lipschitz,
    loss_stability_bound,
    sam_upper_bound,
    state_bounds,
)
from spikesam.gradients import Batch, backward, batch_loss
from spikesam.network import (
    SurrogateSpec,
    forward,
    init_network,
    parameter_vector,
    replace_parameters,
)

DIMS = [(4, 3), (5, 4), (4, 4, 3), (6, 5)]


def run_battery(n_configs: int, n_probes: int, seed: int) -> dict[str, int]:
    rng = np.random.default_rng(seed)
    violations = {"state": 0, "input_lip": 0, "sam": 0, "stability": 0}
    for trial in range(n_configs):
        dims = DIMS[trial % len(DIMS)]
        params = init_network(
            dims, 2,
            alpha=float(rng.uniform(0.2, 0.6)),
            theta=float(rng.uniform(0.1, 0.3)),
            weight_scale=float(rng.uniform(0.3, 1.0)),
            seed=np.random.default_rng(seed + 1000 + trial),
        )
        for layer in params.layers:
            layer.bias += 0.05 * rng.standard_normal(layer.bias.shape)
        spec = SurrogateSpec("arctan", float(rng.uniform(0.5, 2.0)))
        n_steps = int(rng.integers(2, 6))
        r_x = float(rng.uniform(0.5, 1.5))
        assume = assumptions_from(params, spec, r_x, n_steps, margin=1.0)

        def draw(n):
            x = rng.standard_normal((n, n_steps, dims[0]))
            norms = np.sqrt((x**2).sum(axis=2, keepdims=True))
            return x * (r_x / np.maximum(norms, 1e-12)) * rng.random((n, n_steps, 1))

        x = draw(4)
        r_u = state_bounds(assume)
        for layer_idx, u in enumerate(forward(params, spec, x).u):
            if float(np.sqrt((u**2).sum(axis=2)).max()) > r_u[layer_idx] * (1 + 1e-12):
                violations["state"] += 1

        l_x = input_lipschitz(assume)
        for _ in range(3):
            x1, x2 = draw(1), draw(1)
            d_logits = float(np.linalg.norm(
                forward(params, spec, x1).logits - forward(params, spec, x2).logits))
            if d_logits > l_x * float(np.sqrt(((x1 - x2) ** 2).sum())) * (1 + 1e-9) + 1e-12:
                violations["input_lip"] += 1

        labels = rng.integers(0, 2, size=4).astype(np.int64)
        batch = Batch(x, labels)
        rho = 0.05
        beta = compute_constants(
            assumptions_from(params, spec, r_x, n_steps, margin=1.5)).beta
        bundle = backward(params, spec, batch)
        w0 = parameter_vector(params, False)
        cap = sam_upper_bound(
            bundle.loss, float(np.linalg.norm(bundle.grads.vector(False))), rho, beta)
        for _ in range(n_probes):
            d = rng.standard_normal(w0.size)
            d *= rho / np.linalg.norm(d)
            if batch_loss(replace_parameters(params, w0 + d, False), spec, batch) > cap * (1 + 1e-12):
                violations["sam"] += 1

        x_tilde = x + 0.1 * rng.standard_normal(x.shape)
        norms = np.sqrt((x_tilde**2).sum(axis=2, keepdims=True))
        x_tilde = x_tilde * np.minimum(1.0, r_x / np.maximum(norms, 1e-12))
        gap = abs(batch_loss(params, spec, batch)
                  - batch_loss(params, spec, Batch(x_tilde, labels)))
        worst = max(float(np.sqrt(((x[i] - x_tilde[i]) ** 2).sum())) for i in range(4))
        if gap > loss_stability_bound(l_x, worst) * (1 + 1e-9) + 1e-12:
            violations["stability"] += 1
    return violations


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", type=int, default=100,
                    help="number of random admissible configurations (default: %(default)s)")
    ap.add_argument("--probes", type=int, default=64,
                    help="ascent-cap probe directions per configuration (default: %(default)s)")
    ap.add_argument("--seed", type=int, default=77)
    args = ap.parse_args()

    t0 = time.perf_counter()
    violations = run_battery(args.configs, args.probes, args.seed)
    elapsed = time.perf_counter() - t0
    total = sum(violations.values())
    for name, count in violations.items():
        print(f"{name:12s} violations: {count}")
    print(f"\n{args.configs} configurations, {args.probes} probes each, {elapsed:.1f}s")
    print("all bounds held" if total == 0 else f"{total} VIOLATIONS")
    return 0 if total == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
