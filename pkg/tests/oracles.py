"""Independent reference computations used by the test suite."""

import math

import numpy as np
import torch

from newsfusion.training import label_smoothing_ce_grad


def smoothed_ce_direct(probs, labels, epsilon):
    """Loss written out term by term from the predicted probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    total = 0.0
    for row, y in zip(probs, labels):
        for c in range(k):
            q = (1.0 - epsilon) * (c == y) + epsilon / k
            total -= q * math.log(row[c])
    return total / len(labels)


def analytic_param_grads(model, logits_fn, labels, epsilon):
    """Backpropagate the closed-form logit gradient through ``model``."""
    model.zero_grad(set_to_none=True)
    logits = logits_fn()
    upstream = torch.as_tensor(label_smoothing_ce_grad(logits.detach(), labels, epsilon), dtype=logits.dtype)
    logits.backward(upstream)
    return {n: p.grad.detach().clone() for n, p in model.named_parameters() if p.grad is not None}


def finite_difference_check(model, loss_fn, grads, names, n_points=20, h=1e-6, seed=0):
    """Largest relative error between ``grads`` and central differences at
    ``n_points`` random coordinates of the named parameters."""
    rng = np.random.default_rng(seed)
    params = dict(model.named_parameters())
    worst = 0.0
    picks = []
    for _ in range(n_points):
        name = names[int(rng.integers(len(names)))]
        flat = int(rng.integers(params[name].numel()))
        picks.append((name, flat))
    with torch.no_grad():
        for name, flat in picks:
            view = params[name].view(-1)
            orig = view[flat].item()
            view[flat] = orig + h
            up = float(loss_fn())
            view[flat] = orig - h
            down = float(loss_fn())
            view[flat] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].view(-1)[flat].item()
            # floor keeps round-off on near-zero coordinates from dominating
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
