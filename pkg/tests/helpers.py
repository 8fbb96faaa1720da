"""Shared numerical oracles for the test-suite."""
import numpy as np

from mela.representation import meta_loss, meta_loss_and_grad


def finite_difference_grad(model, task, ridge, eps=1e-5):
    """Central differences of the few-shot loss over every model parameter."""
    params = {k: v.copy() for k, v in model.params().items()}
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = meta_loss(model.with_params(params), task, ridge)
            value[idx] = old - eps
            down = meta_loss(model.with_params(params), task, ridge)
            value[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def grad_relative_error(model, task, ridge):
    """Max-norm relative error between analytic and numerical gradients.

    Taken over all parameters jointly: a parameter whose true gradient is
    zero (an unpenalised bias shift, for example) would make per-parameter
    ratios meaningless.
    """
    _, analytic = meta_loss_and_grad(model, task, ridge)
    numeric = finite_difference_grad(model, task, ridge)
    diff = max(np.abs(analytic[k] - numeric[k]).max() for k in analytic)
    scale = max(max(np.abs(analytic[k]).max(), np.abs(numeric[k]).max()) for k in analytic)
    return diff / max(scale, 1e-12)
