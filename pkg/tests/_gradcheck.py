"""Finite-difference gradient oracle shared by the unit and acceptance suites."""

import numpy as np

from armpose.network import mae_loss


def finite_difference_grad(net, X, Y, h=1e-5, masks=None):
    """Central-difference gradient of the MAE loss w.r.t. every parameter."""
    flat = net.params.data
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        saved = flat[k]
        flat[k] = saved + h
        up = mae_loss(net.forward(X, dropout=masks), Y)
        flat[k] = saved - h
        down = mae_loss(net.forward(X, dropout=masks), Y)
        flat[k] = saved
        grad[k] = (up - down) / (2.0 * h)
    return grad


def analytic_grad(net, X, Y, masks=None):
    from armpose.network import mae_grad

    net.params.zero_grad()
    out, cache = net.forward_train(X, dropout=masks)
    net.backward(mae_grad(out, Y), cache)
    return net.params.grad.copy()


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return np.linalg.norm(a - b) / denom


def safe_targets(out, rng, margin=0.1):
    """Targets at least `margin` away from the outputs, so the MAE kink is
    never crossed by the finite-difference probes."""
    offs = rng.uniform(margin, 1.0, size=out.shape)
    signs = np.where(rng.random(out.shape) < 0.5, -1.0, 1.0)
    return out + signs * offs
