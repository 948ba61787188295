"""Central finite differences, independent of autograd."""

import torch


def numeric_grad(fn, tensor, h=1e-6):
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn())
        flat[i] = orig - h
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


ZERO_GRAD = 1e-6


def relative_error(a, b):
    """Norm-wise relative gap; absolute gap when both sides are below FD resolution.

    Key biases in softmax attention have an exactly-zero gradient (they shift
    every score in a row equally), so a ratio there would only measure noise.
    """
    scale = max(a.norm().item(), b.norm().item())
    diff = (a - b).norm().item()
    return diff if scale < ZERO_GRAD else diff / scale


def check_gradients(fn, params, tol=1e-4, h=1e-6):
    """Return {name: relative error} comparing autograd with central differences."""
    params = dict(params)
    for p in params.values():
        p.grad = None
    fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in params.items():
            analytic = p.grad if p.grad is not None else torch.zeros_like(p)
            numeric = numeric_grad(fn, p, h)
            errors[name] = relative_error(analytic, numeric)
    return errors
