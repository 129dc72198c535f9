"""Central finite-difference gradient checks along random directions."""

from __future__ import annotations

import torch
from torch import nn


def directional_error(fn, inputs, step: float = 1e-6, generator=None, abs_floor: float = 1e-6):
    """Compare reverse-mode and finite-difference directional derivatives.

    ``fn`` maps the list of float64 ``inputs`` to a scalar. For each input a
    random unit direction ``v`` is drawn; the autograd value ``<grad, v>`` is
    compared with ``(f(x + h v) - f(x - h v)) / 2h``. Returns the worst error,
    relative where the derivative exceeds ``abs_floor`` and absolute otherwise.
    """
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    value = fn(inputs)
    grads = torch.autograd.grad(value, inputs, allow_unused=True)
    worst = 0.0
    for i, x in enumerate(inputs):
        v = torch.randn(x.shape, dtype=x.dtype, generator=generator)
        v /= v.norm()
        g = grads[i]
        analytic = 0.0 if g is None else float((g * v).sum())
        with torch.no_grad():
            plus = [y.detach() + step * v if j == i else y.detach() for j, y in enumerate(inputs)]
            minus = [y.detach() - step * v if j == i else y.detach() for j, y in enumerate(inputs)]
            numeric = (float(fn(plus)) - float(fn(minus))) / (2 * step)
        scale = max(abs(analytic), abs(numeric))
        err = abs(analytic - numeric)
        worst = max(worst, err / scale if scale > abs_floor else err)
    return worst


class _LossWrapper(nn.Module):
    def __init__(self, module, loss_fn):
        super().__init__()
        self.module = module
        self.loss_fn = loss_fn

    def forward(self, *xs):
        return self.loss_fn(self.module, list(xs))


def module_error(module: nn.Module, loss_fn, inputs, **kwargs) -> float:
    """:func:`directional_error` over every trainable parameter of ``module`` and ``inputs``.

    ``loss_fn(module, inputs)`` must return a scalar. Each parameter tensor gets
    its own random direction.
    """
    wrapper = _LossWrapper(module, loss_fn)
    names = [n for n, p in wrapper.named_parameters() if p.requires_grad]
    params = [p.detach() for n, p in wrapper.named_parameters() if p.requires_grad]
    n_in = len(inputs)

    def fn(tensors):
        xs, ps = tensors[:n_in], tensors[n_in:]
        return torch.func.functional_call(wrapper, dict(zip(names, ps)), tuple(xs))

    return directional_error(fn, list(inputs) + params, **kwargs)
