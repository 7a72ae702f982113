"""Central finite-difference verification of autograd gradients.

Works on double-precision miniatures: evaluate a scalar probe, compare each
parameter's analytic gradient against (f(x+eps) - f(x-eps)) / 2eps on a
sample of coordinates. Stateful buffers (batch-norm running stats) snapshot
and restore around every evaluation so the probe stays a pure function.
"""

from __future__ import annotations

import numpy as np
import torch


def _pure_eval(fn, modules):
    snaps = [
        (buf, buf.detach().clone()) for module in modules for buf in module.buffers()
    ]
    try:
        return fn()
    finally:
        for buf, saved in snaps:
            buf.data.copy_(saved)


def gradient_failures(
    fn,
    params: dict,
    eps: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    coords_per_tensor: int = 5,
    seed: int = 0,
    modules=(),
) -> list:
    """Compare autograd against central differences.

    fn: nullary closure returning a scalar tensor; params: name -> tensor
    (requires_grad). Samples up to ``coords_per_tensor`` coordinates per
    tensor. Returns a list of (name, index, analytic, numeric) mismatches.
    """
    names = list(params)
    tensors = [params[n] for n in names]
    loss = _pure_eval(fn, modules)
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    rng = np.random.default_rng(seed)
    failures = []
    for name, tensor, grad in zip(names, tensors, grads):
        flat = tensor.detach().reshape(-1)
        grad_flat = (
            torch.zeros_like(flat) if grad is None else grad.detach().reshape(-1)
        )
        n = flat.numel()
        count = min(coords_per_tensor, n)
        indices = rng.choice(n, size=count, replace=False)
        for idx in indices:
            idx = int(idx)
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + eps
                f_plus = float(_pure_eval(fn, modules))
                flat[idx] = original - eps
                f_minus = float(_pure_eval(fn, modules))
                flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(grad_flat[idx])
            if abs(analytic - numeric) > atol + rtol * max(abs(analytic), abs(numeric)):
                failures.append((name, idx, analytic, numeric))
    return failures


def assert_gradients_match(fn, params: dict, **kwargs) -> None:
    failures = gradient_failures(fn, params, **kwargs)
    if failures:
        lines = [
            f"  {name}[{idx}]: analytic={analytic:.6e} numeric={numeric:.6e}"
            for name, idx, analytic, numeric in failures[:10]
        ]
        raise AssertionError(
            f"{len(failures)} gradient mismatches:\n" + "\n".join(lines)
        )
