"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward, no_grad


def finite_diff_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Compare the recorded gradient of ``f`` at ``x`` against central differences.

    ``f`` must be a deterministic scalar-valued function of ``x`` (it may
    close over other fixed tensors). Returns the maximum over coordinates of

        |analytic - numeric| / (|analytic| + |numeric| + 1e-12)

    so linear functions come out near machine precision and anything broken
    comes out near 1.
    """
    if not x.requires_grad:
        raise ContractError("finite_diff_check needs a tensor with requires_grad set")
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ContractError(f"f must be scalar-valued, got shape {out.shape}")
    backward(out)
    analytic = x.grad.copy().reshape(-1)

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(x).data)
            flat[i] = orig - eps
            lo = float(f(x).data)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))
