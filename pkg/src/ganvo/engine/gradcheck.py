"""Central finite-difference gradient checking.

Cases register themselves into a global table (see ``ganvo.checksuite``)
so the CLI can run one row per differentiable op and report the worst
relative error for each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckCase:
    name: str
    build: callable  # rng -> (f, [Tensor, ...]); f() evaluates a scalar Tensor
    tol: float = 1e-4


REGISTRY: dict[str, GradCheckCase] = {}


def register_case(name: str, tol: float = 1e-4):
    def decorator(fn):
        REGISTRY[name] = GradCheckCase(name, fn, tol)
        return fn

    return decorator


def numeric_gradient(f, tensor: Tensor, coords, eps: float = 1e-5) -> np.ndarray:
    """Central differences of f() w.r.t. selected flat coords of `tensor`."""
    flat = tensor.data.reshape(-1)
    out = np.zeros(len(coords))
    with no_grad():
        for k, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            hi = f().item()
            flat[c] = orig - eps
            lo = f().item()
            flat[c] = orig
            out[k] = (hi - lo) / (2.0 * eps)
    return out


def max_relative_error(f, tensors, eps: float = 1e-5, max_coords: int = 40, rng=None) -> float:
    """Worst |analytic - numeric| / max|numeric| over sampled coordinates.

    Analytic gradients come from one backward pass of ``f()``; numeric ones
    from central differences at up to `max_coords` randomly-chosen
    coordinates per tensor.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = t.data.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        numeric = numeric_gradient(f, t, coords, eps)
        a_sel = a.reshape(-1)[coords]
        denom = max(np.max(np.abs(numeric)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a_sel - numeric)) / denom))
    return worst


def run_case(name: str, seed: int = 0, eps: float = 1e-5, max_coords: int = 40):
    """Run one registered case; returns (max_rel_err, tolerance, passed)."""
    case = REGISTRY[name]
    rng = np.random.default_rng(seed)
    f, tensors = case.build(rng)
    err = max_relative_error(f, tensors, eps=eps, max_coords=max_coords, rng=rng)
    return err, case.tol, err < case.tol


def run_all(seed: int = 0):
    """Run every registered case; returns {name: (err, tol, passed)}."""
    return {name: run_case(name, seed=seed) for name in sorted(REGISTRY)}
