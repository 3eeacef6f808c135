"""Adam with global-norm clipping and the inverse-square-root schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class DivergenceError(RuntimeError):
    """A non-finite loss or gradient aborted the step."""


def lr_schedule(step: int, lr_base: float, warmup_steps: int) -> float:
    """Linear warmup to ``lr_base`` then inverse-square-root decay."""
    if step < 1:
        raise ValueError("schedule steps start at 1")
    return lr_base * min(step / warmup_steps, np.sqrt(warmup_steps / step))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g).real)
    return float(np.sqrt(total))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so the global norm is at most ``clip_norm``.

    ``clip_norm <= 0`` disables clipping. Returns the pre-clip norm.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError(f"non-finite gradient norm: {norm}")
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (lr / bias1) * m / (np.sqrt(v / bias2) + state.eps)
        p.data -= update.astype(p.data.dtype)
