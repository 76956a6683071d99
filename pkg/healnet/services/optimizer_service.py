import math
from dataclasses import dataclass, field

import numpy as np

from healnet.models import tensor as T
from healnet.models.tensor import Tensor
from healnet.utils.errors import ContractError, NaNGradientError

WARMUP_FRACTION = 0.3
START_DIV = 25.0
FINAL_DIV = 1e4


@dataclass
class AdamState:
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr, beta1=0.92, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam. Nothing moves if any gradient is not finite."""
    for name in params:
        if not np.all(np.isfinite(grads[name].data)):
            raise NaNGradientError(name)

    step = state.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    for name, param in params.items():
        g = grads[name].data.astype(np.float64)
        m = state.first.get(name, np.zeros(param.shape))
        v = state.second.get(name, np.zeros(param.shape))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first[name] = m
        state.second[name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.assign(param.data.astype(np.float64) - update)
    state.step = step
    return state


def onecycle_lr(step, total_steps, max_lr):
    """Linear warm-up from ``max_lr / 25`` to ``max_lr`` over 30% of steps, then cosine down to ``max_lr / 1e4``."""
    if not 0 <= step < total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps})")
    start = max_lr / START_DIV
    final = max_lr / FINAL_DIV
    peak = WARMUP_FRACTION * total_steps
    if step < peak:
        return start + (max_lr - start) * step / peak
    if step == peak:
        return max_lr
    span = (total_steps - 1) - peak
    progress = (step - peak) / span if span > 0 else 1.0
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _penalty(params, coeff, term):
    if coeff == 0:
        return Tensor(0.0)
    total = None
    for param in params.values():
        part = T.reduce_sum(term(param))
        total = part if total is None else T.add(total, part)
    if total is None:
        return Tensor(0.0)
    return T.scale(total, coeff)


def l1_penalty(params, coeff):
    if coeff < 0:
        raise ContractError(f"L1 coefficient must be >= 0, got {coeff}")
    return _penalty(params, coeff, T.absolute)


def l2_penalty(params, coeff):
    if coeff < 0:
        raise ContractError(f"L2 coefficient must be >= 0, got {coeff}")
    return _penalty(params, coeff, T.square)
