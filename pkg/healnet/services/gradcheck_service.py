"""Central finite-difference checks of every op and of the fusion model.

Non-scalar outputs are contracted with fixed random weights, so one check
covers every output element. The numeric side sums in float64 and divides
by the perturbation actually applied after float32 rounding.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from healnet.models import tensor as T
from healnet.models.dataset import ModalityKind
from healnet.models.fusion import (
    ForwardContext,
    HealNetModel,
    ModalityAttentionParams,
    ModalityBatch,
    ModalitySpec,
    SharedUpdateParams,
    cross_attention,
    fusion_forward,
)
from healnet.models.tensor import Parameter, Tensor
from healnet.schemas import ModelConfig
from healnet.services.optimizer_service import l1_penalty, l2_penalty
from healnet.services.survival_service import hazards, nll_from_arrays
from healnet.utils.rng import stream

logger = logging.getLogger(__name__)

EPS = 1e-3
TOLERANCE = 1e-3
SEEDS = (0, 1, 2, 3, 4)
MAX_COORDS = 48


def relative_error(analytic, numeric):
    """``|a - n| / max(|a|, |n|, 1)``: relative for large gradients, absolute below 1."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)


def _contraction(out, weights):
    if weights is None:
        weights = stream(0, "gradcheck", "contract", *out.shape).uniform(-1.0, 1.0, out.shape)
    return np.broadcast_to(np.asarray(weights, dtype=np.float64), out.shape)


def _pick(size, max_coords, rng):
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    rng = rng or stream(0, "gradcheck", "coords", size)
    return np.sort(rng.choice(size, max_coords, replace=False))


def _errors(evaluate, tensor, analytic, weights, eps, coords):
    base = tensor.data.copy()
    worst = 0.0
    for c in coords:
        plus = base.copy()
        minus = base.copy()
        plus.flat[c] += T.DTYPE(eps)
        minus.flat[c] -= T.DTYPE(eps)
        step = float(plus.flat[c]) - float(minus.flat[c])
        tensor.data = plus
        upper = float((evaluate().data.astype(np.float64) * weights).sum())
        tensor.data = minus
        lower = float((evaluate().data.astype(np.float64) * weights).sum())
        tensor.data = base
        numeric = (upper - lower) / step
        worst = max(worst, float(relative_error(float(analytic.flat[c]), numeric)))
    return worst


def _analytic(evaluate, params, weights):
    with T.GradTape() as tape:
        out = evaluate()
        w = _contraction(out, weights)
        loss = T.reduce_sum(T.mul(out, Tensor(w)))
    grads = tape.gradient(loss, params)
    return w, {name: g.data.astype(np.float64) for name, g in grads.items()}


def grad_check(f, x, eps=EPS, weights=None, max_coords=None, rng=None):
    """Max relative error between backward() and central differences of ``f`` at ``x``."""
    if not isinstance(x, Parameter):
        x = Parameter(x.data if isinstance(x, Tensor) else x, name="x")
    w, grads = _analytic(lambda: f(x), {"x": x}, weights)
    coords = _pick(x.size, max_coords, rng)
    return _errors(lambda: f(x), x, grads["x"], w, eps, coords)


def grad_check_parameters(f, params, eps=EPS, weights=None, max_coords=MAX_COORDS, rng=None):
    """Per-parameter max relative error for a closure ``f()`` over ``params``."""
    w, grads = _analytic(f, params, weights)
    return {
        name: _errors(f, p, grads[name], w, eps, _pick(p.size, max_coords, rng))
        for name, p in params.items()
    }


@dataclass
class GradCheckResult:
    name: str
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error) and self.max_error < self.tolerance)


def _uniform(rng, shape, low=-2.0, high=2.0):
    return rng.uniform(low, high, shape)


def _away_from(values, points, margin=0.05):
    """Nudge entries off the kinks at ``points`` by at least ``margin``."""
    values = np.array(values)
    for point in points:
        close = np.abs(values - point) < margin
        values[close] = point + np.where(values[close] >= point, 2 * margin, -2 * margin)
    return values


def _op_cases():
    """name -> callable(rng) returning (f, x)."""

    def const(rng, shape, low=-2.0, high=2.0):
        return Tensor(_uniform(rng, shape, low, high))

    cases = {
        "add": lambda rng: (lambda x, b=const(rng, (4,)): T.add(x, b), _uniform(rng, (3, 4))),
        "add_broadcast": lambda rng: (lambda x, b=const(rng, (3, 4)): T.add(x, b), _uniform(rng, (4,))),
        "sub": lambda rng: (lambda x, b=const(rng, (3, 4)): T.sub(b, x), _uniform(rng, (3, 4))),
        "mul": lambda rng: (lambda x, b=const(rng, (3, 1)): T.mul(x, b), _uniform(rng, (3, 4))),
        "scale": lambda rng: (lambda x: T.scale(x, 1.7), _uniform(rng, (5,))),
        "log": lambda rng: (T.log, _uniform(rng, (6,), 0.5, 2.0)),
        "exp": lambda rng: (T.exp, _uniform(rng, (6,))),
        "absolute": lambda rng: (T.absolute, _away_from(_uniform(rng, (8,)), [0.0])),
        "square": lambda rng: (T.square, _uniform(rng, (8,))),
        "clip": lambda rng: (lambda x: T.clip(x, -1.0, 1.0), _away_from(_uniform(rng, (8,)), [-1.0, 1.0])),
        "where": lambda rng: (
            lambda x, b=const(rng, (3, 4)), m=rng.random((3, 4)) < 0.5: T.where(m, x, T.mul(x, b)),
            _uniform(rng, (3, 4)),
        ),
        "masked_fill": lambda rng: (lambda x, m=rng.random((3, 4)) < 0.3: T.masked_fill(x, m, -5.0), _uniform(rng, (3, 4))),
        "sigmoid": lambda rng: (T.sigmoid, _uniform(rng, (8,))),
        "selu": lambda rng: (T.selu, _away_from(_uniform(rng, (8,)), [0.0])),
        "softmax": lambda rng: (lambda x: T.softmax(x, axis=-1), _uniform(rng, (3, 5))),
        "softmax_axis0": lambda rng: (lambda x: T.softmax(x, axis=0), _uniform(rng, (3, 5))),
        "sum": lambda rng: (lambda x: T.reduce_sum(x, axis=1), _uniform(rng, (3, 4))),
        "mean": lambda rng: (lambda x: T.mean(x, axis=0, keepdims=True), _uniform(rng, (3, 4))),
        "matmul_left": lambda rng: (lambda x, b=const(rng, (4, 2)): T.matmul(x, b), _uniform(rng, (3, 4))),
        "matmul_right": lambda rng: (lambda x, a=const(rng, (2, 3, 4)): T.matmul(a, x), _uniform(rng, (4, 5))),
        "reshape": lambda rng: (lambda x: T.mul(T.reshape(x, (4, -1)), Tensor(np.arange(12.0).reshape(4, 3))), _uniform(rng, (2, 6))),
        "transpose": lambda rng: (lambda x: T.transpose(x, (2, 0, 1)), _uniform(rng, (2, 3, 4))),
        "concat_last_axis": lambda rng: (lambda x, b=const(rng, (3, 2)): T.concat_last_axis([b, x, x]), _uniform(rng, (3, 4))),
        "gather_last": lambda rng: (lambda x, i=rng.integers(0, 4, 5): T.gather_last(x, i), _uniform(rng, (5, 4))),
        "cumprod_last": lambda rng: (T.cumprod_last, _uniform(rng, (3, 5))),
        "layer_norm": lambda rng: (
            lambda x, g=const(rng, (5,)), b=const(rng, (5,)): T.layer_norm(x, g, b),
            _uniform(rng, (3, 5)),
        ),
        "dropout": lambda rng: (
            lambda x, seed=int(rng.integers(2**31)): T.dropout(x, 0.3, True, stream(seed, "gradcheck", "dropout")),
            _uniform(rng, (4, 6)),
        ),
    }
    return cases


def check_ops(seed, eps=EPS):
    results = {}
    for name, build in _op_cases().items():
        f, x = build(stream(seed, "gradcheck", name))
        results[name] = grad_check(f, Tensor(x), eps=eps)
    return results


def check_losses(seed, eps=EPS):
    rng = stream(seed, "gradcheck", "losses")
    n, k = 6, 4
    bins = rng.integers(0, k, n)
    censored = rng.random(n) < 0.4
    weights = rng.uniform(0.5, 1.5, k)
    logits = _uniform(rng, (n, k))
    results = {
        "nll_loss": grad_check(lambda x: nll_from_arrays(hazards(x), bins, censored, weights), Tensor(logits), eps=eps),
        "l1_penalty": grad_check(
            lambda x: l1_penalty({"w": x}, 0.3), Tensor(_away_from(_uniform(rng, (4, 3)), [0.0])), eps=eps
        ),
        "l2_penalty": grad_check(lambda x: l2_penalty({"w": x}, 0.3), Tensor(_uniform(rng, (4, 3))), eps=eps),
    }
    return results


def _tiny_config(**overrides):
    values = dict(
        latent_channels=4,
        latent_dim=8,
        depth=2,
        heads=2,
        dims_per_head=4,
        attn_dropout=0.0,
        ff_dropout=0.0,
    )
    values.update(overrides)
    return ModelConfig(**values)


def check_cross_attention(seed, eps=EPS):
    """One latent of 4 x 8 attending over 6 tokens of width 3."""
    rng = stream(seed, "gradcheck", "cross_attention")
    config = _tiny_config()
    spec = ModalitySpec("m", ModalityKind.PATCHES, tokens=6, channels=3)
    params = ModalityAttentionParams.initialize(spec, config, seed)
    shared = SharedUpdateParams.initialize(config, seed)
    latent = Parameter(_uniform(rng, (1, 4, 8)), name="latent")
    batch = ModalityBatch(1, Tensor(_uniform(rng, (1, 6, 3))), present=[True])

    def f():
        context, _ = cross_attention(latent, batch, params, latent_norm=(shared.norm_gamma, shared.norm_beta))
        return context

    named = {"latent": latent, **params.named(), "shared.norm_gamma": shared.norm_gamma}
    errors = grad_check_parameters(f, named, eps=eps, rng=stream(seed, "gradcheck", "coords", "attn"))
    return {"cross_attention": max(errors.values())}


def check_model(seed, eps=EPS):
    """Two samples through a two-modality model, the second without its slide."""
    rng = stream(seed, "gradcheck", "model")
    config = _tiny_config(latent_channels=2, latent_dim=4, snn_hidden_mult=2)
    specs = [
        ModalitySpec("omic", ModalityKind.TABULAR, tokens=3, channels=1),
        ModalitySpec("wsi", ModalityKind.PATCHES, tokens=4, channels=3),
    ]
    model = HealNetModel(config, specs, num_bins=4, seed=seed)
    token_mask = np.array([[True, True, True, False], [True, True, True, True]])
    batches = [
        ModalityBatch(1, Tensor(_uniform(rng, (2, 3, 1))), present=[True, True]),
        ModalityBatch(2, Tensor(_uniform(rng, (2, 4, 3))), present=[True, False], token_mask=token_mask),
    ]

    def f():
        logits, _ = fusion_forward(model, batches, ForwardContext(training=False), record_attention=False)
        return logits

    errors = grad_check_parameters(f, model.parameters(), eps=eps, rng=stream(seed, "gradcheck", "coords", "model"))
    return {"fusion_model": max(errors.values())}


SUITES: dict[str, Callable] = {
    "ops": check_ops,
    "losses": check_losses,
    "cross_attention": check_cross_attention,
    "model": check_model,
}


def run_suite(seeds=SEEDS, eps=EPS, tolerance=TOLERANCE):
    """Worst error per check over ``seeds``, in suite order."""
    worst = {}
    for name, suite in SUITES.items():
        started = time.perf_counter()
        for seed in seeds:
            for check, error in suite(seed, eps=eps).items():
                worst[check] = max(worst.get(check, 0.0), error)
        logger.debug("gradcheck %s took %.2fs", name, time.perf_counter() - started)
    return [GradCheckResult(name, error, tolerance=tolerance) for name, error in worst.items()]
