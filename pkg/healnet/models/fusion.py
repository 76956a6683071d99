"""Hybrid early fusion through a shared latent array.

Every modality owns its cross-attention weights; the latent array, the
update block and the head are shared. One fusion layer walks the
modalities in ascending id order and lets each one write into the
latent through its attention. The same weights serve every layer.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from healnet.models import tensor as T
from healnet.models.dataset import ModalityKind
from healnet.models.tensor import Parameter, Tensor
from healnet.schemas import HeadMode, ModelConfig
from healnet.utils.errors import ConfigError, DimensionError
from healnet.utils.rng import stream

logger = logging.getLogger(__name__)

MASK_FILL = -1e9


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    kind: ModalityKind
    tokens: int
    channels: int


@dataclass
class ModalityBatch:
    modality_id: int  # 1-based, position in the model's modality list
    data: Tensor
    present: np.ndarray
    token_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        if self.data.ndim != 3:
            raise DimensionError(f"modality {self.modality_id}: expected [n, t, d_x] input, got {self.data.shape}")
        if self.present.shape != (self.data.shape[0],):
            raise DimensionError(
                f"modality {self.modality_id}: presence mask {self.present.shape} does not match n={self.data.shape[0]}"
            )
        if self.token_mask is not None:
            self.token_mask = np.asarray(self.token_mask, dtype=bool)
            if self.token_mask.shape != self.data.shape[:2]:
                raise DimensionError(
                    f"modality {self.modality_id}: token mask {self.token_mask.shape} does not match {self.data.shape[:2]}"
                )

    @property
    def n(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class ForwardContext:
    """Training flag plus the counters that key dropout streams."""

    training: bool = False
    seed: int = 0
    step: int = 0

    def generator(self, site):
        if not self.training:
            return None
        return stream(self.seed, "dropout", site, self.step)


def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def _lecun(rng, fan_in, fan_out):
    return rng.normal(0.0, math.sqrt(1.0 / fan_in), (fan_in, fan_out))


@dataclass
class LatentArray:
    values: Parameter

    @classmethod
    def initialize(cls, channels, dim, seed, trainable=True):
        rng = stream(seed, "init", "latent")
        values = Parameter(rng.uniform(0.0, 1.0, (channels, dim)), name="latent")
        values.requires_grad = trainable
        return cls(values)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ModalityAttentionParams:
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_out: Parameter
    b_out: Parameter
    heads: int
    dims_per_head: int
    norm_gamma: Optional[Parameter] = None
    norm_beta: Optional[Parameter] = None
    position: Optional[Parameter] = None

    @classmethod
    def initialize(cls, spec: ModalitySpec, config: ModelConfig, seed):
        def rng(part):
            return stream(seed, "init", spec.name, part)

        width = config.attention_width
        d_l = config.latent_dim
        prefix = spec.name
        params = cls(
            w_q=Parameter(_xavier(rng("w_q"), d_l, width), name=f"{prefix}.w_q"),
            w_k=Parameter(_xavier(rng("w_k"), spec.channels, width), name=f"{prefix}.w_k"),
            w_v=Parameter(_xavier(rng("w_v"), spec.channels, width), name=f"{prefix}.w_v"),
            w_out=Parameter(_xavier(rng("w_out"), width, d_l), name=f"{prefix}.w_out"),
            b_out=Parameter(np.zeros(d_l), name=f"{prefix}.b_out"),
            heads=config.heads,
            dims_per_head=config.dims_per_head,
        )
        if spec.channels > 1:
            params.norm_gamma = Parameter(np.ones(spec.channels), name=f"{prefix}.norm_gamma")
            params.norm_beta = Parameter(np.zeros(spec.channels), name=f"{prefix}.norm_beta")
        if spec.kind is ModalityKind.TABULAR:
            params.position = Parameter(rng("position").normal(0.0, 1.0, (spec.tokens, 1)), name=f"{prefix}.position")
        return params

    @property
    def channels(self):
        return self.w_k.shape[0]

    def named(self):
        found = [self.w_q, self.w_k, self.w_v, self.w_out, self.b_out, self.norm_gamma, self.norm_beta, self.position]
        return {p.name: p for p in found if p is not None}


@dataclass
class SharedUpdateParams:
    """Parameters shared by every update step: latent pre-norm and the SNN block."""

    norm_gamma: Parameter
    norm_beta: Parameter
    snn_w1: Optional[Parameter] = None
    snn_b1: Optional[Parameter] = None
    snn_w2: Optional[Parameter] = None
    snn_b2: Optional[Parameter] = None

    @classmethod
    def initialize(cls, config: ModelConfig, seed):
        d_l = config.latent_dim
        shared = cls(
            norm_gamma=Parameter(np.ones(d_l), name="shared.norm_gamma"),
            norm_beta=Parameter(np.zeros(d_l), name="shared.norm_beta"),
        )
        if config.use_snn:
            hidden = d_l * config.snn_hidden_mult
            shared.snn_w1 = Parameter(_lecun(stream(seed, "init", "snn_w1"), d_l, hidden), name="shared.snn_w1")
            shared.snn_b1 = Parameter(np.zeros(hidden), name="shared.snn_b1")
            if hidden != d_l:
                shared.snn_w2 = Parameter(_lecun(stream(seed, "init", "snn_w2"), hidden, d_l), name="shared.snn_w2")
                shared.snn_b2 = Parameter(np.zeros(d_l), name="shared.snn_b2")
        return shared

    @property
    def use_snn(self):
        return self.snn_w1 is not None

    def named(self):
        found = [self.norm_gamma, self.norm_beta, self.snn_w1, self.snn_b1, self.snn_w2, self.snn_b2]
        return {p.name: p for p in found if p is not None}


@dataclass
class HeadParams:
    weight: Parameter
    bias: Parameter
    mode: HeadMode

    @classmethod
    def initialize(cls, config: ModelConfig, num_bins, seed):
        fan_in = config.latent_dim
        if config.head is HeadMode.FLATTEN:
            fan_in *= config.latent_channels
        return cls(
            weight=Parameter(_xavier(stream(seed, "init", "head"), fan_in, num_bins), name="head.weight"),
            bias=Parameter(np.zeros(num_bins), name="head.bias"),
            mode=config.head,
        )

    def __call__(self, latent: Tensor) -> Tensor:
        n = latent.shape[0]
        if self.mode is HeadMode.FLATTEN:
            features = T.reshape(latent, (n, -1))
        else:
            features = T.mean(latent, axis=1)
        return features @ self.weight + self.bias

    def named(self):
        return {self.weight.name: self.weight, self.bias.name: self.bias}


@dataclass
class AttentionRecord:
    """Attention of every (layer, modality) pair, ``[n, heads, c_l, t]`` each."""

    matrices: dict = field(default_factory=dict)
    present: dict = field(default_factory=dict)
    token_masks: dict = field(default_factory=dict)
    all_absent: Optional[np.ndarray] = None

    def layers_for(self, modality_id):
        return sorted(layer for layer, m in self.matrices if m == modality_id)

    def matrix(self, layer, modality_id, sample):
        return self.matrices[(layer, modality_id)][sample]


def snn_block(x: Tensor, shared: SharedUpdateParams, dropout_rate, ctx: ForwardContext, site) -> Tensor:
    hidden = T.selu(x @ shared.snn_w1 + shared.snn_b1)
    hidden = T.dropout(hidden, dropout_rate, ctx.training, ctx.generator(f"{site}.ff"))
    if shared.snn_w2 is not None:
        hidden = hidden @ shared.snn_w2 + shared.snn_b2
    return hidden


def cross_attention(
    latent: Tensor,
    batch: ModalityBatch,
    params: ModalityAttentionParams,
    *,
    latent_norm=None,
    attn_dropout=0.0,
    ctx: ForwardContext = ForwardContext(),
    site="attn",
):
    """Latent rows query the modality's tokens.

    Returns the context projected back to ``[n, c_l, d_l]`` and the
    attention weights (before dropout) as a plain array.
    """
    n, c_l, _ = latent.shape
    x = batch.data
    if x.shape[2] != params.channels:
        raise ConfigError(
            f"modality {batch.modality_id}: input has {x.shape[2]} channels, attention expects {params.channels}"
        )
    tokens = x.shape[1]
    if params.position is not None:
        if params.position.shape[0] != tokens:
            raise DimensionError(
                f"modality {batch.modality_id}: {tokens} features, positional embedding covers {params.position.shape[0]}"
            )
        x = x + params.position
    if params.norm_gamma is not None:
        x = T.layer_norm(x, params.norm_gamma, params.norm_beta)
    query_source = T.layer_norm(latent, *latent_norm) if latent_norm is not None else latent

    h, dh = params.heads, params.dims_per_head
    q = T.transpose(T.reshape(query_source @ params.w_q, (n, c_l, h, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(x @ params.w_k, (n, tokens, h, dh)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(x @ params.w_v, (n, tokens, h, dh)), (0, 2, 1, 3))

    scores = T.scale(q @ k, 1.0 / math.sqrt(dh))
    if batch.token_mask is not None and not batch.token_mask.all():
        scores = T.masked_fill(scores, ~batch.token_mask[:, None, None, :], MASK_FILL)
    attn = T.softmax(scores, axis=-1)
    weights = T.dropout(attn, attn_dropout, ctx.training, ctx.generator(f"{site}.attn"))

    mixed = T.reshape(T.transpose(weights @ v, (0, 2, 1, 3)), (n, c_l, h * dh))
    context = mixed @ params.w_out + params.b_out
    return context, attn.data


def modality_update(
    latent: Tensor,
    batch: ModalityBatch,
    params: ModalityAttentionParams,
    shared: SharedUpdateParams,
    *,
    attn_dropout=0.0,
    ff_dropout=0.0,
    ctx: ForwardContext = ForwardContext(),
    site="update",
):
    """One update step. Samples without the modality keep their latent untouched."""
    if not batch.present.any():
        return latent, None
    context, attn = cross_attention(
        latent,
        batch,
        params,
        latent_norm=(shared.norm_gamma, shared.norm_beta),
        attn_dropout=attn_dropout,
        ctx=ctx,
        site=site,
    )
    updated = latent + context
    if shared.use_snn:
        updated = snn_block(updated, shared, ff_dropout, ctx, site)
    if not batch.present.all():
        updated = T.where(batch.present[:, None, None], updated, latent)
    return updated, attn


class HealNetModel:
    def __init__(self, config: ModelConfig, modalities: Sequence[ModalitySpec], num_bins=4, seed=0):
        if not modalities:
            raise ConfigError("a fusion model needs at least one modality")
        names = [m.name for m in modalities]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate modality names {names}")
        self.config = config
        self.modalities = list(modalities)
        self.num_bins = num_bins
        self.seed = seed
        self.latent = LatentArray.initialize(
            config.latent_channels, config.latent_dim, seed, trainable=config.latent_trainable
        )
        self.modality_params = [ModalityAttentionParams.initialize(spec, config, seed) for spec in modalities]
        self.shared = SharedUpdateParams.initialize(config, seed)
        self.head = HeadParams.initialize(config, num_bins, seed)

    @property
    def depth(self):
        return self.config.depth

    def modality_id(self, name):
        for i, spec in enumerate(self.modalities, start=1):
            if spec.name == name:
                return i
        raise ConfigError(f"model has no modality '{name}', known: {[m.name for m in self.modalities]}")

    def named_parameters(self):
        named = {"latent": self.latent.values}
        for params in self.modality_params:
            named.update(params.named())
        named.update(self.shared.named())
        named.update(self.head.named())
        return named

    def parameters(self):
        """Trainable parameters only."""
        return {name: p for name, p in self.named_parameters().items() if p.requires_grad}

    def parameter_count(self):
        return sum(p.size for p in self.parameters().values())

    def state_dict(self):
        return {name: p.numpy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        named = self.named_parameters()
        missing = sorted(set(named) - set(state))
        unexpected = sorted(set(state) - set(named))
        if missing or unexpected:
            raise ConfigError(
                "state does not match the model",
                [f"missing: {name}" for name in missing] + [f"unexpected: {name}" for name in unexpected],
            )
        for name, values in state.items():
            named[name].assign(values)

    def forward(self, batches, ctx: ForwardContext = ForwardContext(), record_attention=True):
        return fusion_forward(self, batches, ctx=ctx, record_attention=record_attention)

    def __repr__(self):
        return (
            f"<HealNetModel modalities={[m.name for m in self.modalities]} depth={self.depth} "
            f"latent={self.latent.shape} params={self.parameter_count()}>"
        )


def fusion_forward(model: HealNetModel, batches: Sequence[ModalityBatch], ctx: ForwardContext = ForwardContext(), record_attention=True):
    """Run ``depth`` fusion layers and the head.

    Returns ``(logits [n, k], AttentionRecord)``.
    """
    if not batches:
        raise ConfigError("fusion_forward needs at least one modality batch")
    ids = [b.modality_id for b in batches]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"modality ids must be unique, got {ids}")
    for modality_id in ids:
        if not 1 <= modality_id <= len(model.modality_params):
            raise ConfigError(f"modality id {modality_id} outside 1..{len(model.modality_params)}")
    n = batches[0].n
    if any(b.n != n for b in batches):
        raise DimensionError(f"all modality batches must share n, got {[b.n for b in batches]}")

    ordered = sorted(batches, key=lambda b: b.modality_id)
    config = model.config
    record = AttentionRecord(
        present={b.modality_id: b.present for b in ordered},
        token_masks={
            b.modality_id: b.token_mask if b.token_mask is not None else np.ones(b.data.shape[:2], dtype=bool)
            for b in ordered
        },
    )

    latent = T.add(Tensor(np.zeros((n, 1, 1))), model.latent.values)
    for layer in range(config.depth):
        for batch in ordered:
            latent, attn = modality_update(
                latent,
                batch,
                model.modality_params[batch.modality_id - 1],
                model.shared,
                attn_dropout=config.attn_dropout,
                ff_dropout=config.ff_dropout,
                ctx=ctx,
                site=f"{layer}.{batch.modality_id}",
            )
            if record_attention and attn is not None:
                record.matrices[(layer, batch.modality_id)] = attn

    seen = np.zeros(n, dtype=bool)
    for batch in ordered:
        seen |= batch.present
    record.all_absent = ~seen
    if record.all_absent.any():
        logger.warning("%d sample(s) have no modality; predicting from the initial latent", int(record.all_absent.sum()))

    return model.head(latent), record


def mean_attention(record: AttentionRecord, modality_id):
    """Per-sample attention over the modality's tokens, averaged over layers, heads and latent rows.

    Samples without the modality get ``None``; padded tokens are dropped.
    """
    n = len(record.all_absent) if record.all_absent is not None else 0
    layers = record.layers_for(modality_id)
    if not layers:
        return [None] * n
    stacked = np.stack([record.matrices[(layer, modality_id)] for layer in layers]).astype(np.float64)
    averaged = stacked.mean(axis=(0, 2, 3))
    present = record.present[modality_id]
    token_mask = record.token_masks[modality_id]

    result = []
    for i in range(averaged.shape[0]):
        if not present[i]:
            result.append(None)
            continue
        weights = averaged[i][token_mask[i]]
        result.append(weights / weights.sum())
    return result
