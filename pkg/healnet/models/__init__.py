# Initialization file for the models module

from .tensor import Tensor, Parameter, GradTape, backward
from .survival_record import SurvivalRecord, BinEdges
from .dataset import ModalityKind, ModalityBlock, MultiModalDataset, Provenance
from .fusion import (
    ModalitySpec,
    ModalityBatch,
    ForwardContext,
    LatentArray,
    ModalityAttentionParams,
    SharedUpdateParams,
    HeadParams,
    AttentionRecord,
    HealNetModel,
    cross_attention,
    modality_update,
    fusion_forward,
    mean_attention,
)

# Explicit exports
__all__ = [
    'Tensor',
    'Parameter',
    'GradTape',
    'backward',
    'SurvivalRecord',
    'BinEdges',
    'ModalityKind',
    'ModalityBlock',
    'MultiModalDataset',
    'Provenance',
    'ModalitySpec',
    'ModalityBatch',
    'ForwardContext',
    'LatentArray',
    'ModalityAttentionParams',
    'SharedUpdateParams',
    'HeadParams',
    'AttentionRecord',
    'HealNetModel',
    'cross_attention',
    'modality_update',
    'fusion_forward',
    'mean_attention',
]
