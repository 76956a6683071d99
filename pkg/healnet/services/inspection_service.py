import logging
from dataclasses import dataclass, field
from pathlib import Path

from healnet.models.fusion import ForwardContext, fusion_forward, mean_attention
from healnet.repositories import ReportRepository
from healnet.repositories.checkpoint_repository import Checkpoint
from healnet.services import dataset_service
from healnet.services.evaluation_service import prepare_for_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class AttentionExport:
    sample_id: str
    weights: dict  # modality -> np.ndarray, or None when the sample lacks it
    files: list = field(default_factory=list)

    @property
    def absent(self):
        return [name for name, w in self.weights.items() if w is None]


def sample_attention(checkpoint: Checkpoint, dataset, sample_id):
    """Mean attention of one sample over each modality's tokens, averaged over layers, heads and latent rows."""
    prepared = prepare_for_checkpoint(dataset, checkpoint)
    row = prepared.index_of(sample_id)
    model = checkpoint.model
    batches = dataset_service.build_batches(prepared, [row], model=model)
    _, record = fusion_forward(model, batches, ForwardContext(training=False), record_attention=True)
    weights = {}
    for spec in model.modalities:
        weights[spec.name] = mean_attention(record, model.modality_id(spec.name))[0]
    return AttentionExport(sample_id=sample_id, weights=weights)


def export_attention(export: AttentionExport, out_dir, grids=None):
    """``attention_<modality>.csv`` per present modality, plus a PGM where a token grid is declared."""
    out_dir = Path(out_dir)
    grids = grids or {}
    for name, weights in export.weights.items():
        if weights is None:
            logger.warning("sample '%s' has no '%s' modality; nothing exported for it", export.sample_id, name)
            continue
        export.files.append(ReportRepository.write_attention_csv(weights, out_dir / f"attention_{name}.csv"))
        if name in grids:
            export.files.append(ReportRepository.write_pgm(weights, grids[name], out_dir / f"attention_{name}.pgm"))
    return export
