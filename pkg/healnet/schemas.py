from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from healnet.utils.errors import ConfigError


class RegMode(str, Enum):
    NONE = "none"
    L1_ONLY = "l1_only"
    L1_SNN = "l1_snn"


class HeadMode(str, Enum):
    FLATTEN = "flatten"
    MEAN_POOL = "mean_pool"


class SelectBy(str, Enum):
    NLL = "nll"
    CINDEX = "cindex"


class Scenario(str, Enum):
    CROSS_MODAL_INTERACTION = "cross_modal_interaction"
    MODALITY_DOMINANCE = "modality_dominance"
    NOISE_MODALITY = "noise_modality"


class InputFusion(str, Enum):
    SEPARATE = "separate"
    CONCAT = "concat"


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    latent_channels: int = Field(8, ge=1)
    latent_dim: int = Field(16, ge=1)
    depth: int = Field(2, ge=0)
    heads: int = Field(8, ge=1)
    dims_per_head: int = Field(16, ge=1)
    attn_dropout: float = Field(0.08, ge=0.0, lt=1.0)
    ff_dropout: float = Field(0.47, ge=0.0, lt=1.0)
    snn_hidden_mult: int = Field(1, ge=1)
    latent_trainable: bool = True
    head: HeadMode = HeadMode.FLATTEN
    # derived from reg_mode, never read from a config file
    use_snn: bool = True

    @property
    def attention_width(self):
        return self.heads * self.dims_per_head


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=1)
    early_stop_patience: int = Field(5, ge=1)
    max_lr: float = Field(0.008, gt=0.0)
    momentum: float = Field(0.92, ge=0.0, lt=1.0)
    l1: float = Field(0.00001, ge=0.0)
    l2: float = Field(0.0, ge=0.0)
    reg_mode: RegMode = RegMode.L1_SNN
    folds: int = Field(5, ge=2)
    split_train: float = Field(0.70, gt=0.0, lt=1.0)
    split_val: float = Field(0.15, gt=0.0, lt=1.0)
    split_test: float = Field(0.15, gt=0.0, lt=1.0)
    seed: int = Field(0, ge=0, lt=2**64)
    select_by: SelectBy = SelectBy.NLL
    num_bins: int = Field(4, ge=2)
    # probability of hiding one present modality per training sample
    modality_dropout: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_split(self):
        total = self.split_train + self.split_val + self.split_test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.folds * self.split_test > 1.0 + 1e-9:
            raise ValueError(
                f"{self.folds} folds with split_test={self.split_test} cannot have disjoint test sets"
            )
        return self

    @property
    def split(self):
        return self.split_train, self.split_val, self.split_test

    @property
    def effective_l1(self):
        return 0.0 if self.reg_mode is RegMode.NONE else self.l1

    @property
    def effective_l2(self):
        return 0.0 if self.reg_mode is RegMode.NONE else self.l2


class SynthScenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario = Scenario.CROSS_MODAL_INTERACTION
    n: int = Field(600, ge=1)
    p: int = Field(32, ge=1)
    t: int = Field(16, ge=1)
    d_x: int = Field(8, ge=1)
    censor_rate: float = Field(0.3, ge=0.0, lt=1.0)
    noise_sigma: float = Field(0.3, ge=0.0)
    missing_rate: float = Field(0.0, ge=0.0, lt=1.0)
    signal_features: int = Field(5, ge=1)
    main_effect: float = Field(0.2, ge=0.0)


class DataSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data_dir: Optional[str] = None
    modalities: list[str] = Field(default_factory=list)
    token_grids: dict[str, tuple[int, int]] = Field(default_factory=dict)
    input_fusion: InputFusion = InputFusion.SEPARATE

    @field_validator("modalities", mode="before")
    def split_modalities(cls, value):
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        return value

    @field_validator("token_grids", mode="before")
    def parse_token_grids(cls, value):
        if not isinstance(value, str):
            return value
        grids = {}
        for item in filter(None, (v.strip() for v in value.split(","))):
            name, _, dims = item.partition(":")
            rows, _, cols = dims.lower().partition("x")
            if not (name and rows.isdigit() and cols.isdigit()):
                raise ValueError(f"token grid '{item}' must look like name:ROWSxCOLS")
            grids[name] = (int(rows), int(cols))
        return grids

    @field_validator("data_dir", mode="before")
    def blank_is_none(cls, value):
        if isinstance(value, str) and not value.strip():
            return None
        return value


RESULT_NAMESPACE = "result."
_GROUPS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthScenario,
    "data": DataSettings,
}
_HIDDEN_KEYS = {"use_snn"}


def _owner_of(key):
    for group, schema in _GROUPS.items():
        if key in schema.model_fields and key not in _HIDDEN_KEYS:
            return group
    return None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthScenario = Field(default_factory=SynthScenario)
    data: DataSettings = Field(default_factory=DataSettings)

    @classmethod
    def known_keys(cls):
        return [
            key
            for schema in _GROUPS.values()
            for key in schema.model_fields
            if key not in _HIDDEN_KEYS
        ]

    @classmethod
    def from_flat(cls, values):
        """Validate a flat ``key -> str`` mapping, reporting every problem at once."""
        buckets = {group: {} for group in _GROUPS}
        problems = []
        for key, raw in values.items():
            if key.startswith(RESULT_NAMESPACE):
                continue
            group = _owner_of(key)
            if group is None:
                problems.append(f"unknown key '{key}'")
                continue
            buckets[group][key] = raw

        validated = {}
        for group, schema in _GROUPS.items():
            try:
                validated[group] = schema.model_validate(buckets[group])
            except ValidationError as e:
                for err in e.errors():
                    field = ".".join(str(p) for p in err["loc"]) or group
                    problems.append(f"{field}: {err['msg']}")

        if problems:
            raise ConfigError("invalid configuration", problems)
        return cls(**validated)

    def fusion_settings(self):
        """Model dims with the SNN block switched by ``reg_mode``."""
        return self.model.model_copy(update={"use_snn": self.train.reg_mode is RegMode.L1_SNN})

    def to_flat(self):
        flat = {}
        for group in _GROUPS:
            section = getattr(self, group)
            for key, value in section.model_dump(mode="json").items():
                if key in _HIDDEN_KEYS:
                    continue
                flat[key] = _format_value(key, value)
        return flat


def _format_value(key, value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if key == "modalities":
        return ",".join(value)
    if key == "token_grids":
        return ",".join(f"{name}:{r}x{c}" for name, (r, c) in value.items())
    return str(value)
