"""Model construction, training, evaluation and portable export."""

from planemeta.models.backbones import (
    BackboneKind,
    BackboneSpec,
    FeatureTrunk,
    MetadataTumorNet,
    NormConfig,
    NormMode,
    TinyCNN,
    build_model,
    parameter_count,
)
from planemeta.models.export import (
    PortableModel,
    export_portable,
    load_bundle,
    preprocess_raw_slice,
)
from planemeta.models.training import (
    EvalResult,
    SliceStore,
    TrainConfig,
    TrainedModel,
    evaluate,
    load_trained,
    save_trained,
    split_by_volume,
    train,
)

__all__ = [
    "BackboneKind",
    "BackboneSpec",
    "EvalResult",
    "FeatureTrunk",
    "MetadataTumorNet",
    "NormConfig",
    "NormMode",
    "PortableModel",
    "SliceStore",
    "TinyCNN",
    "TrainConfig",
    "TrainedModel",
    "build_model",
    "evaluate",
    "export_portable",
    "load_bundle",
    "load_trained",
    "parameter_count",
    "preprocess_raw_slice",
    "save_trained",
    "split_by_volume",
    "train",
]
