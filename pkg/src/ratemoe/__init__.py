"""Multi-rate mixture-of-experts sequence classifier on frame features.

A clip of T frame-feature vectors is compressed into several temporal
pathways (one per rate), the pathways exchange information through gated
resampling links, one transformer expert per pathway models its stream,
and a learnable-query readout fuses the experts for classification.
Training combines cross-entropy with ranking, diversity, and usage-balance
objectives. Everything runs on a small float64 autodiff core and is
deterministic for a fixed seed.
"""

from .aggregation import AggregationConfig, Aggregator, MergeTrace, split_groups, target_scores
from .dataio import (
    Dataset,
    FeatureSequence,
    SyntheticSpec,
    generate_synthetic,
    read_vpf,
    write_vpf,
)
from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    DataInconsistencyError,
    DivergenceError,
    FormatError,
    GradCheckError,
    PathwayCompatError,
    RatemoeError,
    RateError,
    ShapeError,
)
from .experts import ExpertLayer, Readout
from .fusion import FusionParams, GateMatrix, GateNet, PathwaySet, fast_to_slow, interact, slow_to_fast
from .gradcheck import grad_check
from .losses import LossBreakdown, LossWeights, loss_cls, loss_div, loss_gate, loss_rank, loss_total
from .model import ForwardResult, Model, ModelConfig
from .params import ParamBank
from .tensor import Parameter, Tensor, no_grad
from .training import (
    Adam,
    ExpertUsage,
    RunReport,
    TrainConfig,
    evaluate,
    full_usage,
    linear_probe,
    load_checkpoint,
    run_ablation,
    save_checkpoint,
    split_dataset,
    train,
    usage_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "Aggregator",
    "MergeTrace",
    "split_groups",
    "target_scores",
    "Dataset",
    "FeatureSequence",
    "SyntheticSpec",
    "generate_synthetic",
    "read_vpf",
    "write_vpf",
    "RatemoeError",
    "ShapeError",
    "RateError",
    "ContractError",
    "ConfigError",
    "PathwayCompatError",
    "FormatError",
    "CorruptionError",
    "DataInconsistencyError",
    "GradCheckError",
    "DivergenceError",
    "ExpertLayer",
    "Readout",
    "FusionParams",
    "GateMatrix",
    "GateNet",
    "PathwaySet",
    "slow_to_fast",
    "fast_to_slow",
    "interact",
    "grad_check",
    "LossBreakdown",
    "LossWeights",
    "loss_cls",
    "loss_rank",
    "loss_div",
    "loss_gate",
    "loss_total",
    "ForwardResult",
    "Model",
    "ModelConfig",
    "ParamBank",
    "Parameter",
    "Tensor",
    "no_grad",
    "Adam",
    "ExpertUsage",
    "RunReport",
    "TrainConfig",
    "evaluate",
    "full_usage",
    "linear_probe",
    "load_checkpoint",
    "run_ablation",
    "save_checkpoint",
    "split_dataset",
    "usage_matrix",
    "train",
]
