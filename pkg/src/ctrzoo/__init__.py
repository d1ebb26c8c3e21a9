"""Feature-interaction models for click prediction, unified as attention.

Fifteen classical and attention-style architectures share one forward
skeleton here: embed the fields, form pairwise similarity-times-utility
interactions over a neighborhood, aggregate, transform to a logit. The
package carries its own reverse-mode tape, so training needs nothing
beyond numpy, and every model ships with gradient checks, parameter
accounting, and explicit containment maps between families.
"""

from .data import (
    Dataset,
    Field,
    FieldSchema,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode,
    generate_dcm,
    read_raw,
    split_dataset,
)
from .equivalence import (
    lift_fm_to_sam2a,
    lift_lr_to_sam1,
    lift_sam2a_to_sam3a,
    reduce_sam1_to_lr,
    verify_equivalence,
)
from .errors import CtrZooError
from .interaction import FIConfig, fi_catalog, fi_forward
from .metrics import MetricsReport, auc, evaluate, logloss
from .tape import Node, ParameterStore, Tape, finite_diff_check
from .training import TrainConfig, TrainHistory, train
from .zoo import (
    MODEL_NAMES,
    ComplexityReport,
    Model,
    ModelSpec,
    build_model,
    count_complexity,
    gradient_check,
    random_batch,
)

__version__ = "0.1.0"

__all__ = [
    "CtrZooError",
    "Dataset",
    "Field",
    "FieldSchema",
    "SyntheticSpec",
    "Vocabulary",
    "build_vocab",
    "encode",
    "generate_dcm",
    "read_raw",
    "split_dataset",
    "FIConfig",
    "fi_catalog",
    "fi_forward",
    "MetricsReport",
    "auc",
    "evaluate",
    "logloss",
    "Node",
    "ParameterStore",
    "Tape",
    "finite_diff_check",
    "TrainConfig",
    "TrainHistory",
    "train",
    "MODEL_NAMES",
    "ComplexityReport",
    "Model",
    "ModelSpec",
    "build_model",
    "count_complexity",
    "gradient_check",
    "random_batch",
    "lift_fm_to_sam2a",
    "lift_lr_to_sam1",
    "lift_sam2a_to_sam3a",
    "reduce_sam1_to_lr",
    "verify_equivalence",
    "__version__",
]
