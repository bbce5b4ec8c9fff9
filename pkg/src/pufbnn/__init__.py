"""PUF-keyed encrypted inference for binarized neural networks.

The package trains a fully connected BNN, folds batch normalization into
even integer thresholds, maps the model onto a simulated RRAM crossbar,
and protects the stored weights with reversible transforms keyed by a
simulated physical unclonable function. Inference runs directly on the
protected parameters; only a holder of the device secret recovers the
original predictions, bit for bit.
"""

from .bitops import BinWeightMatrix, BipolarVec, xnor_popcount_matvec
from .bnn import BnnModel, OutputLayer, ThresholdVec, evaluate, fold_batchnorm, forward, sign_threshold
from .crossbar import CrossbarArray, DeviceModel, crossbar_forward, map_weights
from .data import Dataset, binarize_input, load_idx, synthetic_digits
from .errors import (
    BadMagicError,
    CountMismatchError,
    DegenerateChannelError,
    DimensionError,
    EmptyDatasetError,
    FormatError,
    ParityError,
    PufBnnError,
    TruncatedFileError,
)
from .modelio import read_model, read_protected, write_model, write_protected
from .protect import (
    KeySchedule,
    ProtectedModel,
    SchemeId,
    build_key_schedule,
    protect_model,
    protected_forward,
    unprotect,
)
from .puf import PufDevice, expand_key, puf_response
from .train import ShadowModel, TrainConfig, finalize, train_ste

__version__ = "0.1.0"

__all__ = [
    "BipolarVec",
    "BinWeightMatrix",
    "BnnModel",
    "OutputLayer",
    "ThresholdVec",
    "xnor_popcount_matvec",
    "sign_threshold",
    "fold_batchnorm",
    "forward",
    "evaluate",
    "PufDevice",
    "puf_response",
    "expand_key",
    "SchemeId",
    "KeySchedule",
    "build_key_schedule",
    "ProtectedModel",
    "protect_model",
    "protected_forward",
    "unprotect",
    "DeviceModel",
    "CrossbarArray",
    "map_weights",
    "crossbar_forward",
    "Dataset",
    "load_idx",
    "binarize_input",
    "synthetic_digits",
    "TrainConfig",
    "ShadowModel",
    "train_ste",
    "finalize",
    "read_model",
    "write_model",
    "read_protected",
    "write_protected",
    "PufBnnError",
    "DimensionError",
    "ParityError",
    "DegenerateChannelError",
    "EmptyDatasetError",
    "FormatError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
]
