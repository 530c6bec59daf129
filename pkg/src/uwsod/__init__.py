"""Salient-object detection for degraded underwater imagery.

A numpy-only research artifact: a dual-branch (boundary-sensitive +
region-coherent) segmentation network with a spatial coordination gate and a
progressive refinement decoder, trained with cooperative structural
supervision on synthetic desk-scale data.  Includes its own reverse-mode
autodiff core, optimizer stack, metrics, and an invariant self-check battery.
"""

from .config import RunConfig
from .data import FolderDataset, Sample, generate_scene, materialize_dataset
from .errors import (CheckpointError, DataError, GenerationError, NumericError,
                     UwsodError, ValidationError)
from .net import SaliencyNet, build_model
from .tensor import Tensor, no_grad, use_dtype
from .train import (TrainResult, evaluate_model, load_model_checkpoint,
                    predict_maps, restore_ema, summarize, train_run)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "DataError", "FolderDataset", "GenerationError",
    "NumericError", "RunConfig", "SaliencyNet", "Sample", "Tensor",
    "TrainResult", "UwsodError", "ValidationError", "build_model",
    "evaluate_model", "generate_scene", "load_model_checkpoint",
    "materialize_dataset", "no_grad", "predict_maps", "restore_ema",
    "summarize", "train_run", "use_dtype", "__version__",
]
