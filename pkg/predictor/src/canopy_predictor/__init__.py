"""Canopy-height prediction from three timestamped 5-band tiles and their
year gaps to the target acquisition, trained with a tree-weighted masked
MSE against samples produced by the canopy-forge pipeline.
"""

__version__ = "0.1.0"

from .data import SampleDataset, load_entry
from .errors import CheckpointMismatch, DataError, PredictorError, ShapeError
from .losses import masked_mae, masked_mse, weighted_masked_mse
from .model import CanopyHeightNet, ModelConfig
from .predict import predict_to_files
from .train import TrainConfig, load_checkpoint, save_checkpoint, train
