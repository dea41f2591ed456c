"""EP-md: embedding propagation with missing-data representations for ICU episodes."""

from .dataset import Dataset, Episode, ModalitySchema, load_dataset, save_dataset
from .errors import EpmdError, ValidationError
from .featurize import FeaturizedDataset, featurize_dataset
from .graph import AffinityGraph, build_graph
from .linear import cv_select, fit_logistic, fit_ridge
from .metrics import auroc, mae, mc_auroc
from .model import EncoderParams, TrainConfig, train

__version__ = "0.1.0"
