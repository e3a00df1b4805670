"""Adversarial invariant representation learning across many training domains."""

from .errors import ConfigError, DataError, InvarlabError, NumericalError
from .model import ModelBundle, build_bundle, predict_labels
from .objective import DomainDataset, empirical_loss
from .trainer import TrainConfig, train

__version__ = "0.1.0"
