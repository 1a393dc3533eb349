from .base import ModelBackend
from .toy import ToyBackend, ToyMLMConfig, masked_token_accuracy, pretrain_toy
from .vocab import Vocab

__all__ = ["ModelBackend", "ToyBackend", "ToyMLMConfig", "Vocab", "pretrain_toy", "masked_token_accuracy"]
