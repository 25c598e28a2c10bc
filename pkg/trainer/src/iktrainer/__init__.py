"""iktrainer: fine-tune a small causal LM into a Yes/No first-token
classifier and serve it behind the /score HTTP contract."""

__version__ = "0.1.0"

from .prompt import PROMPT_VERSION, render_prompt
from .train import TrainJobConfig, TrainReport, train
from .trainset import TrainsetError, read_trainset

__all__ = [
    "__version__",
    "PROMPT_VERSION",
    "render_prompt",
    "TrainJobConfig",
    "TrainReport",
    "train",
    "TrainsetError",
    "read_trainset",
]
