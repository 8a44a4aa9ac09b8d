"""Built-in economic models and their trial data generators."""

from .chemo import ChemoModel, ChemoTrialGenerator, chemo_generator, chemo_inb, load_chemo_params
from .toy import ToyGenerator, ToyModel, toy_generator, toy_inb

__all__ = [
    "ToyModel",
    "ToyGenerator",
    "toy_inb",
    "toy_generator",
    "ChemoModel",
    "ChemoTrialGenerator",
    "chemo_inb",
    "chemo_generator",
    "load_chemo_params",
]
