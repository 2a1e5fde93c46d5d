"""IMDeception super-resolution engine on numpy."""
from .analysis import complexity_report, count_activations, count_convs, count_macs, count_parameters
from .archive import load_weights, save_weights
from .autodiff import GradientTape
from .model import Model, ModelConfig, build_model, model_forward

__all__ = [
    "GradientTape", "Model", "ModelConfig", "build_model", "model_forward",
    "load_weights", "save_weights",
    "complexity_report", "count_activations", "count_convs", "count_macs", "count_parameters",
]
