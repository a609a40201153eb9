"""External file formats: IDX datasets, model files and report exports."""

from .idx import IDXFormatError, load_idx
from .model_store import ModelFormatError, load_model, save_model

__all__ = ["IDXFormatError", "ModelFormatError", "load_idx", "load_model", "save_model"]
