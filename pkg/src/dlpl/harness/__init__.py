"""Synthetic shifted-view segmentation benchmark: data, model, training, metrics."""
from .data import Dataset, SegSample, generate_dataset, load_dataset, save_dataset
from .metrics import SegMetrics, confusion_matrix, metrics_from_confusion
from .model import SegModel, added_parameters, build_model
from .train import DivergenceError, History, evaluate, train

__all__ = ["Dataset", "SegSample", "generate_dataset", "load_dataset", "save_dataset",
           "SegMetrics", "confusion_matrix", "metrics_from_confusion", "SegModel",
           "added_parameters", "build_model", "DivergenceError", "History", "evaluate", "train"]
