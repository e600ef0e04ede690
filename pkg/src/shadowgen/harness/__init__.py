"""Configuration, training, evaluation, inference and reporting."""
from .config import RunConfig, desk_run_config
from .data import BatchOrder, TensorSet, load_tuples, stack_tuples
from .evaluate import evaluate, predict, write_eval, write_report
from .infer import InferResult, infer
from .train import TrainResult, TrainState, finetune, train

__all__ = [
    "BatchOrder", "InferResult", "RunConfig", "TensorSet", "TrainResult", "TrainState", "desk_run_config",
    "evaluate", "finetune", "infer", "load_tuples", "predict", "stack_tuples", "train", "write_eval", "write_report",
]
