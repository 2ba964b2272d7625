"""Loopy belief propagation on discrete factor graphs with pluggable message schedules."""

from ._backend import BACKEND
from .errors import DegenerateMessageError, ModelError
from .model import Factor, build_graph, four_cycle_model, load_model, read_model, save_model, write_model
from .propagation import MessageState, Variant, compute_beliefs
from .schedulers import RunConfig, RunRecord, Scheduler, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DegenerateMessageError", "ModelError", "Factor", "build_graph", "four_cycle_model", "load_model",
    "read_model", "save_model", "write_model", "MessageState", "Variant", "compute_beliefs", "RunConfig",
    "RunRecord", "Scheduler", "run",
]
