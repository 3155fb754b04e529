"""Experiment harness: configs, run execution, studies, reports, CLI."""

from .bench import run_bench, write_bench
from .config import MASKED_TASKS, METHODS, TASKS, ConfigError, RunConfig
from .report import aggregate, collect_rows, write_report
from .runs import (LOSS_UNITS, ReportRow, TaskSetup, build_tasks,
                   execute_config, execute_seed, load_record, save_record)
from .seam import seam_metric
from .studies import reuse_study, variance_study, write_study
from .tensorio import TensorFormatError, load_tensor, save_tensor

__all__ = [
    "ConfigError", "RunConfig", "TASKS", "METHODS", "MASKED_TASKS",
    "ReportRow", "TaskSetup", "build_tasks", "execute_config", "execute_seed",
    "save_record", "load_record", "LOSS_UNITS",
    "seam_metric", "run_bench", "write_bench",
    "variance_study", "reuse_study", "write_study",
    "collect_rows", "aggregate", "write_report",
    "save_tensor", "load_tensor", "TensorFormatError",
]
