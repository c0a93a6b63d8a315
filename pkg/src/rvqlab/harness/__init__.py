from .config import ExperimentConfig
from .sweep import SweepTable, run_sweep
from .report import report_baseline_table, report_correlation, report_depth_curves

__all__ = ["ExperimentConfig", "SweepTable", "run_sweep", "report_baseline_table",
           "report_correlation", "report_depth_curves"]
