"""Whittle-type priority indices for scheduling adherence interventions under a capacity limit."""

__version__ = "0.1.0"

from .core import ALWAYS_ACTIVE, ALWAYS_PASSIVE, PatientParams, crossing_time, passive_step, trajectory_point
from .metrics import marginal_metrics, mp_metric, threshold_metrics
from .index import build_index_table, mp_index, optimal_threshold, verify_pcl
from .average import avg_marginal_metrics, avg_metrics, avg_mp_index, verify_apcli
from .dual import dual_bound, uniform_metrics
from .simulate import SimConfig, SimResult, relative_gap, select_actions, simulate

__all__ = [
    "ALWAYS_ACTIVE",
    "ALWAYS_PASSIVE",
    "PatientParams",
    "SimConfig",
    "SimResult",
    "avg_marginal_metrics",
    "avg_metrics",
    "avg_mp_index",
    "build_index_table",
    "crossing_time",
    "dual_bound",
    "marginal_metrics",
    "mp_index",
    "mp_metric",
    "optimal_threshold",
    "passive_step",
    "relative_gap",
    "select_actions",
    "simulate",
    "threshold_metrics",
    "trajectory_point",
    "uniform_metrics",
    "verify_apcli",
    "verify_pcl",
]
