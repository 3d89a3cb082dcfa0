"""Two-sample tests built on geometric and depth graphs, with local-power tools."""

__version__ = "0.1.0"

from .geomgraph import GeometricGraph, GraphStats, build_graph, build_knn, build_mst, build_nbm, graph_stats
from .depth import DepthModel, LabeledSample, depth_scores, liu_singh_Q
from .twosample import TestResult, bootstrap_variance, cross_statistic, null_variance, run_test
from .efficiency import EfficiencyReport, efficiency, make_family
from .simulate import PowerExperimentConfig, lecam_joint_check, run_power_experiment

__all__ = [
    "GeometricGraph", "GraphStats", "build_graph", "build_knn", "build_mst", "build_nbm", "graph_stats",
    "DepthModel", "LabeledSample", "depth_scores", "liu_singh_Q",
    "TestResult", "bootstrap_variance", "cross_statistic", "null_variance", "run_test",
    "EfficiencyReport", "efficiency", "make_family",
    "PowerExperimentConfig", "lecam_joint_check", "run_power_experiment",
]
