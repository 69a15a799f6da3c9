"""Experiment matrix, reports and the command-line tool."""

from rffi.harness.experiments import (
    EXPERIMENTS,
    ExperimentSpec,
    make_datasets,
    run_aug_compare,
    run_complexity,
    run_experiment,
    run_multipacket_curve,
    run_position_study,
    run_slicing_compare,
    run_snr_sweep,
)
from rffi.harness.report import Report, emit_report, load_report

__all__ = [
    "EXPERIMENTS",
    "ExperimentSpec",
    "Report",
    "emit_report",
    "load_report",
    "make_datasets",
    "run_aug_compare",
    "run_complexity",
    "run_experiment",
    "run_multipacket_curve",
    "run_position_study",
    "run_slicing_compare",
    "run_snr_sweep",
]
