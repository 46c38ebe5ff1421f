"""Experiment engine and CLI support."""

from .config import ConfigError, ScenarioConfig
from .pipeline import (TrialRecord, compare_report, random_scene, run_scenario, run_trial, summarize,
                       sweep, write_summary_csv, write_trials_csv)

__all__ = ["ConfigError", "ScenarioConfig", "TrialRecord", "compare_report", "random_scene",
           "run_scenario", "run_trial", "summarize", "sweep", "write_summary_csv", "write_trials_csv"]
