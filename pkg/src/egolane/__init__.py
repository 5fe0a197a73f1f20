"""Ego-lane identification from lane-marking match quality with early classification."""

from .classifier import BoostedModel, fit
from .harness import LabeledSequence, Prediction, build_dataset, compare_methods, run_sequence_online, split_dataset
from .mmq import chi2inv, mmq
from .moo import NsgaConfig, hypervolume, non_dominated_sort, nsga2, select_operating_point
from .sim import ScenarioConfig, generate_batch, generate_scenario
from .tracker import TrackerConfig
from .trigger import TriggerParams

__version__ = "0.1.0"
