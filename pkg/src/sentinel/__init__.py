"""Streaming gross-error detection and classification for sensor channels."""

from .classifier import ErrorClass, GedEpisode, WindowStats, classify, classify_episode, window_stats
from .errors import InputError, SentinelError
from .ident import ArmaModel, SensorSample, fit_arma, select_order, to_state_space
from .kalman import GedDecision, Innovation, KalmanState, NoiseConfig, chi2_threshold, init_filter, step
from .synth import FaultSpec, LabeledStream, ScenarioConfig, make_scenario

__version__ = "0.1.0"
