"""Recording ingestion: EDF subset, native dataset format, 200 to 100 Hz resampling, synthetic data."""

from .edf import EdfHeader, EdfParseError, EdfScalingError, EdfSignalHeader, parse_header, read_edf, read_edf_digital, write_edf
from .native import Subject, read_dataset, read_subject, subject_dirs, write_dataset, write_subject
from .resample import default_antialias, resample_half
from .synth import DEFAULT_EVENT_RATES, DEFAULT_TRANSITIONS, SynthConfig, markov_chain, stationary_distribution, synth_dataset
from .types import CANONICAL_CHANNELS, DEFAULT_CHANNEL_PATTERNS, STAGE_NAMES, Hypnogram, Recording, StageLabel, select_channels

__all__ = [
    "CANONICAL_CHANNELS",
    "DEFAULT_CHANNEL_PATTERNS",
    "DEFAULT_EVENT_RATES",
    "DEFAULT_TRANSITIONS",
    "EdfHeader",
    "EdfParseError",
    "EdfScalingError",
    "EdfSignalHeader",
    "Hypnogram",
    "Recording",
    "STAGE_NAMES",
    "StageLabel",
    "Subject",
    "SynthConfig",
    "default_antialias",
    "markov_chain",
    "parse_header",
    "read_dataset",
    "read_edf",
    "read_edf_digital",
    "read_subject",
    "resample_half",
    "select_channels",
    "stationary_distribution",
    "subject_dirs",
    "synth_dataset",
    "write_dataset",
    "write_edf",
    "write_subject",
]
