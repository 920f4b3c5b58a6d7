"""Exact machine unlearning for random forests.

Removal-enabled forests (:class:`DareForest`), a naive retrain baseline
(:class:`NaiveForest`), SISA ensembles and a benchmark harness comparing them.
"""

from .bench import TrialConfig, TrialResult, agreement, consistency, percent_change, run_grid
from .dare import DareForest, ForestParams, NaiveForest, fit, gini_gain, naive_retrain
from .dataset import Dataset, EncodingConfig, generate_synthetic
from .errors import ArgumentError, FormatError, InvariantError, SchemaError, StateError, UnlearnError
from .sisa import SisaConfig, SisaEnsemble, sisa_delete, sisa_fit, sisa_predict_proba

__version__ = "0.1.0"
