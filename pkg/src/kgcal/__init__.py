"""Relation-prediction calibration for knowledge graph embeddings."""
from .calibration import (
    CalibrationSet, IdentitySoftmax, IsotonicOvA, MatrixScaling, PlattOvA, VectorScaling,
    calibrate, calibration_set, fit_calibrator, softmax_confidence,
)
from .errors import ConfigError, DataError, KgcalError, NumericalError
from .evaluation import (
    evaluate_cwa, evaluate_owa, expected_calibration_error, filtered_rank, generate_owa_candidates,
    reliability_report,
)
from .graph import KnowledgeGraph, SplitSpec, build_graph, load_dataset, load_triples
from .models import KgeModel, init_model, load_model, save_model, score_pairs, score_triple
from .training import TrainConfig, grid_search, train

__version__ = "0.1.0"
