"""Event-based non-intrusive load monitoring with boosted trees and exact Shapley explanations."""
from .detector import DetectorState, Event, active_power, detect
from .evaluation import build_test_set, build_train_set, classification_metrics, evaluate
from .explain import Explanation, sample_background, shapley
from .features import FEATURE_NAMES, FourierFeatures, extract_features, extract_features_batch, harmonics
from .fitps import Cycle, CycleResampler, fitps
from .gbdt import GBDTClassifier, load_model, save_model
from .ingest import RawStream, ScenarioSpec, read_plaid_stream, synthesize
from .pipeline import EventPipeline, PipelineConfig, run_stream
from .signature import ActivationWindow, Signature, estimate_signature

__version__ = "0.1.0"

__all__ = [
    "ActivationWindow",
    "Cycle",
    "CycleResampler",
    "DetectorState",
    "Event",
    "EventPipeline",
    "Explanation",
    "FEATURE_NAMES",
    "FourierFeatures",
    "GBDTClassifier",
    "PipelineConfig",
    "RawStream",
    "ScenarioSpec",
    "Signature",
    "active_power",
    "build_test_set",
    "build_train_set",
    "classification_metrics",
    "detect",
    "estimate_signature",
    "evaluate",
    "extract_features",
    "extract_features_batch",
    "fitps",
    "harmonics",
    "load_model",
    "read_plaid_stream",
    "run_stream",
    "sample_background",
    "save_model",
    "shapley",
    "synthesize",
]
