"""Synthetic generation of owner-attributed event sequences, with risk and utility reports."""

from .core import (
    END_SENTINEL,
    ConfigurationError,
    DataError,
    Dataset,
    DatasetStats,
    IntegrityError,
    Record,
    SchemaConfig,
    SchemaError,
    SeqSynthError,
    StateAlphabet,
    load_dataset,
    load_schema,
    summarize,
    write_dataset,
)
from .evaluation import (
    EvaluationConfig,
    UtilityReport,
    compare_stats,
    evaluate,
    mine_topk,
    topk_precision,
    tstr_evaluate,
)
from .features import FeatureMatrix, FeatureSpec, extract_features, extract_time_features, fit_discretization, one_hot
from .generator import GenerationConfig, generate, sample_start
from .models import ModelBundle, ModelConfig, fit_bundle, fit_markov, fit_state_model, fit_time_model
from .privacy import (
    QidSpec,
    RiskReport,
    adjusted_reconstruction_probability,
    reconstruction_probability,
    reidentification_risk,
    risk_report,
)
from .trees import ForestParams

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
