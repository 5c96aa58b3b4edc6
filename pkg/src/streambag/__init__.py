"""Online bagging ensembles over Hoeffding trees with pluggable executors
and a socket stream benchmark harness."""

__version__ = "0.1.0"

from .data import (
    AttributeSpec,
    Instance,
    RecordError,
    Schema,
    SchemaError,
    StreamRecord,
    parse_arff,
    parse_csv,
    synthetic_drift_stream,
    synthetic_schema,
)
from .tree import HoeffdingTree, HTConfig, hoeffding_bound
from .adwin import Adwin
from .ensembles import Ensemble, EnsembleConfig, poisson_weight
from .executor import ExecutorConfig, PredictionEvent, RdTrace, RunSummary, run

__all__ = [
    "AttributeSpec",
    "Adwin",
    "Ensemble",
    "EnsembleConfig",
    "ExecutorConfig",
    "HTConfig",
    "HoeffdingTree",
    "Instance",
    "PredictionEvent",
    "RdTrace",
    "RecordError",
    "RunSummary",
    "Schema",
    "SchemaError",
    "StreamRecord",
    "hoeffding_bound",
    "parse_arff",
    "parse_csv",
    "poisson_weight",
    "run",
    "synthetic_drift_stream",
    "synthetic_schema",
]
