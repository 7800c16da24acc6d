"""Progressive-margin training for long-tailed ordinal classification.

A desk-scale framework: Gaussian label distributions over ordered
classes, streaming per-class statistics, learned ordinal and variational
margins injected into a one-vs-all softmax objective, and a
balanced-to-imbalanced curriculum schedule.
"""

from .config import TrainConfig, load_config, parse_config, serialize
from .curriculum import CurriculumPlan, InstructorState, StageState, advance, build_plan
from .data import Dataset, DatasetBundle, OrdinalDatasetSpec, generate, load_csv, save_csv, split_dataset
from .errors import ConfigError, DataError, NumericError, PmlError, ShapeError, StateError
from .labels import AgeLabelDistribution, decode_argmax, decode_expectation, encode, kl_loss
from .loss import MarginedPrediction, margined_loss, predict_margined, softmax
from .margins import (
    MarginMix,
    OrdinalMargins,
    VariationalMargin,
    combine,
    combine_batch,
    ordinal_forward,
    variational_forward,
)
from .nn import AdamOptimizer, ClassifierHead, DenseLayer, DenseNet, SgdOptimizer, make_optimizer
from .persist import load_model, save_model
from .stats import ClassStatsBank, StatsSnapshot, cosine_distance, residual
from .trainer import EpochReport, EvalReport, PmlModel, TrainResult, build_model, evaluate, train

__version__ = "0.1.0"
