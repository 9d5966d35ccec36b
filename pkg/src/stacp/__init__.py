"""Spatio-temporal activity-center POI recommendation.

Activity centers are allocated per user and temporal state, scored by
distance and visit share, and multiplied into static and per-state
Poisson factor-model preferences.
"""

from .centers import (ActivityCenter, CenterConfig, ContextConfig, allocate_centers, context_score,
                      state_center_score)
from .config import ExperimentConfig, load_config
from .evaluation import EvalReport, ndcg_at, paired_ttest, precision_at, recall_at
from .experiment import run_experiment, run_pipeline, run_sweep
from .factorization import FactorHyper, FactorModel, TemporalModelSet, train, train_temporal
from .geo import GeoPoint, PowerLawModel, fit_power_law, haversine_km, powerlaw_score
from .ingest import (CheckIn, DatasetSplit, InteractionMatrix, assign_temporal_state, build_matrix,
                     chronological_split, parse_checkins)
from .recommender import FusionInputs, Recommendation, recommend_top_n, stacp_score

__version__ = "0.1.0"
