"""Covariate-conditional ROC analysis with Bayesian conditional mixtures of normals."""

from .basis import BasisConfig, BasisSet, featurize, place_grid, prune
from .baseline import BinSpec, binned_metric, empirical_roc
from .config import RunConfig, load_config
from .datagen import generate, oracle_grid, preset, truth_metric
from .dataset import (ItemTable, PairDataset, Predicate, build_pairs, filter_pairs,
                      ingest_pairs_csv, normalize)
from .inference import FitConfig, HMCConfig, Posterior, SVIConfig, fit_both, fit_hmc, fit_svi
from .kernels import BACKEND
from .metrics import (MetricResult, auc_at, metric_surface, r_squared, roc_at, threshold_at,
                      tpr_at_fpr)
from .mixture import MixtureParams, PriorSpec

__version__ = "0.1.0"
