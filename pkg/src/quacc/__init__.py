"""Quantile association (QuACC) tests, tail-aware PC skeletons and simulation harnesses."""
from .citest import CITestOutcome, DSeparationOracle, PartialCorrTest, QuaccTest, ci_partial_corr, ci_quacc
from .dataset import Dataset, load_csv
from .estimator import QuaccResult, null_value, normalize, quacc_test
from .metrics import RecoveryMetrics, recovery, rejection_curve
from .pc import Skeleton, majority_vote, pc_skeleton
from .quantreg import QuantileFit, fit_qr, predict
from .synth import gen_graph, gen_pairwise

__version__ = "0.1.0"

__all__ = [
    "CITestOutcome",
    "DSeparationOracle",
    "Dataset",
    "PartialCorrTest",
    "QuaccResult",
    "QuaccTest",
    "QuantileFit",
    "RecoveryMetrics",
    "Skeleton",
    "ci_partial_corr",
    "ci_quacc",
    "fit_qr",
    "gen_graph",
    "gen_pairwise",
    "load_csv",
    "majority_vote",
    "normalize",
    "null_value",
    "pc_skeleton",
    "predict",
    "quacc_test",
    "recovery",
    "rejection_curve",
]
