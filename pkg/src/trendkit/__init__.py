"""Dose-response trend tests: Tukey regressions, Williams/Dunnett contrasts and
their joint max-T inference over multiple marginal models."""

__version__ = "0.1.0"

from .design import (
    ContrastMatrix,
    DoseDesign,
    DoseMetameters,
    combined_contrasts,
    dose_metameters,
    dunnett_contrasts,
    williams_contrasts,
)
from .errors import (
    AlignmentError,
    ConvergenceError,
    DataError,
    DegenerateLeverageError,
    DegenerateModelError,
    DesignError,
    IngestionError,
    MvtAccuracyError,
    SingularDesignError,
    TrendkitError,
    ZeroVarianceError,
)
from .glm import Family, GlmFit, add1_correction, family_from_name, irls_fit, pearson_dispersion
from .inference import (
    ContrastTest,
    DownturnDecision,
    build_marginal_set,
    JointInference,
    downturn_guard,
    max_t_test,
    pairwise_test,
    simultaneous_bounds,
    tukey_williams_joint,
    williams_mct,
)
from .linmod import LinearFit, covariance, influence_contributions, ols_fit
from .mmm import MarginalModel, MarginalSet, combine, joint_correlation
from .mvt import MvtProblem, equicoordinate_quantile, mvt_cdf, mvt_probability
from .polyk import AdjustedCounts, PolyKRecords, adjusted_counts, poly_k_weights, polyk_trend
from .report import Report, render
from .datasets import Dataset, ingest
from .cli import TrendOptions, run_trend

__all__ = [name for name in dir() if not name.startswith("_")]
