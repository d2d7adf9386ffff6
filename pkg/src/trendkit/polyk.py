"""Poly-k mortality adjustment for tumor incidence trend tests.

Tumor-free animals that die before the end of the study count only
fractionally, ``(t / t_max) ** k``, towards their group's sample size.
Tumor-bearing animals and terminal survivors count fully.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .design import DoseDesign
from .errors import DataError
from .glm import Family
from .inference import DfRule, JointInference, run_pipeline, build_marginal_set
from .mmm import MarginalSet, combine
from .mvt import DEFAULT_SEED, DEFAULT_TOL

__all__ = [
    "PolyKRecords",
    "AdjustedCounts",
    "poly_k_weights",
    "adjusted_counts",
    "polyk_marginal_set",
    "polyk_trend",
]

IDENTITY_BINOMIAL = Family("binomial", "identity")


@dataclass(frozen=True)
class PolyKRecords:
    """Animal-level records: dose, time of death, tumor status."""

    dose: NDArray[np.float64]
    time: NDArray[np.float64]
    tumor: NDArray[np.int64]
    t_max: float | None = None

    def __post_init__(self):
        dose = np.asarray(self.dose, dtype=float).ravel()
        time = np.asarray(self.time, dtype=float).ravel()
        tumor = np.asarray(self.tumor).ravel()
        if not (dose.size == time.size == tumor.size) or dose.size == 0:
            raise DataError("dose, time and tumor must be non-empty and of equal length")
        if not np.all(np.isin(tumor, (0, 1))):
            raise DataError("tumor status must be 0 or 1")
        t_max = float(time.max()) if self.t_max is None else float(self.t_max)
        if np.any(time <= 0):
            raise DataError("times of death must be positive")
        if np.any(time > t_max):
            i = int(np.argmax(time))
            raise DataError(f"animal {i} died at {time[i]:g}, after the study end {t_max:g}")
        object.__setattr__(self, "dose", dose)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "tumor", tumor.astype(np.int64))
        object.__setattr__(self, "t_max", t_max)

    def __len__(self) -> int:
        return self.dose.size


@dataclass(frozen=True)
class AdjustedCounts:
    doses: NDArray[np.float64]
    n: NDArray[np.int64]
    n_star: NDArray[np.float64]
    tumors: NDArray[np.int64]
    p_star: NDArray[np.float64]

    @property
    def p_crude(self) -> NDArray[np.float64]:
        return self.tumors / self.n


def poly_k_weights(records: PolyKRecords, k: float) -> NDArray[np.float64]:
    if not k > 0:
        raise ValueError("the poly-k exponent must be positive")
    w = (records.time / records.t_max) ** k
    return np.where(records.tumor == 1, 1.0, w)


def adjusted_counts(records: PolyKRecords, k: float) -> AdjustedCounts:
    """Poly-k adjusted group sizes ``n*`` and tumor proportions ``y / n*``."""
    w = poly_k_weights(records, k)
    design = DoseDesign.from_unit_doses(records.dose)
    g = design.group_index(records.dose)
    n_star = np.bincount(g, weights=w, minlength=design.k + 1)
    y = np.bincount(g, weights=records.tumor, minlength=design.k + 1).astype(np.int64)
    if np.any(n_star <= 0):
        raise DataError("a dose group has zero adjusted sample size")
    return AdjustedCounts(design.doses, design.n, n_star, y, y / n_star)


def _units(records: PolyKRecords, k: float, add1: bool):
    """Per-unit arrays (successes, trials, prior weights, dose) for the weighted GLM."""
    w = poly_k_weights(records, k)
    y = records.tumor.astype(float)
    m = np.ones_like(y)
    dose = records.dose
    if add1:
        levels = np.unique(dose)
        # one pseudo-unit per group: 1 success out of 2 trials at full weight
        y = np.concatenate([y, np.ones(levels.size)])
        m = np.concatenate([m, np.full(levels.size, 2.0)])
        w = np.concatenate([w, np.ones(levels.size)])
        dose = np.concatenate([dose, levels])
    return y, m, w, dose


def polyk_marginal_set(
    records: PolyKRecords,
    k: float,
    *,
    scalings: Sequence[str] = ("ari", "ord", "arilog"),
    ctype: str | None = "williams",
    vcov: str = "hc0",
    add1: bool = False,
    covariates: ArrayLike | None = None,
) -> MarginalSet:
    y, m, w, dose = _units(records, k, add1)
    if covariates is not None and add1:
        raise ValueError("add-1 pseudo-units cannot carry covariate values")
    return build_marginal_set(
        y,
        dose,
        scalings=scalings,
        ctype=ctype,
        family=IDENTITY_BINOMIAL,
        trials=m,
        prior_weights=w,
        covariates=covariates,
        vcov=vcov,
        name=f"poly-{k:g}",
    )


def polyk_trend(
    records: PolyKRecords,
    k_values: Sequence[float] = (3,),
    *,
    scalings: Sequence[str] = ("ari", "ord", "arilog"),
    ctype: str | None = "williams",
    vcov: str = "hc0",
    add1: bool = False,
    covariates: ArrayLike | None = None,
    df_rule: DfRule = "min_marginal",
    alternative: str = "greater",
    alpha: float = 0.05,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
) -> JointInference:
    """Tukey-Williams max-T test on poly-k weighted identity-link GLMs.

    With several ``k_values`` the per-k families are merged into one max-T
    family (``len(k_values) x models-per-k`` comparisons).
    """
    if not k_values:
        raise ValueError("need at least one poly-k exponent")
    sets = [
        polyk_marginal_set(
            records, k, scalings=scalings, ctype=ctype, vcov=vcov, add1=add1, covariates=covariates
        )
        for k in k_values
    ]
    return run_pipeline(combine(sets), IDENTITY_BINOMIAL, alternative, alpha, df_rule, tol, seed)
