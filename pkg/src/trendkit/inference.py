"""Max-T trend tests, simultaneous bounds and the downturn guard.

The high-level pipelines (:func:`williams_mct`, :func:`tukey_williams_joint`)
fit one model per requested dose metameter plus a cell-means model carrying
the contrast family, stack them as marginal models and refer the maximum
standardized statistic to its joint multivariate t distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from . import glm as glm_mod
from . import linmod
from .design import (
    ContrastMatrix,
    DoseDesign,
    combined_contrasts,
    dose_metameters,
    dunnett_contrasts,
    williams_contrasts,
)
from .errors import DesignError, ZeroVarianceError
from .mmm import MarginalModel, MarginalSet, joint_correlation, marginal_from_fit
from .mvt import DEFAULT_SEED, DEFAULT_TOL, equicoordinate_quantile, mvt_probability

__all__ = [
    "JointInference",
    "ContrastTest",
    "DownturnDecision",
    "max_t_test",
    "simultaneous_bounds",
    "downturn_guard",
    "pairwise_test",
    "build_marginal_set",
    "williams_mct",
    "tukey_williams_joint",
    "resolve_df",
    "SCALING_LABELS",
]

ALTERNATIVES = ("greater", "less", "two_sided")
SCALING_LABELS = {"ari": "arithmetic", "ord": "ordinal", "arilog": "ari-logarithmic"}
CTYPES = ("williams", "dunnett", "both")
TIE_TOL = 1e-10

DfRule = Union[str, float, int]


@dataclass(frozen=True)
class JointInference:
    labels: tuple[str, ...]
    estimates: NDArray[np.float64]
    std_errors: NDArray[np.float64]
    t_stats: NDArray[np.float64]
    df: float
    corr: NDArray[np.float64]
    raw_p: NDArray[np.float64]
    adjusted_p: NDArray[np.float64]
    alternative: str
    alpha: float
    mvt_tol: float = DEFAULT_TOL
    seed: int = DEFAULT_SEED
    lower: NDArray[np.float64] | None = None
    upper: NDArray[np.float64] | None = None
    critical_value: float | None = None
    effect_scale: str = "difference"

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def max_index(self) -> list[int]:
        """Indices of the most extreme statistic (ties reported together)."""
        score = self._directed(self.t_stats)
        top = score.max()
        return [int(i) for i in np.flatnonzero(score >= top - TIE_TOL * max(1.0, abs(top)))]

    def _directed(self, t):
        if self.alternative == "greater":
            return t
        if self.alternative == "less":
            return -t
        return np.abs(t)

    def row(self, label: str) -> int:
        return self.labels.index(label)

    def effects(self) -> tuple[NDArray, NDArray | None, NDArray | None]:
        """Estimates and bounds on the reporting scale (ratios for log-type links)."""
        if self.effect_scale == "difference":
            return self.estimates, self.lower, self.upper
        ex = lambda v: None if v is None else np.exp(v)  # noqa: E731
        return np.exp(self.estimates), ex(self.lower), ex(self.upper)


@dataclass(frozen=True)
class ContrastTest:
    label: str
    estimate: float
    std_error: float
    t_stat: float
    df: float
    p_value: float


@dataclass(frozen=True)
class DownturnDecision:
    trend_p: float
    trend_significant: bool
    high_vs_control_label: str
    high_vs_control_t: float
    high_vs_control_p: float
    high_vs_control_significant: bool
    monotone_trend: bool
    downturn_flagged: bool
    alpha: float


def _check_alternative(alternative: str) -> str:
    alt = alternative.replace("-", "_").replace(".", "_")
    if alt not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    return alt


def resolve_df(models: Sequence[MarginalModel], df_rule: DfRule = "min_marginal") -> float:
    """Joint degrees of freedom: ``min_marginal``, ``infinite`` or a fixed number."""
    if isinstance(df_rule, str):
        rule = df_rule.lower()
        if rule == "min_marginal":
            return float(min(m.df for m in models))
        if rule in ("infinite", "inf", "normal"):
            return math.inf
        try:
            df_rule = float(rule.removeprefix("fixed:"))
        except ValueError:
            raise ValueError(f"unknown df rule {df_rule!r}") from None
    df = float(df_rule)
    if not df > 0:
        raise ValueError("fixed degrees of freedom must be positive")
    return df


def _univariate_p(t: NDArray, df: float, alternative: str) -> NDArray:
    cdf = special.ndtr if math.isinf(df) else (lambda x: special.stdtr(df, x))
    if alternative == "greater":
        return cdf(-t)
    if alternative == "less":
        return cdf(t)
    return 2 * cdf(-np.abs(t))


def max_t_test(
    models: MarginalSet,
    alternative: str = "greater",
    alpha: float = 0.05,
    df_rule: DfRule = "min_marginal",
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
    effect_scale: str = "difference",
) -> JointInference:
    """Single-step max-T test over every model in the set."""
    alt = _check_alternative(alternative)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    est = models.estimates
    se = models.std_errors
    t = est / se
    q = t.size
    df = resolve_df(models.models, df_rule)
    R = joint_correlation(models) if q > 1 else np.ones((1, 1))
    raw = _univariate_p(t, df, alt)

    if q == 1:
        adj = raw.copy()
    else:
        cache: dict[float, float] = {}
        adj = np.empty(q)
        for j, tj in enumerate(t):
            key = abs(tj) if alt == "two_sided" else (tj if alt == "greater" else -tj)
            if key not in cache:
                if alt == "two_sided":
                    upper, lower = np.full(q, key), np.full(q, -key)
                else:
                    upper, lower = np.full(q, key), None
                prob, _ = mvt_probability(upper, R, df, lower, tol=tol, seed=seed)
                cache[key] = 1.0 - prob
            adj[j] = cache[key]
        # the max-T p-value can never fall below the marginal one
        adj = np.clip(np.maximum(adj, raw), 0.0, 1.0)

    return JointInference(
        labels=tuple(models.labels),
        estimates=est,
        std_errors=se,
        t_stats=t,
        df=df,
        corr=R,
        raw_p=raw,
        adjusted_p=adj,
        alternative=alt,
        alpha=alpha,
        mvt_tol=tol,
        seed=seed,
        effect_scale=effect_scale,
    )


def simultaneous_bounds(inference: JointInference, alpha: float | None = None) -> JointInference:
    """Add simultaneous confidence bounds sharing one equicoordinate critical value."""
    alpha = inference.alpha if alpha is None else alpha
    two = inference.alternative == "two_sided"
    c = equicoordinate_quantile(
        alpha, inference.corr, inference.df, two_sided=two, tol=inference.mvt_tol, seed=inference.seed
    )
    est, se = inference.estimates, inference.std_errors
    lower = np.full(est.size, -np.inf)
    upper = np.full(est.size, np.inf)
    if inference.alternative in ("greater", "two_sided"):
        lower = est - c * se
    if inference.alternative in ("less", "two_sided"):
        upper = est + c * se
    return replace(inference, lower=lower, upper=upper, critical_value=float(c), alpha=alpha)


def pairwise_test(model: MarginalModel, alternative: str = "greater") -> ContrastTest:
    """Unadjusted t-test of a single marginal parameter."""
    alt = _check_alternative(alternative)
    t = model.estimate / model.std_error
    p = float(_univariate_p(np.array([t]), model.df, alt)[0])
    return ContrastTest(model.label, model.estimate, model.std_error, float(t), model.df, p)


def downturn_guard(
    trend: JointInference,
    high_vs_control: ContrastTest | float,
    alpha: float | None = None,
) -> DownturnDecision:
    """Intersection-union decision: claim a monotone trend only if both tests reject."""
    alpha = trend.alpha if alpha is None else alpha
    if isinstance(high_vs_control, ContrastTest):
        hv_p, hv_t, hv_label = high_vs_control.p_value, high_vs_control.t_stat, high_vs_control.label
    else:
        hv_p, hv_t, hv_label = float(high_vs_control), math.nan, "high-vs-control"
    trend_p = float(np.min(trend.adjusted_p))
    trend_sig = trend_p < alpha
    hv_sig = hv_p < alpha
    return DownturnDecision(
        trend_p=trend_p,
        trend_significant=bool(trend_sig),
        high_vs_control_label=hv_label,
        high_vs_control_t=float(hv_t),
        high_vs_control_p=float(hv_p),
        high_vs_control_significant=bool(hv_sig),
        monotone_trend=bool(trend_sig and hv_sig),
        downturn_flagged=bool(trend_sig and not hv_sig),
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def _contrasts_for(design: DoseDesign, ctype: str) -> tuple[ContrastMatrix, list[str]]:
    ctype = ctype.lower()
    if ctype == "williams":
        cm = williams_contrasts(design)
        return cm, ["Williams"] * cm.q
    if ctype == "dunnett":
        cm = dunnett_contrasts(design)
        return cm, ["Dunnett"] * cm.q
    if ctype == "both":
        cm = combined_contrasts(design)
        names = ["Dunnett" if np.count_nonzero(r) == 2 else "Williams" for r in cm.coefficients]
        return cm, names
    raise ValueError(f"ctype must be one of {CTYPES}, got {ctype!r}")


def _effect_scale(family: glm_mod.Family | None) -> str:
    if family is None or family.link == "identity":
        return "difference"
    return "odds_ratio" if family.link == "logit" else "rate_ratio"


def _as_family(family) -> glm_mod.Family | None:
    if family is None or family == "gaussian":
        return None
    if isinstance(family, str):
        return glm_mod.family_from_name(family)
    return family


def build_marginal_set(
    y: ArrayLike,
    dose: ArrayLike,
    *,
    scalings: Sequence[str] = ("ari", "ord", "arilog"),
    ctype: str | None = "williams",
    contrasts: ContrastMatrix | None = None,
    family: glm_mod.Family | str | None = None,
    trials: ArrayLike | None = None,
    prior_weights: ArrayLike | None = None,
    covariates: ArrayLike | None = None,
    vcov: str = "hc0",
    name: str = "",
    unit_ids: Sequence | None = None,
) -> MarginalSet:
    """Fit the Tukey regressions and the contrast model, one marginal model per parameter.

    ``covariates`` (``n x c``) enter every model as extra columns.  A
    user-supplied ``contrasts`` matrix replaces the ``ctype`` family.
    """
    y = np.asarray(y, dtype=float).ravel()
    dose = np.asarray(dose, dtype=float).ravel()
    if y.size != dose.size:
        raise DesignError(f"{y.size} responses but {dose.size} doses")
    fam = _as_family(family)
    design = DoseDesign.from_unit_doses(dose)
    g = design.group_index(dose)
    n = y.size
    Z = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    if fam is None and np.ptp(y) == 0:
        raise ZeroVarianceError("response is constant; no test statistic is defined")

    def fit(X, names):
        if fam is None:
            f = linmod.ols_fit(X, y, names)
            return f.coef, linmod.covariance(f, vcov), linmod.influence_contributions(f, vcov), f.df_residual
        f = glm_mod.irls_fit(X, y, fam, trials=trials, prior_weights=prior_weights)
        df = f.df_residual if fam.dispersion_mode == "pearson" else math.inf
        return f.coef, glm_mod.glm_covariance(f, vcov), glm_mod.glm_influence(f, vcov), df

    cov_names = [f"covariate{j}" for j in range(Z.shape[1])]
    models: list[MarginalModel] = []
    meta = dose_metameters(design)
    for s in scalings:
        if s not in SCALING_LABELS:
            raise ValueError(f"unknown scaling {s!r}; choose from {tuple(SCALING_LABELS)}")
        X = np.column_stack([np.ones(n), meta.get(s)[g], Z])
        coef, cov, infl, df = fit(X, ["(intercept)", f"dose_{s}", *cov_names])
        L = np.zeros(X.shape[1])
        L[1] = 1.0
        models.append(marginal_from_fit(f"Tukey: {SCALING_LABELS[s]}", coef, cov, infl, L, df))

    if contrasts is not None or ctype:
        if contrasts is not None:
            cm, kinds = contrasts, ["Contrast"] * contrasts.q
            if cm.coefficients.shape[1] != design.k + 1:
                raise DesignError(
                    f"contrast matrix has {cm.coefficients.shape[1]} columns for {design.k + 1} dose groups"
                )
        else:
            cm, kinds = _contrasts_for(design, ctype)
        X = np.column_stack([np.eye(design.k + 1)[g], Z])
        coef, cov, infl, df = fit(X, [f"group_{lab}" for lab in design.labels] + cov_names)
        for row, label, kind in zip(cm.coefficients, cm.row_labels, kinds):
            L = np.concatenate([row, np.zeros(Z.shape[1])])
            models.append(marginal_from_fit(f"{kind}: {label}", coef, cov, infl, L, df))

    if not models:
        raise ValueError("nothing to test: no scalings and no contrasts requested")
    return MarginalSet(tuple(models), tuple(unit_ids) if unit_ids is not None else (), name)


def run_pipeline(mset, family, alternative, alpha, df_rule, tol, seed, bounds=True) -> JointInference:
    res = max_t_test(mset, alternative, alpha, df_rule, tol, seed, _effect_scale(_as_family(family)))
    return simultaneous_bounds(res) if bounds else res


def williams_mct(
    y: ArrayLike,
    dose: ArrayLike,
    *,
    vcov: str = "hc0",
    alternative: str = "greater",
    alpha: float = 0.05,
    ctype: str = "williams",
    covariates: ArrayLike | None = None,
    df_rule: DfRule = "min_marginal",
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
) -> JointInference:
    """Williams multiple contrast test on a cell-means fit, with simultaneous bounds."""
    y = np.asarray(y, dtype=float).ravel()
    design = DoseDesign.from_unit_doses(dose)
    if design.n.max() < 2 or y.size < design.k + 2:
        raise DesignError("need at least two observations in some group and n >= k + 2")
    mset = build_marginal_set(y, dose, scalings=(), ctype=ctype, covariates=covariates, vcov=vcov)
    return run_pipeline(mset, None, alternative, alpha, df_rule, tol, seed)


def tukey_williams_joint(
    y: ArrayLike,
    dose: ArrayLike,
    *,
    scalings: Sequence[str] = ("ari", "ord", "arilog"),
    ctype: str | None = "williams",
    family: glm_mod.Family | str | None = None,
    trials: ArrayLike | None = None,
    prior_weights: ArrayLike | None = None,
    covariates: ArrayLike | None = None,
    vcov: str = "hc0",
    df_rule: DfRule = "min_marginal",
    alternative: str = "greater",
    alpha: float = 0.05,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
) -> JointInference:
    """Joint max-T test over Tukey dose regressions and contrast-type comparisons."""
    if np.unique(np.asarray(dose, dtype=float)).size < 2:
        raise DesignError("need at least two distinct doses")
    mset = build_marginal_set(
        y,
        dose,
        scalings=scalings,
        ctype=ctype,
        family=family,
        trials=trials,
        prior_weights=prior_weights,
        covariates=covariates,
        vcov=vcov,
    )
    return run_pipeline(mset, family, alternative, alpha, df_rule, tol, seed)
