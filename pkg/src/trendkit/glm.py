"""Generalized linear models for proportions and counts, fitted by IRLS.

Supports binomial (logit, identity) and poisson (log) families with prior
weights, optional Pearson quasi-dispersion and the add-1 small-sample
correction.  Every fit carries per-unit influence contributions so several
models fitted to the same units can be analysed jointly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .errors import ConvergenceError, DegenerateLeverageError, DegenerateModelError
from .linmod import check_rank

__all__ = [
    "Family",
    "GlmFit",
    "irls_fit",
    "add1_correction",
    "pearson_dispersion",
    "glm_covariance",
    "glm_influence",
    "family_from_name",
]

MU_EPS = 1e-10


@dataclass(frozen=True)
class Family:
    kind: str = "binomial"
    link: str = "logit"
    dispersion_mode: str = "fixed_1"

    def __post_init__(self):
        allowed = {"binomial": ("logit", "identity"), "poisson": ("log",)}
        if self.kind not in allowed:
            raise ValueError(f"unsupported family {self.kind!r}")
        if self.link not in allowed[self.kind]:
            raise ValueError(f"{self.kind} family does not support the {self.link!r} link")
        if self.dispersion_mode not in ("fixed_1", "pearson"):
            raise ValueError(f"unknown dispersion mode {self.dispersion_mode!r}")

    @property
    def name(self) -> str:
        return "poisson" if self.kind == "poisson" else f"binomial-{self.link}"

    def linkinv(self, eta):
        if self.link == "logit":
            return expit(eta)
        if self.link == "log":
            return np.exp(eta)
        return eta

    def linkfun(self, mu):
        if self.link == "logit":
            return np.log(mu / (1 - mu))
        if self.link == "log":
            return np.log(mu)
        return mu

    def mu_eta(self, mu):
        """d mu / d eta expressed through mu."""
        if self.link == "logit":
            return mu * (1 - mu)
        if self.link == "log":
            return mu
        return np.ones_like(mu)

    def variance(self, mu):
        if self.kind == "binomial":
            return mu * (1 - mu)
        return mu

    def feasible(self, mu) -> bool:
        if self.kind == "binomial":
            return bool(np.all((mu >= 0) & (mu <= 1)))
        return bool(np.all(mu >= 0))


def family_from_name(name: str, dispersion: str = "fixed") -> Family:
    mode = {"fixed": "fixed_1", "fixed_1": "fixed_1", "pearson": "pearson"}[dispersion]
    kind, _, link = name.partition("-")
    if kind == "poisson":
        return Family("poisson", link or "log", mode)
    return Family(kind, link or "logit", mode)


@dataclass(frozen=True)
class GlmFit:
    coef: NDArray[np.float64]
    cov_unscaled: NDArray[np.float64]
    influence_contributions: NDArray[np.float64]
    deviance: float
    pearson_dispersion: float
    converged: bool
    iterations: int
    family: Family
    X: NDArray[np.float64]
    y: NDArray[np.float64]
    trials: NDArray[np.float64]
    prior_weights: NDArray[np.float64]
    mu: NDArray[np.float64]
    leverage: NDArray[np.float64]

    @property
    def df_residual(self) -> int:
        return self.X.shape[0] - self.X.shape[1]

    @property
    def dispersion(self) -> float:
        """Scale applied to the model-based covariance."""
        return self.pearson_dispersion if self.family.dispersion_mode == "pearson" else 1.0


def add1_correction(successes: ArrayLike, trials: ArrayLike) -> tuple[NDArray, NDArray]:
    """One pseudo-success and one pseudo-failure per group."""
    y = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    if np.any(y < 0) or np.any(y > n):
        raise ValueError("successes must lie in [0, trials]")
    return y + 1, n + 2


def _deviance(family: Family, y, m, w, mu) -> float:
    mu = np.clip(mu, MU_EPS, None if family.kind == "poisson" else 1 - MU_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        if family.kind == "binomial":
            p = y / m
            a = np.where(p > 0, p * np.log(p / mu), 0.0)
            b = np.where(p < 1, (1 - p) * np.log((1 - p) / (1 - mu)), 0.0)
            d = 2 * w * m * (a + b)
        else:
            d = 2 * w * (np.where(y > 0, y * np.log(y / mu), 0.0) - (y - mu))
    return float(np.sum(d))


def _working_quantities(family: Family, y, m, w, mu):
    """IRLS working weights and the per-unit score multiplier.

    With ``mu`` the mean per trial, unit ``i`` contributes
    ``w_i m_i (ybar_i - mu_i) mu_eta_i / V_i * x_i`` to the score.
    """
    ybar = y / m
    mu_c = np.clip(mu, MU_EPS, None if family.kind == "poisson" else 1 - MU_EPS)
    var = family.variance(mu_c)
    deta = family.mu_eta(mu_c)
    weights = w * m * deta**2 / var
    score_mult = w * m * (ybar - mu) * deta / var
    z_offset = (ybar - mu) / deta
    return weights, score_mult, z_offset


def _wls(X, z, weights):
    sw = np.sqrt(weights)
    Q, R = np.linalg.qr(X * sw[:, None])
    return np.linalg.solve(R, Q.T @ (z * sw))


def irls_fit(
    X: ArrayLike,
    y: ArrayLike,
    family: Family,
    trials: ArrayLike | None = None,
    prior_weights: ArrayLike | None = None,
    max_iter: int = 50,
    tol: float = 1e-9,
    max_halving: int = 20,
) -> GlmFit:
    """Maximum (quasi-)likelihood fit by iteratively reweighted least squares.

    ``y`` holds successes (binomial, with ``trials``) or counts (poisson).
    Identity-link iterates that leave ``[0, 1]`` are pulled back by
    step-halving.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.size != n:
        raise ValueError(f"X has {n} rows but y has {y.size} entries")
    if family.kind == "binomial":
        if trials is None:
            raise ValueError("binomial fits need the number of trials per unit")
        m = np.asarray(trials, dtype=float).ravel()
        if np.any(m <= 0) or np.any(y < 0) or np.any(y > m):
            raise ValueError("binomial responses must satisfy 0 <= y <= trials, trials > 0")
    else:
        m = np.ones(n)
        if np.any(y < 0):
            raise ValueError("poisson responses must be non-negative")
    w = np.ones(n) if prior_weights is None else np.asarray(prior_weights, dtype=float).ravel()
    if np.any(w < 0):
        raise ValueError("prior weights must be non-negative")
    check_rank(X)

    if family.kind == "binomial":
        mu0 = (y + 0.5) / (m + 1)
    else:
        mu0 = y + 0.5
    eta0 = family.linkfun(mu0)
    weights, _, z_off = _working_quantities(family, y, m, w, mu0)
    beta = _wls(X, eta0 + z_off, weights)
    mu = family.linkinv(X @ beta)
    if not family.feasible(mu):
        # fall back to the constant-mean fit, feasible whenever X spans the intercept
        pbar = np.clip(np.sum(w * y) / np.sum(w * m), MU_EPS, 1 - MU_EPS if family.kind == "binomial" else None)
        beta = np.linalg.lstsq(X, np.full(n, family.linkfun(pbar)), rcond=None)[0]
        mu = family.linkinv(X @ beta)
        if not family.feasible(mu):
            raise ConvergenceError("no feasible starting value for the identity link", beta, 0)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        weights, _, z_off = _working_quantities(family, y, m, w, mu)
        new = _wls(X, X @ beta + z_off, weights)
        mu_new = family.linkinv(X @ new)
        halvings = 0
        while not family.feasible(mu_new) or not np.all(np.isfinite(mu_new)):
            halvings += 1
            if halvings > max_halving:
                raise ConvergenceError(
                    f"step-halving failed {max_halving} times: fitted means leave the valid range",
                    beta,
                    it,
                )
            new = (beta + new) / 2
            mu_new = family.linkinv(X @ new)
        delta = np.max(np.abs(new - beta) / np.maximum(np.abs(new), 1.0))
        beta, mu = new, mu_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", beta, it)

    weights, score_mult, _ = _working_quantities(family, y, m, w, mu)
    sw = np.sqrt(weights)
    Q, R = np.linalg.qr(X * sw[:, None])
    r_inv = np.linalg.solve(R, np.eye(p))
    cov_unscaled = r_inv @ r_inv.T
    cov_unscaled = (cov_unscaled + cov_unscaled.T) / 2
    infl = (X * score_mult[:, None]) @ cov_unscaled

    fit = GlmFit(
        coef=beta,
        cov_unscaled=cov_unscaled,
        influence_contributions=infl,
        deviance=_deviance(family, y, m, w, mu),
        pearson_dispersion=np.nan,
        converged=True,
        iterations=it,
        family=family,
        X=X,
        y=y,
        trials=m,
        prior_weights=w,
        mu=mu,
        leverage=np.einsum("ij,ij->i", Q, Q),
    )
    phi = pearson_dispersion(fit, strict=family.dispersion_mode == "pearson")
    return replace(fit, pearson_dispersion=phi)


def pearson_dispersion(fit: GlmFit, strict: bool = True) -> float:
    """Pearson chi-square over residual degrees of freedom.

    Fitted means with zero variance raise :class:`DegenerateModelError`
    when ``strict``; otherwise the dispersion is reported as ``nan``.
    """
    df = fit.df_residual
    if df < 1:
        if strict:
            raise DegenerateModelError("Pearson dispersion needs at least one residual degree of freedom")
        return np.nan
    fam = fit.family
    m = fit.trials
    var = fam.variance(fit.mu)
    if np.any(var <= 0):
        if strict:
            raise DegenerateModelError("fitted means with zero variance; Pearson dispersion is undefined")
        return np.nan
    chi2 = np.sum(fit.prior_weights * m * (fit.y / m - fit.mu) ** 2 / var)
    phi = float(chi2 / df)
    if phi <= 1e-14 and strict:
        warnings.warn("Pearson dispersion is zero: the model reproduces the data exactly", RuntimeWarning, stacklevel=2)
    return phi


def glm_covariance(fit: GlmFit, flavor: str = "classic") -> NDArray[np.float64]:
    """Model-based (``classic``, scaled by the dispersion) or sandwich covariance."""
    if flavor == "classic":
        return fit.dispersion * fit.cov_unscaled
    psi = glm_influence(fit, flavor)
    return psi.T @ psi


def glm_influence(fit: GlmFit, flavor: str = "hc0") -> NDArray[np.float64]:
    if flavor in ("classic", "hc0"):
        return fit.influence_contributions
    if flavor == "hc3":
        one_minus_h = 1.0 - fit.leverage
        if np.any(one_minus_h <= 1e-12):
            raise DegenerateLeverageError("a unit has leverage 1; hc3 is undefined")
        return fit.influence_contributions / one_minus_h[:, None]
    raise ValueError(f"unknown covariance flavor {flavor!r}")
