"""Ordinary least squares with classical and sandwich covariances.

Solving goes through a QR factorization; doses spanning several orders of
magnitude make ``X'X`` badly conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateLeverageError, SingularDesignError

__all__ = ["LinearFit", "ols_fit", "covariance", "influence_contributions", "FLAVORS"]

FLAVORS = ("classic", "hc0", "hc3")
RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearFit:
    coef: NDArray[np.float64]
    residuals: NDArray[np.float64]
    df_residual: int
    xtx_inv: NDArray[np.float64]
    sigma2: float
    X: NDArray[np.float64]
    y: NDArray[np.float64]
    leverage: NDArray[np.float64]

    @property
    def fitted(self) -> NDArray[np.float64]:
        return self.y - self.residuals

    @property
    def nobs(self) -> int:
        return self.y.size


def _offending_column(X: NDArray, names: Sequence[str] | None) -> int | str:
    """First column that does not raise the rank of the preceding ones."""
    for j in range(1, X.shape[1] + 1):
        s = np.linalg.svd(X[:, :j], compute_uv=False)
        if s[-1] <= RANK_TOL * s[0] or s[0] == 0:
            return names[j - 1] if names else j - 1
    return names[-1] if names else X.shape[1] - 1


def check_rank(X: NDArray, names: Sequence[str] | None = None) -> None:
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] <= RANK_TOL * s[0]:
        col = _offending_column(X, names)
        raise SingularDesignError(f"design matrix is rank deficient at column {col!r}", column=col)


def ols_fit(X: ArrayLike, y: ArrayLike, column_names: Sequence[str] | None = None) -> LinearFit:
    """Least-squares fit of ``y`` on the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.size != n:
        raise ValueError(f"X has {n} rows but y has {y.size} entries")
    if n <= p:
        raise SingularDesignError(f"need more observations ({n}) than parameters ({p})")
    check_rank(X, column_names)

    Q, R = np.linalg.qr(X)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    r_inv = np.linalg.solve(R, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    xtx_inv = (xtx_inv + xtx_inv.T) / 2
    df = n - p
    return LinearFit(
        coef=coef,
        residuals=resid,
        df_residual=df,
        xtx_inv=xtx_inv,
        sigma2=float(resid @ resid / df),
        X=X,
        y=y,
        leverage=np.einsum("ij,ij->i", Q, Q),
    )


def _scaled_residuals(fit: LinearFit, flavor: str) -> NDArray:
    if flavor in ("classic", "hc0"):
        return fit.residuals
    if flavor == "hc3":
        one_minus_h = 1.0 - fit.leverage
        if np.any(one_minus_h <= 1e-12):
            i = int(np.argmin(one_minus_h))
            raise DegenerateLeverageError(f"unit {i} has leverage 1; hc3 is undefined")
        return fit.residuals / one_minus_h
    raise ValueError(f"unknown covariance flavor {flavor!r}; choose from {FLAVORS}")


def influence_contributions(fit: LinearFit, flavor: str = "hc0") -> NDArray[np.float64]:
    """Per-unit influence of each observation on the coefficients.

    Row ``i`` is ``(X'X)^-1 x_i e_i`` (with ``e_i`` leverage-inflated for
    hc3), so the cross-product of the rows is the sandwich covariance.
    ``classic`` returns the hc0 contributions.
    """
    e = _scaled_residuals(fit, flavor)
    return (fit.X * e[:, None]) @ fit.xtx_inv


def covariance(fit: LinearFit, flavor: str = "classic") -> NDArray[np.float64]:
    if flavor == "classic":
        return fit.sigma2 * fit.xtx_inv
    psi = influence_contributions(fit, flavor)
    return psi.T @ psi
