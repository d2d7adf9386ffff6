"""Joint inference over several models fitted to the same units.

Each marginal model contributes one scalar parameter together with its
per-unit influence vector.  The empirical cross-product of these vectors
estimates the joint covariance of all parameters, whatever mix of linear
and generalized linear models they come from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import AlignmentError, DegenerateModelError

__all__ = [
    "MarginalModel",
    "MarginalSet",
    "marginal_from_fit",
    "joint_correlation",
    "combine",
    "repair_correlation",
]

PSD_FLOOR = -1e-8


@dataclass(frozen=True)
class MarginalModel:
    label: str
    estimate: float
    variance: float
    influence: NDArray[np.float64]
    df: float = np.inf

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise DegenerateModelError(f"model {self.label!r} has non-positive variance", self.label)
        infl = np.asarray(self.influence, dtype=float).ravel()
        infl.setflags(write=False)
        object.__setattr__(self, "influence", infl)

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance))


def marginal_from_fit(
    label: str,
    coef: ArrayLike,
    cov: ArrayLike,
    influence: ArrayLike,
    weights: ArrayLike,
    df: float = np.inf,
) -> MarginalModel:
    """Project a fitted model onto the linear combination ``weights @ coef``."""
    L = np.asarray(weights, dtype=float).ravel()
    return MarginalModel(
        label=label,
        estimate=float(L @ np.asarray(coef)),
        variance=float(L @ np.asarray(cov) @ L),
        influence=np.asarray(influence) @ L,
        df=df,
    )


@dataclass(frozen=True)
class MarginalSet:
    models: tuple[MarginalModel, ...]
    unit_ids: tuple = field(default=())
    name: str = ""

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ValueError("a marginal set needs at least one model")
        n = models[0].influence.size
        ids = tuple(self.unit_ids) if len(self.unit_ids) else tuple(range(n))
        if len(ids) != n:
            raise AlignmentError(f"{len(ids)} unit ids for influence vectors of length {n}")
        for m in models:
            if m.influence.size != n:
                raise AlignmentError(
                    f"model {m.label!r} has {m.influence.size} influence entries, expected {n}"
                )
        labels = [m.label for m in models]
        if len(set(labels)) != len(labels):
            dup = next(lab for lab in labels if labels.count(lab) > 1)
            raise ValueError(f"duplicate model label {dup!r}")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "unit_ids", ids)

    def __len__(self) -> int:
        return len(self.models)

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.models]

    @property
    def estimates(self) -> NDArray[np.float64]:
        return np.array([m.estimate for m in self.models])

    @property
    def std_errors(self) -> NDArray[np.float64]:
        return np.array([m.std_error for m in self.models])

    @property
    def influence_matrix(self) -> NDArray[np.float64]:
        """``n x q`` matrix with one influence column per model."""
        return np.column_stack([m.influence for m in self.models])


def repair_correlation(R: NDArray, floor: float = PSD_FLOOR) -> NDArray:
    """Clip eigenvalues at zero and restore the unit diagonal.

    Eigenvalues below ``floor`` indicate a genuinely invalid matrix and raise.
    """
    R = (R + R.T) / 2
    vals, vecs = np.linalg.eigh(R)
    if vals.min() < floor:
        raise ValueError(f"correlation matrix has eigenvalue {vals.min():.3g} < {floor:g}")
    if vals.min() < 0:
        R = (vecs * np.clip(vals, 0, None)) @ vecs.T
        d = np.sqrt(np.diag(R))
        R = R / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


def joint_correlation(models: MarginalSet | Sequence[MarginalModel]) -> NDArray[np.float64]:
    """Correlation of the model parameters from their influence vectors."""
    ms = models.models if isinstance(models, MarginalSet) else tuple(models)
    psi = np.column_stack([m.influence for m in ms])
    norms = np.sqrt(np.sum(psi**2, axis=0))
    for m, nrm in zip(ms, norms):
        if nrm == 0 or not np.isfinite(nrm):
            raise DegenerateModelError(f"model {m.label!r} has an all-zero influence vector", m.label)
    R = (psi.T @ psi) / np.outer(norms, norms)
    R = np.clip(R, -1.0, 1.0)
    return repair_correlation(R)


def combine(sets: Sequence[MarginalSet], names: Sequence[str] | None = None) -> MarginalSet:
    """Concatenate several marginal sets into one max-T family.

    Labels are prefixed by the set name (``names`` or each set's own
    ``name``).  A single set is returned unchanged.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("nothing to combine")
    if len(sets) == 1:
        return sets[0]
    names = list(names) if names is not None else [s.name for s in sets]
    if len(names) != len(sets):
        raise ValueError("one name per set is required")
    n = len(sets[0].unit_ids)
    for s in sets[1:]:
        if len(s.unit_ids) != n:
            raise AlignmentError(f"unit counts differ: {n} vs {len(s.unit_ids)}")
        if s.unit_ids != sets[0].unit_ids:
            raise AlignmentError("marginal sets refer to different unit orderings")
    models = []
    for name, s in zip(names, sets):
        prefix = f"{name} " if name else ""
        for m in s.models:
            models.append(
                MarginalModel(prefix + m.label, m.estimate, m.variance, m.influence, m.df)
            )
    return MarginalSet(tuple(models), sets[0].unit_ids)
