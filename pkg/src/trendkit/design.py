"""Dose designs, contrast matrices and dose metameters.

Every trend test in the package is defined by one of two things: a row of
contrast coefficients over the group means (Williams, Dunnett) or a dose
score used as a regression covariate (arithmetic, ordinal, log-scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DesignError

__all__ = [
    "DoseDesign",
    "ContrastMatrix",
    "DoseMetameters",
    "williams_contrasts",
    "dunnett_contrasts",
    "combined_contrasts",
    "dose_metameters",
    "format_dose",
]

ROW_SUM_TOL = 1e-12
DUPLICATE_TOL = 1e-10


def format_dose(d: float) -> str:
    """Compact dose label: ``1000.0 -> '1000'``, ``62.5 -> '62.5'``."""
    return f"{d:g}"


@dataclass(frozen=True)
class DoseDesign:
    """Randomized one-way layout: ordered doses, group labels, group sizes.

    Index 0 is the control group.
    """

    doses: NDArray[np.float64]
    n: NDArray[np.int64]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        doses = np.asarray(self.doses, dtype=float).ravel()
        n = np.asarray(self.n).ravel()
        if doses.size < 2:
            raise DesignError("a dose design needs at least 2 groups (control + 1 dose)")
        if n.shape != doses.shape:
            raise DesignError(f"got {doses.size} doses but {n.size} group sizes")
        if not np.all(np.isfinite(doses)):
            raise DesignError("doses must be finite")
        if np.any(doses < 0):
            raise DesignError(f"negative dose in {doses.tolist()}")
        if np.any(np.diff(doses) <= 0):
            raise DesignError(f"doses must be strictly increasing, got {doses.tolist()}")
        if np.any(n < 1) or not np.allclose(n, np.round(n)):
            raise DesignError(f"group sizes must be positive integers, got {n.tolist()}")
        labels = tuple(self.labels) if self.labels else tuple(format_dose(d) for d in doses)
        if len(labels) != doses.size:
            raise DesignError("one label per group is required")
        object.__setattr__(self, "doses", doses)
        object.__setattr__(self, "n", np.round(n).astype(np.int64))
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_unit_doses(cls, dose: ArrayLike) -> "DoseDesign":
        """Build the design from one dose value per experimental unit."""
        dose = np.asarray(dose, dtype=float).ravel()
        levels, counts = np.unique(dose, return_counts=True)
        return cls(doses=levels, n=counts)

    @property
    def k(self) -> int:
        """Number of non-control groups."""
        return self.doses.size - 1

    def group_index(self, dose: ArrayLike) -> NDArray[np.int64]:
        """Map per-unit doses to group indices 0..k."""
        dose = np.asarray(dose, dtype=float).ravel()
        idx = np.searchsorted(self.doses, dose)
        idx = np.clip(idx, 0, self.k)
        if not np.allclose(self.doses[idx], dose, rtol=0, atol=1e-12 * max(1.0, self.doses[-1])):
            bad = dose[~np.isclose(self.doses[idx], dose)]
            raise DesignError(f"unit dose {bad[0]:g} is not one of the design doses")
        return idx


@dataclass(frozen=True)
class ContrastMatrix:
    """``q x (k+1)`` zero-sum contrast coefficients with one label per row."""

    coefficients: NDArray[np.float64]
    row_labels: tuple[str, ...]

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        labels = tuple(self.row_labels)
        if c.shape[0] < 1:
            raise DesignError("a contrast matrix needs at least one row")
        if len(labels) != c.shape[0]:
            raise DesignError(f"{c.shape[0]} contrast rows but {len(labels)} labels")
        sums = np.abs(c.sum(axis=1))
        if np.any(sums > ROW_SUM_TOL * np.maximum(1.0, np.abs(c).sum(axis=1))):
            i = int(np.argmax(sums))
            raise DesignError(f"contrast row {labels[i]!r} does not sum to zero")
        if np.any(np.all(c == 0, axis=1)):
            raise DesignError("contrast matrix contains an all-zero row")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "row_labels", labels)

    @property
    def q(self) -> int:
        return self.coefficients.shape[0]

    def __len__(self) -> int:
        return self.q


@dataclass(frozen=True)
class DoseMetameters:
    """Per-group dose scores used as regression covariates."""

    ari: NDArray[np.float64]
    ord: NDArray[np.float64]
    arilog: NDArray[np.float64]

    def get(self, name: str) -> NDArray[np.float64]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise DesignError(f"unknown dose scaling {name!r}") from None


def _check_k(design: DoseDesign) -> None:
    if not isinstance(design, DoseDesign):
        raise DesignError("expected a DoseDesign")
    if design.k < 1:
        raise DesignError("need at least one non-control group")


def williams_contrasts(design: DoseDesign) -> ContrastMatrix:
    """Williams-type contrasts: control versus the pooled ``m`` highest doses.

    Row ``m`` (``m = 1..k``) puts ``-1`` on the control and sample-size
    weights ``n_i / sum(n_top_m)`` on the ``m`` highest dose groups.
    """
    _check_k(design)
    k = design.k
    n = design.n.astype(float)
    rows, labels = [], []
    for m in range(1, k + 1):
        top = np.arange(k + 1 - m, k + 1)
        c = np.zeros(k + 1)
        c[0] = -1.0
        c[top] = n[top] / n[top].sum()
        rows.append(c)
        names = [design.labels[i] for i in top[::-1]]
        pooled = names[0] if m == 1 else "(" + "+".join(names) + f")/{m}"
        labels.append(f"{pooled}-{design.labels[0]}")
    return ContrastMatrix(np.array(rows), tuple(labels))


def dunnett_contrasts(design: DoseDesign) -> ContrastMatrix:
    """Many-to-one comparisons, highest dose first."""
    _check_k(design)
    k = design.k
    rows, labels = [], []
    for i in range(k, 0, -1):
        c = np.zeros(k + 1)
        c[0], c[i] = -1.0, 1.0
        rows.append(c)
        labels.append(f"{design.labels[i]}-{design.labels[0]}")
    return ContrastMatrix(np.array(rows), tuple(labels))


def _unit(row: NDArray) -> NDArray:
    return row / np.linalg.norm(row)


def combined_contrasts(design: DoseDesign) -> ContrastMatrix:
    """Dunnett rows followed by the Williams rows not already present."""
    dun = dunnett_contrasts(design)
    wil = williams_contrasts(design)
    rows = list(dun.coefficients)
    labels = list(dun.row_labels)
    for row, label in zip(wil.coefficients, wil.row_labels):
        u = _unit(row)
        if any(np.max(np.abs(u - _unit(r))) < DUPLICATE_TOL for r in rows):
            continue
        rows.append(row)
        labels.append(label)
    return ContrastMatrix(np.array(rows), tuple(labels))


def dose_metameters(design: DoseDesign) -> DoseMetameters:
    """Arithmetic, ordinal and log-scale dose scores.

    For the log scale a zero control dose is replaced by ``d1**2 / d2`` (one
    log-step below the lowest positive dose), or by ``d1 / 10`` when only one
    positive dose exists.
    """
    doses = np.asarray(design.doses, dtype=float)
    if np.any(doses < 0):
        raise DesignError("negative dose")
    ari = doses.copy()
    ordinal = np.arange(doses.size, dtype=float)
    logd = doses.copy()
    if doses[0] == 0.0:
        positive = doses[1:]
        if positive.size >= 2:
            logd[0] = positive[0] ** 2 / positive[1]
        else:
            logd[0] = positive[0] / 10.0
    return DoseMetameters(ari=ari, ord=ordinal, arilog=np.log(logd))
