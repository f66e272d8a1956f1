"""Design-based domain estimators under simple random sampling within domains."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingletonDomain, SingularAux, ValidationError


@dataclass
class SampleDomain:
    """Sampled values of one domain plus what is known about its population.

    ``values`` may be a matrix whose columns are separate variables measured
    on the same sample (for instance one column per plausible value); the
    estimators then return one result per column. ``weights`` default to
    ``N_d / n_d``. ``aux_totals`` are population totals of the columns of
    ``aux_sample``.
    """

    values: np.ndarray
    N_d: float = None
    weights: np.ndarray = None
    aux_sample: np.ndarray = None
    aux_totals: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (1, 2):
            raise ValidationError("values must be a vector or a units x variables matrix")
        n = self.values.shape[0]
        if self.N_d is not None and n > self.N_d:
            raise ValidationError(f"sample size {n} exceeds population size {self.N_d}")
        if self.weights is None:
            self.weights = np.full(n, (self.N_d if self.N_d is not None else n) / max(n, 1))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != n or np.any(~(self.weights > 0)):
            raise ValidationError("need one positive weight per sampled unit")
        if self.aux_sample is not None:
            self.aux_sample = np.asarray(self.aux_sample, dtype=float).reshape(n, -1)
            self.aux_totals = np.asarray(self.aux_totals, dtype=float).ravel()
            if self.aux_totals.size != self.aux_sample.shape[1]:
                raise ValidationError("aux_totals must have one entry per auxiliary column")

    @property
    def n_d(self) -> int:
        return self.values.shape[0]

    @property
    def sampling_fraction(self) -> float:
        return 0.0 if self.N_d is None else self.n_d / self.N_d

    @property
    def aux_means(self) -> np.ndarray:
        if self.N_d is None:
            raise ValidationError("population auxiliary means need N_d")
        return self.aux_totals / self.N_d


def _out(x):
    return float(x) if np.ndim(x) == 0 else np.asarray(x)


def _require_pair(dom):
    if dom.n_d < 2:
        raise SingletonDomain("variance needs at least two sampled units")


def ht_mean(dom: SampleDomain):
    """Weighted domain mean and its variance ``(1 - f) s^2 / n``."""
    _require_pair(dom)
    w, y = dom.weights, dom.values
    est = w @ y / (dom.N_d if dom.N_d is not None else w.sum())
    var = (1 - dom.sampling_fraction) * np.var(y, ddof=1, axis=0) / dom.n_d
    return _out(est), _out(var)


def greg_mean(dom: SampleDomain):
    """Generalised regression estimator calibrated to known auxiliary means.

    The working model regresses values on an intercept and the auxiliary
    columns with the design weights. The variance uses the model residuals
    in place of the raw values.
    """
    _require_pair(dom)
    if dom.aux_sample is None:
        raise ValidationError("GREG needs auxiliary data")
    y, w = dom.values, dom.weights
    Z = np.column_stack([np.ones(dom.n_d), dom.aux_sample])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise SingularAux("auxiliary columns are collinear with the intercept or each other")
    wZ = w[:, None] * Z
    coef = np.linalg.solve(Z.T @ wZ, wZ.T @ y)
    resid = y - Z @ coef
    wn = w / w.sum()
    est = wn @ y + (dom.aux_means - wn @ dom.aux_sample) @ coef[1:]
    var = (1 - dom.sampling_fraction) * np.sum(resid**2, axis=0) / (dom.n_d - 1) / dom.n_d
    return _out(est), _out(var)


def composite_mean(dom: SampleDomain, synthetic: float, n_bar: float):
    """Sample-size weighted blend of the direct mean and a synthetic value.

    The direct part gets weight ``n_d / (n_d + n_bar)``; the synthetic value
    is treated as fixed in the variance.
    """
    if dom.n_d < 1:
        raise ValidationError("composite needs at least one sampled unit")
    phi = dom.n_d / (dom.n_d + n_bar)
    if dom.n_d == 1:
        return _out(phi * dom.values[0] + (1 - phi) * synthetic), _out(np.full(np.shape(dom.values[0]), np.nan))
    direct, var = ht_mean(dom)
    return _out(phi * direct + (1 - phi) * np.asarray(synthetic)), _out(phi**2 * var)


def synthetic_ols(direct, X):
    """Least-squares regression of direct estimates on area covariates.

    Returns the coefficients; evaluate ``X_new @ coef`` for any area.
    """
    X = np.asarray(X, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularAux("area covariates are rank deficient")
    coef, *_ = np.linalg.lstsq(X, np.asarray(direct, dtype=float), rcond=None)
    return coef
