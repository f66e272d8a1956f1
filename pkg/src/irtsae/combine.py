"""Domain means of plausible values pooled with multiple-imputation rules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDomain, SingletonDomain, TooFewImputations, ValidationError
from .irt import PlausibleValueSet


@dataclass(frozen=True)
class AreaEstimate:
    """Pooled direct estimate for one domain.

    ``sigma2_d`` always equals ``within + (1 + 1/L) * between``.
    """

    domain: object
    gamma_hat: float
    sigma2_d: float
    within: float
    between: float
    L: int
    n_d: int = 0


def srs_variance(values, weights, N_d=None):
    """Variance of a domain mean under simple random sampling without replacement.

    ``(1 - f) s^2 / n`` with ``f = n / N_d``; ``N_d=None`` means an infinite
    population. Weights are ignored because SRS weights are constant.
    """
    n = values.size
    f = 0.0 if N_d is None else n / N_d
    return (1.0 - f) * np.var(values, ddof=1) / n


def linearized_variance(values, weights, N_d=None):
    """Taylor-linearised variance of the weight-normalised mean.

    Suitable for unequal weights; reduces to :func:`srs_variance` (up to the
    finite population correction) when all weights are equal.
    """
    n = values.size
    w = weights / weights.sum()
    mean = w @ values
    f = 0.0 if N_d is None else n / N_d
    return (1.0 - f) * n / (n - 1) * np.sum(w**2 * (values - mean) ** 2)


def _domain_rows(domain_of, domain):
    rows = np.flatnonzero(domain_of == domain)
    if rows.size == 0:
        raise EmptyDomain(f"domain {domain!r} has no sampled persons")
    if rows.size == 1:
        raise SingletonDomain(f"domain {domain!r} has a single sampled person")
    return rows


def domain_pv_mean(pvs: PlausibleValueSet, weights, domain, ell: int, *, variance=srs_variance, N_d=None):
    """Weight-normalised mean of one plausible value column within a domain.

    Parameters
    ----------
    pvs : PlausibleValueSet
    weights : array_like or None
        Positive design weights, one per person; ``None`` gives equal weights.
    domain : label
        Compared against ``pvs.domain_of``.
    ell : int
        Column of ``pvs.draws`` (0-based).
    variance : callable
        ``variance(values, weights, N_d)`` returning the design variance of
        the mean.
    N_d : int, optional
        Domain population size for the finite population correction.

    Returns
    -------
    (mean, variance) : tuple of float
    """
    rows = _domain_rows(pvs.domain_of, domain)
    w = np.ones(pvs.draws.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w[rows]
    if np.any(~(w > 0)):
        raise ValidationError("design weights must be positive")
    y = pvs.draws[rows, ell]
    mean = float(w @ y / w.sum())
    return mean, float(variance(y, w, N_d))


def rubin_combine(per_imputation, domain=None, n_d: int = 0) -> AreaEstimate:
    """Pool ``(estimate, variance)`` pairs from L imputations."""
    arr = np.asarray(per_imputation, dtype=float).reshape(-1, 2)
    L = arr.shape[0]
    if L < 2:
        raise TooFewImputations(f"need at least 2 imputations, got {L}")
    points, variances = arr[:, 0], arr[:, 1]
    gamma = float(np.mean(points))
    within = float(np.mean(variances))
    between = float(np.sum((points - gamma) ** 2) / (L - 1))
    return AreaEstimate(domain, gamma, within + (1 + 1 / L) * between, within, between, L, n_d)


def combine_domains(pvs: PlausibleValueSet, weights=None, *, domains=None, N_sizes=None, variance=srs_variance):
    """Direct estimate and pooled variance for every domain in ``pvs``.

    ``N_sizes`` maps a domain label to its population size when known.
    """
    if domains is None:
        domains = np.unique(pvs.domain_of)
    out = []
    for d in domains:
        N_d = None if N_sizes is None else N_sizes[d]
        per = [domain_pv_mean(pvs, weights, d, ell, variance=variance, N_d=N_d) for ell in range(pvs.L)]
        out.append(rubin_combine(per, domain=d, n_d=int(np.sum(pvs.domain_of == d))))
    return out
