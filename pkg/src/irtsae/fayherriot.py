"""Area-level linear mixed model with known sampling variances.

Fits ``y_d = x_d' beta + u_d + e_d`` with ``u_d ~ N(0, s2u)`` and
``e_d ~ N(0, sigma2_d)``, predicts the area means by empirical best linear
unbiased prediction and estimates their mean squared error with the
second-order ``g1 + g2 + 2 g3`` approximation.

Nothing here forms a D x D matrix, so large numbers of areas are cheap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    MethodMismatch,
    NonConvergence,
    RankError,
    SingularDesign,
    ValidationError,
    ZeroEstimate,
)

METHODS = ("prasad-rao", "ml", "reml")
_ALIASES = {"pr": "prasad-rao", "prasadrao": "prasad-rao", "prasad_rao": "prasad-rao"}


def normalize_method(method: str) -> str:
    key = str(method).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in METHODS:
        raise ValidationError(f"unknown variance method {method!r}; choose from {METHODS}")
    return key


@dataclass
class AreaDesign:
    """Area covariates (intercept included), direct estimates and their variances."""

    X: np.ndarray
    gamma_hat: np.ndarray
    sigma2: np.ndarray
    domain_ids: np.ndarray = None

    def __post_init__(self):
        self.gamma_hat = np.asarray(self.gamma_hat, dtype=float).ravel()
        self.sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        self.X = X.reshape(-1, 1) if X.ndim == 1 else X
        D, p = self.X.shape
        if self.gamma_hat.size != D or self.sigma2.size != D:
            raise ValidationError("X, gamma_hat and sigma2 must describe the same areas")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.gamma_hat)) and np.all(np.isfinite(self.sigma2))):
            raise ValidationError("area data must be finite")
        if np.any(self.sigma2 <= 0):
            raise ValidationError("sampling variances must be positive")
        if D <= p:
            raise ValidationError(f"need more areas than covariates (D={D}, p={p})")
        if np.linalg.matrix_rank(self.X) < p:
            raise RankError("area covariate matrix is rank deficient")
        if self.domain_ids is None:
            self.domain_ids = np.arange(1, D + 1)
        self.domain_ids = np.asarray(self.domain_ids)

    @property
    def D(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _solve_gls(X, y, v):
    """GLS coefficients and the inverse of ``X' V^-1 X`` for diagonal ``V = diag(v)``."""
    A = X.T @ (X / v[:, None])
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("X' V^-1 X is singular") from exc
    if np.linalg.cond(A) > 1e14:
        raise SingularDesign("X' V^-1 X is numerically singular")
    return A_inv @ (X.T @ (y / v)), A_inv


def gls_beta(design: AreaDesign, sigma2_u: float) -> np.ndarray:
    """Generalised least squares regression coefficients at a given ``sigma2_u``."""
    if sigma2_u < 0:
        raise ValidationError("sigma2_u must be nonnegative")
    beta, _ = _solve_gls(design.X, design.gamma_hat, sigma2_u + design.sigma2)
    return beta


def _prasad_rao(design: AreaDesign) -> float:
    X, y, s2 = design.X, design.gamma_hat, design.sigma2
    D, p = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    # diagonal of the OLS hat matrix
    lev = np.einsum("ij,jk,ik->i", X, np.linalg.inv(X.T @ X), X)
    return max(0.0, float((resid @ resid - np.sum(s2 * (1 - lev))) / (D - p)))


def _score_info(design: AreaDesign, s2u: float, method: str):
    X, y = design.X, design.gamma_hat
    v = s2u + design.sigma2
    beta, A_inv = _solve_gls(X, y, v)
    r = y - X @ beta
    if method == "ml":
        score = -0.5 * np.sum(1 / v) + 0.5 * np.sum(r**2 / v**2)
        info = 0.5 * np.sum(1 / v**2)
        return score, info
    # restricted likelihood; P = V^-1 - V^-1 X A^-1 X' V^-1 handled through traces
    M2 = A_inv @ (X.T @ (X / v[:, None] ** 2))
    M3 = A_inv @ (X.T @ (X / v[:, None] ** 3))
    tr_P = np.sum(1 / v) - np.trace(M2)
    tr_P2 = np.sum(1 / v**2) - 2 * np.trace(M3) + np.trace(M2 @ M2)
    Py = r / v
    return -0.5 * tr_P + 0.5 * Py @ Py, 0.5 * tr_P2


def _var_sigma2_u(design: AreaDesign, s2u: float, method: str) -> float:
    D, s2 = design.D, design.sigma2
    if method == "prasad-rao":
        return 2.0 / D * (s2u**2 + 2 * s2u / D * np.sum(s2) + np.sum(s2**2) / D)
    return 2.0 / np.sum((s2u + s2) ** -2)


def estimate_sigma2_u(design: AreaDesign, method: str = "reml", *, tol: float = 1e-8, max_iter: int = 100):
    """Estimate the between-area variance and its asymptotic variance.

    Prasad-Rao is the OLS-residual moment estimator. ML and REML use Fisher
    scoring started from the moment estimate, safeguarded by bisection on a
    bracket of the score's sign change; iterates are kept nonnegative.

    Returns
    -------
    (sigma2_u, var_sigma2_u) : tuple of float
    """
    method = normalize_method(method)
    if design.D < design.p + 2:
        raise ValidationError(f"variance component unidentified with D={design.D}, p={design.p}")
    s2u = _prasad_rao(design)
    if method != "prasad-rao":
        scale = max(1.0, float(np.mean(design.sigma2)))
        # Fisher steps are kept only while they stay inside the bracket of the
        # score's sign change and keep shrinking; otherwise bisect
        lo, hi = 0.0, np.inf
        prev_step = np.inf
        for _ in range(max_iter):
            score, info = _score_info(design, s2u, method)
            if score > 0:
                lo = s2u
            else:
                hi = s2u
                if s2u == 0.0:
                    break
            step = score / info
            new = s2u + step
            if not lo < new < hi or (np.isfinite(hi) and 2 * abs(step) > abs(prev_step)):
                new = 0.5 * (lo + hi)
            moved = new - s2u
            prev_step = moved
            s2u = max(0.0, new)
            if abs(moved) < tol * max(scale, s2u) or hi - lo < tol * max(scale, s2u):
                break
        else:
            raise NonConvergence(f"Fisher scoring did not converge in {max_iter} iterations")
    return float(s2u), float(_var_sigma2_u(design, s2u, method))


def restricted_loglik(design: AreaDesign, sigma2_u: float) -> float:
    """Restricted log-likelihood profiled over the regression coefficients (up to a constant)."""
    X, y = design.X, design.gamma_hat
    v = sigma2_u + design.sigma2
    beta, A_inv = _solve_gls(X, y, v)
    r = y - X @ beta
    _, logdet_A = np.linalg.slogdet(np.linalg.inv(A_inv))
    return float(-0.5 * (np.sum(np.log(v)) + logdet_A + np.sum(r**2 / v)))


def profile_loglik(design: AreaDesign, sigma2_u: float) -> float:
    """Log-likelihood maximised over the regression coefficients (up to a constant)."""
    v = sigma2_u + design.sigma2
    r = design.gamma_hat - design.X @ gls_beta(design, sigma2_u)
    return float(-0.5 * (np.sum(np.log(v)) + np.sum(r**2 / v)))


def eblup(design: AreaDesign, beta, sigma2_u: float):
    """Shrink direct estimates toward the regression fit.

    Returns
    -------
    (eblup, B, u_hat) : tuple of ndarray
        ``B`` is the weight placed on the regression fit.
    """
    synth = design.X @ np.asarray(beta, dtype=float)
    B = design.sigma2 / (sigma2_u + design.sigma2)
    u_hat = (1 - B) * (design.gamma_hat - synth)
    return (1 - B) * design.gamma_hat + B * synth, B, u_hat


@dataclass
class MSEComponents:
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    method: str


@dataclass
class FHFit:
    beta: np.ndarray
    sigma2_u: float
    method: str
    B: np.ndarray
    u_hat: np.ndarray
    eblup: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    mse: np.ndarray
    var_sigma2_u: float

    @property
    def components(self) -> MSEComponents:
        return MSEComponents(self.g1, self.g2, self.g3, self.method)


def g3_reml_closed_form(design: AreaDesign, sigma2_u: float) -> np.ndarray:
    """Likelihood-based ``g3`` written through the shrinkage factors.

    Algebraically equal to ``sigma2_d^2 / V_d^3 * 2 / sum(V^-2)``.
    """
    v = sigma2_u + design.sigma2
    B = design.sigma2 / v
    return (1 / v) * 2 * B**2 / np.sum(v**-2.0)


def mse_components(design: AreaDesign, sigma2_u: float, method: str, var_sigma2_u: float = None) -> MSEComponents:
    """Leading term, regression-estimation term and variance-estimation term.

    ``var_sigma2_u`` defaults to the method's asymptotic formula at ``sigma2_u``.
    """
    method = normalize_method(method)
    if var_sigma2_u is None:
        var_sigma2_u = _var_sigma2_u(design, sigma2_u, method)
    s2, X = design.sigma2, design.X
    v = sigma2_u + s2
    B = s2 / v
    g1 = s2 * (1 - B)
    F = X.T @ (X / v[:, None])
    g2 = B**2 * np.einsum("ij,jk,ik->i", X, np.linalg.inv(F), X)
    g3 = s2**2 / v**3 * var_sigma2_u
    return MSEComponents(g1, g2, g3, method)


def ml_bias_correction(design: AreaDesign, sigma2_u: float) -> np.ndarray:
    """The term ``b * grad g1`` removed from the ML mean squared error.

    ``b`` is the first-order bias of the ML variance estimate.
    """
    X, s2 = design.X, design.sigma2
    v = sigma2_u + s2
    A1 = X.T @ (X / v[:, None])
    A2 = X.T @ (X / v[:, None] ** 2)
    b = -np.trace(np.linalg.solve(A1, A2)) / np.sum(v**-2.0)
    return b * s2**2 / v**2


def mse_total(components: MSEComponents, method: str = None, design: AreaDesign = None, sigma2_u: float = None):
    """Combine the components into the mean squared error estimate.

    ``g1 + g2 + 2 g3`` for the moment and REML estimators; the ML version
    also subtracts the bias term of :func:`ml_bias_correction`, which needs
    ``design`` and ``sigma2_u``.
    """
    method = components.method if method is None else normalize_method(method)
    if method != components.method:
        raise MethodMismatch(f"components were computed for {components.method}, not {method}")
    mse = components.g1 + components.g2 + 2 * components.g3
    if method == "ml":
        if design is None or sigma2_u is None:
            raise ValidationError("the ML estimate needs the design and sigma2_u")
        mse = mse - ml_bias_correction(design, sigma2_u)
    return mse


def fit_fay_herriot(design: AreaDesign, method: str = "reml", *, sigma2_u: float = None, var_sigma2_u: float = None) -> FHFit:
    """Estimate the variance component, predict area means and estimate their MSE.

    Passing ``sigma2_u`` skips estimation and evaluates everything at that value.
    """
    method = normalize_method(method)
    if sigma2_u is None:
        sigma2_u, var_est = estimate_sigma2_u(design, method)
        var_sigma2_u = var_est if var_sigma2_u is None else var_sigma2_u
    elif var_sigma2_u is None:
        var_sigma2_u = _var_sigma2_u(design, sigma2_u, method)
    beta = gls_beta(design, sigma2_u)
    est, B, u_hat = eblup(design, beta, sigma2_u)
    comp = mse_components(design, sigma2_u, method, var_sigma2_u)
    mse = mse_total(comp, method, design, sigma2_u)
    return FHFit(beta, float(sigma2_u), method, B, u_hat, est, comp.g1, comp.g2, comp.g3, mse, float(var_sigma2_u))


def quality_measures(estimate, mse, sigma2):
    """Relative standard error and relative variance reduction, both in percent.

    Returns
    -------
    (eer_pct, dif_rel_pct) : tuple of ndarray
    """
    estimate = np.asarray(estimate, dtype=float)
    mse = np.asarray(mse, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(estimate == 0):
        raise ZeroEstimate("relative error undefined for a zero estimate")
    return np.sqrt(mse) / estimate * 100, (sigma2 - mse) / sigma2 * 100


def fit_quality(fit: FHFit, design: AreaDesign):
    return quality_measures(fit.eblup, fit.mse, design.sigma2)
