"""Logistic item response model, Bock-Aitkin calibration and plausible values.

The calibration discretises the latent trait on a fixed Gauss-Hermite grid,
so EM runs on a finite mixture whose likelihood is exactly the quadrature
approximation being reported. That keeps the EM ascent property exact rather
than approximate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize
from scipy.special import expit, logit, logsumexp

from .errors import ConvergenceWarning, DegenerateItem, ValidationError

DEFAULT_SCALE = 1.7


@dataclass(frozen=True)
class ItemParams:
    """Parameters of one dichotomous item."""

    a: float
    b: float
    c: float = 0.0
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if not self.a > 0:
            raise ValidationError(f"discrimination must be positive, got {self.a}")
        if not 0 <= self.c < 1:
            raise ValidationError(f"guessing must lie in [0, 1), got {self.c}")
        if not self.scale > 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")


@dataclass
class ItemBank:
    """Vectorised collection of item parameters sharing one logistic scale."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray = None
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.c is None:
            self.c = np.zeros_like(self.a)
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), self.a.shape).copy()
        if self.a.shape != self.b.shape:
            raise ValidationError("a and b must have the same length")
        if np.any(~(self.a > 0)):
            raise ValidationError("all discriminations must be positive")
        if np.any((self.c < 0) | (self.c >= 1)):
            raise ValidationError("guessing parameters must lie in [0, 1)")
        if not self.scale > 0:
            raise ValidationError("scale must be positive")

    @property
    def n_items(self) -> int:
        return self.a.size

    def item(self, i: int) -> ItemParams:
        return ItemParams(float(self.a[i]), float(self.b[i]), float(self.c[i]), self.scale)

    @classmethod
    def from_items(cls, items):
        items = list(items)
        scales = {it.scale for it in items}
        if len(scales) != 1:
            raise ValidationError("items in a bank must share one scale constant")
        return cls(
            a=[it.a for it in items],
            b=[it.b for it in items],
            c=[it.c for it in items],
            scale=scales.pop(),
        )

    def prob(self, theta) -> np.ndarray:
        """Success probabilities, shape ``theta.shape + (n_items,)``."""
        theta = np.asarray(theta, dtype=float)[..., None]
        return self.c + (1 - self.c) * expit(self.scale * self.a * (theta - self.b))

    def log_prob(self, theta):
        """Return ``(log P, log(1 - P))`` computed without cancellation."""
        theta = np.asarray(theta, dtype=float)[..., None]
        z = self.scale * self.a * (theta - self.b)
        with np.errstate(divide="ignore"):
            log_c = np.log(self.c)
        log1m_c = np.log1p(-self.c)
        log_p = np.logaddexp(log_c, log1m_c - np.logaddexp(0.0, -z))
        log_q = log1m_c - np.logaddexp(0.0, z)
        return log_p, log_q


def irf(theta, item: ItemParams):
    """Probability of a correct response at ability ``theta``.

    ``c + (1 - c) * logistic(scale * a * (theta - b))``; with ``c = 0`` this
    is the two-parameter model.
    """
    theta = np.asarray(theta, dtype=float)
    p = item.c + (1 - item.c) * expit(item.scale * item.a * (theta - item.b))
    return float(p) if p.ndim == 0 else p


@dataclass
class ResponseMatrix:
    """Persons by items responses; ``nan`` marks a cell that was not administered."""

    values: np.ndarray
    domain_of: np.ndarray = None
    person_ids: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("responses must be a persons x items matrix")
        seen = v[~np.isnan(v)]
        if np.any((seen != 0) & (seen != 1)):
            raise ValidationError("observed responses must be 0 or 1")
        self.values = v
        n = v.shape[0]
        if self.domain_of is None:
            self.domain_of = np.zeros(n, dtype=int)
        self.domain_of = np.asarray(self.domain_of)
        if self.domain_of.shape != (n,):
            raise ValidationError("domain_of must assign exactly one domain per person")
        if self.person_ids is None:
            self.person_ids = np.arange(n)
        self.person_ids = np.asarray(self.person_ids)

    @property
    def n_persons(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def indicator_matrices(self):
        """Float matrices flagging observed correct and observed incorrect cells."""
        obs = self.observed
        correct = (obs & (np.nan_to_num(self.values) == 1)).astype(float)
        wrong = (obs & (np.nan_to_num(self.values, nan=1.0) == 0)).astype(float)
        return correct, wrong

    def subset(self, rows) -> "ResponseMatrix":
        return ResponseMatrix(self.values[rows], self.domain_of[rows], self.person_ids[rows])


@dataclass
class LatentRegression:
    """Normal prior of ability given person covariates.

    ``gamma[0]`` is the intercept, ``gamma[1:]`` multiply the covariate columns.
    """

    gamma: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if not self.sigma2 > 0:
            raise ValidationError("latent residual variance must be positive")

    def mean(self, covariates=None, n=None) -> np.ndarray:
        if covariates is None:
            if self.gamma.size > 1:
                raise ValidationError("this regression needs covariates")
            return np.full(n, self.gamma[0])
        X = np.asarray(covariates, dtype=float).reshape(len(covariates), -1)
        if X.shape[1] != self.gamma.size - 1:
            raise ValidationError("covariate columns do not match the regression")
        return self.gamma[0] + X @ self.gamma[1:]


@dataclass
class PlausibleValueSet:
    draws: np.ndarray
    person_ids: np.ndarray = None
    domain_of: np.ndarray = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] < 2:
            raise ValidationError("need at least two plausible values per person")
        if not np.all(np.isfinite(self.draws)):
            raise ValidationError("plausible values must be finite")
        n = self.draws.shape[0]
        if self.person_ids is None:
            self.person_ids = np.arange(n)
        if self.domain_of is None:
            self.domain_of = np.zeros(n, dtype=int)
        self.person_ids = np.asarray(self.person_ids)
        self.domain_of = np.asarray(self.domain_of)

    @property
    def L(self) -> int:
        return self.draws.shape[1]

    def transformed(self, offset=0.0, factor=1.0) -> "PlausibleValueSet":
        return PlausibleValueSet(offset + factor * self.draws, self.person_ids, self.domain_of)


@dataclass
class EMConfig:
    n_nodes: int = 41
    max_iter: int = 500
    tol: float = 1e-4
    newton_steps: int = 3
    scale: float = DEFAULT_SCALE
    estimate_guessing: bool = False
    fixed_c: float = 0.0
    # Beta(5, 17) has its mode at 0.2
    guessing_prior: tuple = (5.0, 17.0)


@dataclass
class EMResult:
    bank: ItemBank
    regression: LatentRegression
    loglik: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def __iter__(self):
        # allows ``bank, reg = calibrate_em(...)``
        return iter((self.bank, self.regression))


def _check_items(correct, wrong):
    for j in range(correct.shape[1]):
        if correct[:, j].sum() == 0 or wrong[:, j].sum() == 0:
            raise DegenerateItem(j)


def _item_terms(a, b, c, nodes, scale):
    z = scale * a * (nodes[:, None] - b)
    psi = expit(z)
    P = np.clip(c + (1 - c) * psi, 1e-12, 1 - 1e-12)
    return psi, P


def _item_q(a, b, c, R1, N, nodes, scale, prior):
    _, P = _item_terms(a, b, c, nodes, scale)
    q = (R1 * np.log(P) + (N - R1) * np.log1p(-P)).sum(axis=0)
    if prior is not None:
        al, be = prior
        q = q + (al - 1) * np.log(c) + (be - 1) * np.log1p(-c)
    return q


def _m_step_items(a, b, c, R1, N, nodes, cfg):
    """Fisher-scoring updates for every item at once, with step halving."""
    scale = cfg.scale
    prior = cfg.guessing_prior if cfg.estimate_guessing else None
    q_old = _item_q(a, b, c, R1, N, nodes, scale, prior)
    for _ in range(cfg.newton_steps):
        psi, P = _item_terms(a, b, c, nodes, scale)
        dpsi = (1 - c) * psi * (1 - psi)
        jac = [dpsi * scale * (nodes[:, None] - b), -dpsi * scale * a]
        if cfg.estimate_guessing:
            jac.append(1 - psi)
        J = np.stack(jac)
        w = (R1 - N * P) / (P * (1 - P))
        grad = (w * J).sum(axis=1).T
        info = np.einsum("ki,mki,nki->imn", N / (P * (1 - P)), J, J)
        if prior is not None:
            al, be = prior
            grad[:, 2] += (al - 1) / c - (be - 1) / (1 - c)
            info[:, 2, 2] += (al - 1) / c**2 + (be - 1) / (1 - c) ** 2
        info += 1e-10 * np.eye(J.shape[0])
        step = np.linalg.solve(info, grad[..., None])[..., 0]

        t = np.ones(a.size)
        pending = np.ones(a.size, dtype=bool)
        new_a, new_b, new_c = a.copy(), b.copy(), c.copy()
        for _ in range(30):
            ca = a + t * step[:, 0]
            cb = b + t * step[:, 1]
            cc = c + t * step[:, 2] if cfg.estimate_guessing else c
            ok = ca > 0
            if cfg.estimate_guessing:
                ok &= (cc > 0) & (cc < 1)
            q_new = np.full(a.size, -np.inf)
            q_new[ok] = _item_q(
                ca[ok], cb[ok], cc[ok] if cfg.estimate_guessing else c[ok],
                R1[:, ok], N[:, ok], nodes, scale, prior,
            )
            accept = pending & ok & (q_new >= q_old)
            new_a[accept], new_b[accept] = ca[accept], cb[accept]
            if cfg.estimate_guessing:
                new_c[accept] = cc[accept]
            q_old = np.where(accept, q_new, q_old)
            pending &= ~accept
            if not pending.any():
                break
            t[pending] *= 0.5
        moved = np.max(np.abs(np.c_[new_a - a, new_b - b, new_c - c]))
        a, b, c = new_a, new_b, new_c
        if moved < 1e-9:
            break
    return a, b, c


class _Regression:
    """Latent regression on centred covariates, constrained so that the
    population ability distribution has mean 0 and variance 1."""

    def __init__(self, covariates, n):
        if covariates is None:
            self.X = np.empty((n, 0))
            self.means = np.empty(0)
        else:
            X = np.asarray(covariates, dtype=float).reshape(n, -1)
            self.means = X.mean(axis=0)
            self.X = X - self.means
        self.S = self.X.T @ self.X / n
        self.slopes = np.zeros(self.X.shape[1])
        self.sigma2 = 1.0

    def prior_mean(self):
        return self.X @ self.slopes

    def _from_free(self, v):
        k = 1.0 + v @ self.S @ v
        return v / np.sqrt(k), 1.0 / k

    def _q(self, slopes, sigma2, m, s):
        mu = self.X @ slopes
        return -0.5 * (m.size * np.log(sigma2) + np.sum(s - 2 * m * mu + mu**2) / sigma2)

    def update(self, m, s):
        if self.X.shape[1] == 0:
            return
        q_old = self._q(self.slopes, self.sigma2, m, s)

        def objective(v):
            g, s2 = self._from_free(v)
            return -self._q(g, s2, m, s)

        res = optimize.minimize(objective, self.slopes / np.sqrt(self.sigma2), method="BFGS")
        g, s2 = self._from_free(res.x)
        if self._q(g, s2, m, s) >= q_old:
            self.slopes, self.sigma2 = g, s2

    def to_public(self):
        gamma = np.r_[-self.means @ self.slopes, self.slopes]
        return LatentRegression(gamma, self.sigma2)


def calibrate_em(responses: ResponseMatrix, covariates=None, config: EMConfig = None) -> EMResult:
    """Marginal maximum likelihood calibration by Bock-Aitkin EM.

    Parameters
    ----------
    responses : ResponseMatrix
        Missing cells are skipped in the likelihood.
    covariates : array_like, optional
        Person covariates (n_persons x q) for the latent regression. The
        latent scale is identified by giving the calibration population
        mean 0 and variance 1.
    config : EMConfig, optional

    Returns
    -------
    EMResult
        Unpacks as ``(bank, regression)``; also carries the log-likelihood
        trace (penalised when guessing is estimated) and a convergence flag.
    """
    cfg = config or EMConfig()
    correct, wrong = responses.indicator_matrices()
    _check_items(correct, wrong)
    n, n_items = correct.shape
    observed = correct + wrong

    nodes, weights = hermegauss(cfg.n_nodes)
    log_node_w = np.log(weights) + 0.5 * nodes**2

    p = correct.sum(0) / observed.sum(0)
    kappa = cfg.scale
    a = np.ones(n_items)
    b = -logit(np.clip(p, 1e-3, 1 - 1e-3)) * np.sqrt(1 + np.pi * kappa**2 / 8) / kappa
    c = np.full(n_items, 0.2 if cfg.estimate_guessing else cfg.fixed_c, dtype=float)
    reg = _Regression(covariates, n)

    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        bank = ItemBank(a, b, c, cfg.scale)
        log_p, log_q = bank.log_prob(nodes)
        ll = correct @ log_p.T + wrong @ log_q.T
        mu = reg.prior_mean()
        log_prior = -0.5 * (np.log(2 * np.pi * reg.sigma2) + (nodes[None, :] - mu[:, None]) ** 2 / reg.sigma2)
        joint = ll + log_prior + log_node_w
        person_ll = logsumexp(joint, axis=1)
        total = float(np.sum(person_ll))
        if cfg.estimate_guessing:
            al, be = cfg.guessing_prior
            total += float(np.sum((al - 1) * np.log(c) + (be - 1) * np.log1p(-c)))
        trace.append(total)
        if it > 1 and abs(trace[-1] - trace[-2]) < cfg.tol:
            converged = True
            break
        if it == cfg.max_iter:
            break

        post = np.exp(joint - person_ll[:, None])
        R1 = post.T @ correct
        N = post.T @ observed
        a, b, c = _m_step_items(a, b, c, R1, N, nodes, cfg)
        reg.update(post @ nodes, post @ nodes**2)

    if not converged:
        warnings.warn(f"EM hit max_iter={cfg.max_iter} before reaching tol={cfg.tol}", ConvergenceWarning)
    return EMResult(ItemBank(a, b, c, cfg.scale), reg.to_public(), trace, it, converged)


def draw_plausible_values(
    responses: ResponseMatrix,
    bank: ItemBank,
    regression: LatentRegression = None,
    L: int = 5,
    seed: int = 0,
    covariates=None,
    *,
    burn_in: int = 500,
    thin: int = 50,
    step: float = 1.0,
    stream_keys=None,
    block_size: int = 2048,
) -> PlausibleValueSet:
    """Random-walk Metropolis draws from each person's ability posterior.

    Each person's chain consumes its own random stream seeded by
    ``(seed, key)``, where ``key`` defaults to the row index, so results do not
    depend on how persons are grouped into blocks.
    """
    if L < 2:
        raise ValidationError("L must be at least 2")
    if responses.n_items != bank.n_items:
        raise ValidationError("response matrix and item bank disagree on the number of items")
    n = responses.n_persons
    regression = regression or LatentRegression([0.0], 1.0)
    mu = regression.mean(covariates, n=n)
    sd = np.sqrt(regression.sigma2)
    keys = np.arange(n) if stream_keys is None else np.asarray(stream_keys)
    correct, wrong = responses.indicator_matrices()
    n_steps = burn_in + thin * L
    draws = np.empty((n, L))

    def log_post(theta, rows):
        log_p, log_q = bank.log_prob(theta)
        ll = np.sum(correct[rows] * log_p + wrong[rows] * log_q, axis=1)
        return ll - 0.5 * ((theta - mu[rows]) / sd) ** 2

    for start in range(0, n, block_size):
        rows = np.arange(start, min(start + block_size, n))
        noise = np.empty((rows.size, n_steps))
        log_u = np.empty((rows.size, n_steps))
        for r, key in enumerate(keys[rows]):
            gen = np.random.default_rng([int(seed), int(key)])
            noise[r] = gen.standard_normal(n_steps)
            log_u[r] = np.log(gen.random(n_steps))
        cur = mu[rows].copy()
        cur_lp = log_post(cur, rows)
        kept = 0
        for t in range(n_steps):
            prop = cur + step * noise[:, t]
            prop_lp = log_post(prop, rows)
            accept = log_u[:, t] < prop_lp - cur_lp
            cur = np.where(accept, prop, cur)
            cur_lp = np.where(accept, prop_lp, cur_lp)
            if t >= burn_in and (t - burn_in + 1) % thin == 0:
                draws[rows, kept] = cur
                kept += 1
    return PlausibleValueSet(draws, responses.person_ids, responses.domain_of)
