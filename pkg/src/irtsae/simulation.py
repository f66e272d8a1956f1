"""Monte Carlo comparison of direct, calibration, composite and EBLUP domain estimators.

A synthetic student population is generated once. Its responses are masked
completely at random, the items are calibrated and plausible values drawn
for every student. Each replicate then samples domains and students by simple
random sampling and scores the four estimators against the known domain means.

Replicate ``r`` always uses the same domain order and the same within-domain
student order, whatever the sampling fractions. Smaller samples are prefixes
of larger ones, so differences between cells are not swamped by sampling noise.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .combine import rubin_combine
from .errors import CorrelationMiss, ValidationError
from .fayherriot import AreaDesign, fit_fay_herriot
from .irt import EMConfig, ItemBank, ResponseMatrix, calibrate_em, draw_plausible_values
from .survey import SampleDomain, composite_mean, greg_mean, ht_mean, synthetic_ols

ESTIMATORS = ("dir", "cal", "comp", "p")
CORRELATION_TARGETS = {"high": 0.9, "medium": 0.7, "low": 0.4}
CORRELATION_BANDS = {"high": (0.8, 1.0), "medium": (0.6, 0.8), "low": (0.0, 0.6)}
REPORT_OFFSET, REPORT_SCALE = 500.0, 100.0


@dataclass(frozen=True)
class SimConfig:
    """Population, missingness and sampling settings of one simulation cell.

    ``f_n`` is the overall fraction of students sampled; those students are
    spread evenly over the ``ceil(f_d * D)`` sampled domains, so each sampled
    domain contributes a fraction ``f_n / f_d`` of its students.
    """

    N: int = 10_000
    I: int = 60
    D: int = 50
    missing_rate: float = 0.10
    corr_level: str = "high"
    f_d: float = 0.30
    f_n: float = 0.05
    L: int = 5
    R: int = 500
    seed: int = 0
    domain_var: float = 0.005
    covariate_r2: float = 0.35
    a_range: tuple = (0.5, 2.0)
    b_range: tuple = (-2.5, 2.5)
    guessing: float = 0.0
    burn_in: int = 500
    thin: int = 50
    em_max_iter: int = 200

    def __post_init__(self):
        for name in ("f_d", "f_n"):
            if not 0 < getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in (0, 1]")
        if not 0 <= self.missing_rate < 1:
            raise ValidationError("missing_rate must lie in [0, 1)")
        if self.corr_level not in CORRELATION_TARGETS:
            raise ValidationError(f"corr_level must be one of {sorted(CORRELATION_TARGETS)}")
        if self.R < 1 or self.L < 2:
            raise ValidationError("need R >= 1 and L >= 2")
        if self.N % self.D:
            raise ValidationError("N must be a multiple of D (equal domain sizes)")
        if self.f_n > self.f_d:
            raise ValidationError("f_n cannot exceed f_d: sampled domains would need more students than they have")
        if not 0 <= self.domain_var < 1 or not 0 <= self.covariate_r2 < 1:
            raise ValidationError("domain_var and covariate_r2 must lie in [0, 1)")


@dataclass
class Population:
    responses: ResponseMatrix
    gamma: np.ndarray
    person_cov: np.ndarray
    area_cov: np.ndarray
    theta: np.ndarray
    bank: ItemBank
    area_corr: np.ndarray

    def __iter__(self):
        return iter((self.responses, self.gamma, self.person_cov, self.area_cov))

    @property
    def domain_of(self) -> np.ndarray:
        return self.responses.domain_of


def _rng(seed, *keys):
    return np.random.default_rng([int(seed), *map(int, keys)])


def synth_population(cfg: SimConfig, max_attempts: int = 20) -> Population:
    """Simulate students, item responses and area covariates.

    Ability is a domain effect plus two person covariates plus noise, scaled
    to mean 0 and variance 1 over the population. The true domain means are
    reported as ``500 + 100 * mean ability``. Each area covariate is a noisy
    copy of the standardised domain means built to correlate with them at the
    target of ``cfg.corr_level``; the noise is redrawn until both columns land
    in the level's band.
    """
    rng = _rng(cfg.seed, 0)
    N_d = cfg.N // cfg.D
    domain_of = np.repeat(np.arange(cfg.D), N_d)
    within = 1.0 - cfg.domain_var
    slopes = np.sqrt(cfg.covariate_r2 * within / 2) * np.ones(2)
    mu = rng.normal(0.0, math.sqrt(cfg.domain_var), cfg.D)
    person_cov = rng.standard_normal((cfg.N, 2))
    theta = mu[domain_of] + person_cov @ slopes + rng.normal(0, math.sqrt(within * (1 - cfg.covariate_r2)), cfg.N)
    theta = (theta - theta.mean()) / theta.std()

    bank = ItemBank(
        rng.uniform(*cfg.a_range, cfg.I), rng.uniform(*cfg.b_range, cfg.I), np.full(cfg.I, cfg.guessing)
    )
    values = (rng.random((cfg.N, cfg.I)) < bank.prob(theta)).astype(float)
    responses = ResponseMatrix(values, domain_of)

    gamma = REPORT_OFFSET + REPORT_SCALE * np.bincount(domain_of, theta) / N_d
    z = (gamma - gamma.mean()) / gamma.std()
    rho = CORRELATION_TARGETS[cfg.corr_level]
    lo, hi = CORRELATION_BANDS[cfg.corr_level]
    for _ in range(max_attempts):
        area_cov = rho * z[:, None] + math.sqrt(1 - rho**2) * rng.standard_normal((cfg.D, 2))
        corr = np.array([np.corrcoef(area_cov[:, k], gamma)[0, 1] for k in range(2)])
        if np.all((corr > lo) & (corr <= hi)):
            break
    else:
        raise CorrelationMiss(f"area covariate correlations {corr} outside {cfg.corr_level} band after {max_attempts} attempts")
    return Population(responses, gamma, person_cov, area_cov, theta, bank, corr)


def apply_mcar_mask(responses: ResponseMatrix, rate: float, rng=None, *, uniforms=None) -> ResponseMatrix:
    """Hide each cell independently with probability ``rate``.

    Cells already missing stay missing. Passing the same ``uniforms`` for
    several rates yields nested masks.
    """
    if not 0 <= rate < 1:
        raise ValidationError("rate must lie in [0, 1)")
    if uniforms is None:
        uniforms = np.random.default_rng(rng).random(responses.values.shape)
    values = responses.values.copy()
    values[uniforms < rate] = np.nan
    return ResponseMatrix(values, responses.domain_of, responses.person_ids)


@dataclass
class ImputedPopulation:
    """Population with its plausible values on the reporting scale."""

    population: Population
    missing_rate: float
    pv: np.ndarray
    em_converged: bool

    @property
    def N_d(self) -> int:
        return int(np.bincount(self.population.domain_of).min())


def impute_population(cfg: SimConfig, population: Population, missing_rate: float = None) -> ImputedPopulation:
    """Mask, calibrate and draw plausible values for every student."""
    rate = cfg.missing_rate if missing_rate is None else missing_rate
    uniforms = _rng(cfg.seed, 1).random(population.responses.values.shape)
    masked = apply_mcar_mask(population.responses, rate, uniforms=uniforms)
    em = calibrate_em(masked, population.person_cov, EMConfig(max_iter=cfg.em_max_iter))
    pvs = draw_plausible_values(
        masked, em.bank, em.regression, L=cfg.L, seed=cfg.seed,
        covariates=population.person_cov, burn_in=cfg.burn_in, thin=cfg.thin,
    )
    return ImputedPopulation(population, rate, REPORT_OFFSET + REPORT_SCALE * pvs.draws, em.converged)


def _replicate_orders(cfg: SimConfig, D: int, N_d: int, r: int):
    rng = _rng(cfg.seed, 2, r)
    return rng.permutation(D), np.argsort(rng.random((D, N_d)), axis=1)


def run_replicate(cfg: SimConfig, state: ImputedPopulation, r: int) -> dict:
    """Sample once and compute the four domain estimators with their variances.

    Returns
    -------
    dict
        ``domains`` and ``gamma`` (true means) of the sampled domains, and for
        each estimator name an ``(estimate, variance)`` pair of arrays.
    """
    pop = state.population
    D, N_d = pop.gamma.size, state.N_d
    order, within = _replicate_orders(cfg, D, N_d, r)
    D_s = min(D, math.ceil(cfg.f_d * D - 1e-9))
    n_d = min(N_d, max(2, round(cfg.f_n * cfg.N / D_s)))
    domains = np.sort(order[:D_s])
    # domains occupy consecutive blocks of N_d students
    cov_totals = np.add.reduceat(pop.person_cov, np.arange(0, D * N_d, N_d))

    direct, greg, doms = [], [], []
    for d in domains:
        rows = d * N_d + within[d, :n_d]
        dom = SampleDomain(state.pv[rows], N_d=N_d, aux_sample=pop.person_cov[rows], aux_totals=cov_totals[d])
        doms.append(dom)
        direct.append(ht_mean(dom))
        greg.append(greg_mean(dom))

    X = np.column_stack([np.ones(D_s), pop.area_cov[domains]])
    dir_pts = np.array([p for p, _ in direct])
    coef = synthetic_ols(dir_pts, X)
    synth = X @ coef
    n_bar = float(np.mean([dom.n_d for dom in doms]))
    # one synthetic value per imputation, so the composite is pooled like the others
    comp = [composite_mean(dom, synth[k], n_bar) for k, dom in enumerate(doms)]

    def pooled(per_domain):
        est = [rubin_combine(np.column_stack(pv)) for pv in per_domain]
        return np.array([e.gamma_hat for e in est]), np.array([e.sigma2_d for e in est])

    out = {"domains": domains, "gamma": pop.gamma[domains]}
    out["dir"] = pooled(direct)
    out["cal"] = pooled(greg)
    out["comp"] = pooled(comp)
    fit = fit_fay_herriot(AreaDesign(X, *out["dir"]), "reml")
    out["p"] = (fit.eblup, fit.mse)
    return out


def replicate_metrics(rep: dict) -> dict:
    """Relative bias and relative errors (percent), averaged over sampled domains.

    ``eerp`` uses the realised error ``|estimate - truth| / truth`` and
    ``eerp_est`` the estimator's own standard error ``sqrt(var) / estimate``.
    """
    gamma = rep["gamma"]
    out = {}
    for name in ESTIMATORS:
        est, var = rep[name]
        out[f"sbp_{name}"] = float(np.mean((gamma - est) / est) * 100)
        out[f"eerp_{name}"] = float(np.mean(np.abs(est - gamma) / gamma) * 100)
        out[f"eerp_est_{name}"] = float(np.mean(np.sqrt(var) / est) * 100)
    return out


def aggregate(metrics: list) -> dict:
    """Plain means over replicates, summed in replicate order."""
    if not metrics:
        raise ValidationError("need at least one replicate")
    keys = metrics[0].keys()
    return {k: math.fsum(m[k] for m in metrics) / len(metrics) for k in keys}


def table_row(cfg: SimConfig, agg: dict) -> dict:
    row = {
        "missing_rate": cfg.missing_rate,
        "corr_level": cfg.corr_level,
        "f_d": cfg.f_d,
        "f_n": cfg.f_n,
        "eerp_dir": agg["eerp_dir"],
        "eerp_cal": agg["eerp_cal"],
        "eerp_comp": agg["eerp_comp"],
        "eerp_p": agg["eerp_p"],
        "sbr_p": agg["sbp_p"],
    }
    for k, v in agg.items():
        row.setdefault(k, v)
    return row


@dataclass
class SimGrid:
    """Cells to evaluate; each combination becomes one output row."""

    base: SimConfig = field(default_factory=SimConfig)
    missing_rates: tuple = (0.10,)
    corr_levels: tuple = ("high",)
    f_d: tuple = (0.30, 0.50, 0.70)
    f_n: tuple = (0.05, 0.10, 0.20)

    def cells(self):
        for m in self.missing_rates:
            for c in self.corr_levels:
                for fd in self.f_d:
                    for fn in self.f_n:
                        yield replace(self.base, missing_rate=m, corr_level=c, f_d=fd, f_n=fn)


def _cell_replicates(args):
    cfg, state, reps = args
    return [replicate_metrics(run_replicate(cfg, state, r)) for r in reps]


def run_cell(cfg: SimConfig, state: ImputedPopulation, n_jobs: int = 1, long_rows: list = None) -> dict:
    """Run all replicates of one cell and return its aggregated table row."""
    reps = list(range(cfg.R))
    if n_jobs > 1:
        chunks = [reps[k::n_jobs] for k in range(n_jobs)]
        with ProcessPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(_cell_replicates, [(cfg, state, c) for c in chunks]))
        by_rep = {}
        for chunk, part in zip(chunks, parts):
            by_rep.update(zip(chunk, part))
        metrics = [by_rep[r] for r in reps]
    else:
        metrics = _cell_replicates((cfg, state, reps))
    if long_rows is not None:
        for r, m in enumerate(metrics):
            long_rows.append({"missing_rate": cfg.missing_rate, "corr_level": cfg.corr_level,
                              "f_d": cfg.f_d, "f_n": cfg.f_n, "replicate": r, **m})
    return table_row(cfg, aggregate(metrics))


def run_simulation(grid: SimGrid, n_jobs: int = 1, long_rows: list = None, progress=None) -> list:
    """Evaluate every cell of ``grid``.

    One population is synthesised per correlation level and imputed once per
    missing rate; the cells then differ only in how they sample it.
    """
    rows = []
    states = {}
    for cfg in grid.cells():
        key = (cfg.corr_level, cfg.missing_rate)
        if key not in states:
            states[key] = impute_population(cfg, synth_population(cfg))
        rows.append(run_cell(cfg, states[key], n_jobs, long_rows))
        if progress is not None:
            progress(rows[-1])
    return rows


def config_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)
