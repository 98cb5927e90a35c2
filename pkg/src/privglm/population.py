"""Synthetic agent populations, reporting strategies and the cost threshold.

An agent is a covariate vector, a true response drawn from the configured
model, and a privacy-cost coefficient with an exponential tail. The threshold
strategy reports the truth whenever the cost coefficient is at most tau and
falls back to a configurable misreport rule otherwise; covariates are never
altered by any strategy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, NonConvergenceError
from .estimators import Dataset
from .links import LINEAR, LOGISTIC, POISSON, ModelKind


# ---------------------------------------------------------------------------
# Covariate distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubGaussianIsotropic:
    """Gaussian N(0, (sigma^2/d) I); per-direction variance sigma^2/d."""

    sigma: float = 1.0


@dataclass(frozen=True, eq=False)
class SubGaussianCov:
    """Gaussian N(0, cov) for an explicit SPD covariance."""

    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class StudentTCovariates:
    """Multivariate Student-t with dof > 4 (finite fourth moments).

    `scale` is the scale matrix of the elliptical construction
    x = L z sqrt(dof / w), z ~ N(0, I), w ~ chi2(dof); it defaults to I/d to
    keep row norms comparable to the isotropic sub-Gaussian case.
    """

    dof: float = 5.0
    scale: Optional[np.ndarray] = None


CovariateSpec = Union[SubGaussianIsotropic, SubGaussianCov, StudentTCovariates]


@dataclass
class PopulationSpec:
    n: int
    d: int
    model: ModelKind
    covariates: CovariateSpec = field(default_factory=SubGaussianIsotropic)
    tau_theta: float = 1.0
    theta_star: Optional[np.ndarray] = None  # None draws from the truncated prior
    cost_lambda: float = 1.0
    cost_correlated: bool = False

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigError("population needs n >= 1 and d >= 1")
        if not self.tau_theta > 0:
            raise ConfigError("tau_theta must be positive")
        if not self.cost_lambda > 0:
            raise ConfigError("cost_lambda must be positive")
        if isinstance(self.covariates, StudentTCovariates) and not self.covariates.dof > 4:
            raise ConfigError("Student-t covariates need dof > 4 for finite fourth moments")
        if self.theta_star is not None:
            self.theta_star = np.asarray(self.theta_star, dtype=float).ravel()
            if self.theta_star.shape[0] != self.d:
                raise ConfigError("theta_star dimension mismatch")
            if np.linalg.norm(self.theta_star) > self.tau_theta + 1e-12:
                raise ConfigError("theta_star must lie in the tau_theta ball")


@dataclass
class AgentRecord:
    x: np.ndarray
    y_true: float
    cost: float
    reported: Optional[float] = None


@dataclass
class Population:
    """Struct-of-arrays view of the generated agents."""

    X: np.ndarray
    y_true: np.ndarray
    costs: np.ndarray
    theta_star: np.ndarray
    spec: PopulationSpec

    def __len__(self) -> int:
        return self.X.shape[0]

    def record(self, i: int) -> AgentRecord:
        return AgentRecord(self.X[i].copy(), float(self.y_true[i]), float(self.costs[i]))


def draw_theta_star(d: int, tau_theta: float, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample N(0, (tau_theta^2/d) I) truncated to the tau_theta ball."""
    scale = tau_theta / math.sqrt(d)
    while True:
        theta = rng.standard_normal(d) * scale
        if np.linalg.norm(theta) <= tau_theta:
            return theta


def sample_costs(lam: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Exponential(lam) draws, so P(c <= t) = 1 - exp(-lam t)."""
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    return rng.exponential(1.0 / lam, size=n)


def _draw_covariates(spec: PopulationSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    cov = spec.covariates
    if isinstance(cov, SubGaussianIsotropic):
        return rng.standard_normal((n, spec.d)) * (cov.sigma / math.sqrt(spec.d))
    if isinstance(cov, SubGaussianCov):
        L = np.linalg.cholesky(np.asarray(cov.cov, dtype=float))
        return rng.standard_normal((n, spec.d)) @ L.T
    scale = cov.scale if cov.scale is not None else np.eye(spec.d) / spec.d
    L = np.linalg.cholesky(np.asarray(scale, dtype=float))
    z = rng.standard_normal((n, spec.d)) @ L.T
    w = rng.chisquare(cov.dof, size=n)
    return z * np.sqrt(cov.dof / w)[:, None]


def _draw_responses(
    model: ModelKind, eta: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    if model.family == LINEAR:
        return eta + model.noise_std * rng.standard_normal(eta.shape[0])
    if model.family == LOGISTIC:
        # P(y = 1) = e^eta / (e^eta + e^-eta)
        p1 = 1.0 / (1.0 + np.exp(-2.0 * eta))
        return np.where(rng.random(eta.shape[0]) < p1, 1.0, -1.0)
    return rng.poisson(np.exp(eta)).astype(float)


def generate_population(spec: PopulationSpec, rng: np.random.Generator) -> Population:
    """Draw theta*, covariates, responses and costs; deterministic given rng state."""
    theta = (
        spec.theta_star.copy()
        if spec.theta_star is not None
        else draw_theta_star(spec.d, spec.tau_theta, rng)
    )
    X = _draw_covariates(spec, rng, spec.n)
    eta = X @ theta
    y = _draw_responses(spec.model, eta, rng)
    costs = rng.exponential(1.0, size=spec.n)
    if spec.cost_correlated:
        # agents whose response exceeds the median are twice as privacy-averse
        scale = np.where(y > np.median(y), 2.0 / spec.cost_lambda, 1.0 / spec.cost_lambda)
    else:
        scale = 1.0 / spec.cost_lambda
    costs = costs * scale
    return Population(X, y, costs, theta, spec)


def replacement_sampler(spec: PopulationSpec, theta_star: np.ndarray):
    """One-agent sampler used by the empirical sensitivity oracle."""
    fixed = replace(spec, n=1, theta_star=np.asarray(theta_star, dtype=float))

    def draw(rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        x = _draw_covariates(fixed, rng, 1)[0]
        y = _draw_responses(fixed.model, np.atleast_1d(x @ fixed.theta_star), rng)[0]
        return x, float(y)

    return draw


# ---------------------------------------------------------------------------
# Cost threshold tau_{alpha, beta}
# ---------------------------------------------------------------------------

def tau_alpha_beta_bound(alpha: float, beta: float, lam: float) -> float:
    """Closed-form upper bound (1/lam) log(1/(alpha beta)) under exponential costs."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ConfigError("alpha and beta must lie in (0, 1)")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    return math.log(1.0 / (alpha * beta)) / lam


def tau_alpha_beta_monte_carlo(
    alpha: float,
    beta: float,
    lam: float,
    n: int,
    trials: int,
    rng: np.random.Generator,
    bracket_iters: int = 60,
    bisect_iters: int = 60,
) -> float:
    """Monte-Carlo estimate of the two-part threshold.

    The population part is the smallest tau such that, across `trials`
    simulated cost vectors, at least a 1-beta fraction have >= (1-alpha) n
    coordinates below tau; costs are drawn once (common random numbers) so
    the bisected function is monotone. The per-agent part is the closed-form
    exponential quantile (1/lam) log(1/alpha); the estimate is the max.
    """
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ConfigError("alpha and beta must lie in (0, 1)")
    costs = rng.exponential(1.0 / lam, size=(trials, n))
    need = (1.0 - alpha) * n

    def satisfied(tau: float) -> bool:
        frac = np.mean(np.sum(costs <= tau, axis=1) >= need - 1e-9)
        return frac >= 1.0 - beta

    hi = 1.0 / lam
    it = 0
    while not satisfied(hi):
        hi *= 2.0
        it += 1
        if it > bracket_iters:
            raise NonConvergenceError("failed to bracket the population threshold")
    lo = 0.0
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    tau1 = hi
    tau2 = math.log(1.0 / alpha) / lam
    return max(tau1, tau2)


# ---------------------------------------------------------------------------
# Reporting strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float = 0.0


@dataclass(frozen=True)
class SignFlip:
    pass


@dataclass(frozen=True)
class AdditiveNoise:
    scale: float = 1.0


@dataclass(frozen=True)
class WorstOfGrid:
    """Report the grid value farthest from the truth (accuracy-adversarial)."""

    grid: Tuple[float, ...]


MisreportRule = Union[Constant, SignFlip, AdditiveNoise, WorstOfGrid]


@dataclass(frozen=True)
class Truthful:
    pass


@dataclass(frozen=True)
class Threshold:
    """Report the truth iff cost <= tau, else fall back to the misreport rule."""

    tau: float
    fallback: MisreportRule = field(default_factory=Constant)


@dataclass(frozen=True)
class Misreport:
    """Every agent reports per the rule (negative-control profile)."""

    rule: MisreportRule


StrategyProfile = Union[Truthful, Threshold, Misreport]


def coerce_response(values: np.ndarray, model: ModelKind) -> np.ndarray:
    """Map arbitrary reals into the model's response set.

    Logistic reports snap to the nearest of {-1, +1} (ties to -1); Poisson
    reports round and clamp to nonnegative integers; linear reports pass
    through.
    """
    values = np.asarray(values, dtype=float)
    if model.family == LOGISTIC:
        return np.where(values > 0.0, 1.0, -1.0)
    if model.family == POISSON:
        return np.maximum(0.0, np.round(values))
    return values


def _rule_values(
    rule: MisreportRule, y_true: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    if isinstance(rule, Constant):
        return np.full_like(y_true, rule.value)
    if isinstance(rule, SignFlip):
        return -y_true
    if isinstance(rule, AdditiveNoise):
        return y_true + rule.scale * rng.standard_normal(y_true.shape[0])
    if isinstance(rule, WorstOfGrid):
        grid = np.asarray(rule.grid, dtype=float)
        if grid.size == 0:
            raise ConfigError("WorstOfGrid needs a nonempty grid")
        dist = np.abs(grid[None, :] - y_true[:, None])
        return grid[np.argmax(dist, axis=1)]
    raise ConfigError(f"unknown misreport rule {rule!r}")


def apply_strategy(
    pop: Population, profile: StrategyProfile, rng: np.random.Generator
) -> Dataset:
    """Produce the reported dataset; covariates pass through untouched."""
    model = pop.spec.model
    if isinstance(profile, Truthful):
        reported = pop.y_true.copy()
    elif isinstance(profile, Misreport):
        reported = coerce_response(_rule_values(profile.rule, pop.y_true, rng), model)
    elif isinstance(profile, Threshold):
        fallback = coerce_response(_rule_values(profile.fallback, pop.y_true, rng), model)
        reported = np.where(pop.costs <= profile.tau, pop.y_true, fallback)
    else:
        raise ConfigError(f"unknown strategy profile {profile!r}")
    return Dataset(pop.X.copy(), reported)


# ---------------------------------------------------------------------------
# Import/export
# ---------------------------------------------------------------------------

def save_population(pop: Population, csv_path, sidecar_path, seed: Optional[int] = None) -> None:
    """Dataset CSV (true responses) plus a JSON sidecar with the generation facts."""
    Dataset(pop.X, pop.y_true).save_csv(csv_path)
    sidecar = {
        "theta_star": [float(v) for v in pop.theta_star],
        "lambda": pop.spec.cost_lambda,
        **pop.spec.model.to_json(),
        "seed": seed,
        "costs": [float(c) for c in pop.costs],
    }
    Path(sidecar_path).write_text(json.dumps(sidecar, indent=2))


def load_population(csv_path, sidecar_path) -> Population:
    data = Dataset.load_csv(csv_path)
    sidecar = json.loads(Path(sidecar_path).read_text())
    model = ModelKind.from_json(sidecar)
    theta = np.asarray(sidecar["theta_star"], dtype=float)
    costs = np.asarray(sidecar["costs"], dtype=float)
    if costs.shape[0] != data.n:
        raise ConfigError("sidecar cost vector does not match the CSV row count")
    spec = PopulationSpec(
        n=data.n,
        d=data.d,
        model=model,
        tau_theta=max(1.0, float(np.linalg.norm(theta))),
        theta_star=theta,
        cost_lambda=float(sidecar["lambda"]),
    )
    return Population(data.X, data.y, costs, theta, spec)
