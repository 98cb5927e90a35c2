"""End-to-end private estimation mechanisms with peer-prediction payments.

One run partitions the reported agents into two groups, releases three
privatized ball-projected estimators (full data plus each half), and pays
every agent a rescaled Brier score comparing two predictions of their
response: one from the opposite group's private estimator and one from the
posterior mean given the agent's own report. Payments of agents in one group
never touch that group's own estimator, which is what makes the released
output jointly private per agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, DegenerateWeightsError, PartitionTooSmallError
from .estimators import (
    HEAVY,
    Dataset,
    EstimatorSettings,
    check_responses,
    estimate,
    l4_shrink_rows,
    rows_inner,
    sensitivity_bound_heavy,
    sensitivity_bound_subgaussian,
)
from .links import (
    LINEAR,
    LOGISTIC,
    POISSON,
    LinkBundle,
    ModelKind,
    PolytopeSpec,
    check_preset_delta,
    compute_link_constants,
    make_link_bundle,
    preset_polytope,
)
from .population import tau_alpha_beta_bound
from .privacy import (
    WHICH_FULL,
    WHICH_HALF0,
    WHICH_HALF1,
    PrivacyParams,
    compose_account,
    privatize,
)

_ESS_FLOOR = 50.0


# ---------------------------------------------------------------------------
# Payment rule and cost functions
# ---------------------------------------------------------------------------

def brier_payment(a1: float, a2: float, p, q):
    """Rescaled Brier score a1 - a2 (p - 2 p q + q^2); concave in q, peak at q = p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = a1 - a2 * (p - 2.0 * p * q + q * q)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CostFunction:
    """Upper envelope F(eps, gamma) of the per-unit privacy cost.

    quartic    (1 + gamma) eps^4
    nonic      (1 + gamma) eps^9
    quadratic  eps^2
    power      (1 + gamma) eps^exponent
    """

    kind: str = "quartic"
    exponent: float = 4.0

    def __post_init__(self):
        if self.kind not in ("quartic", "nonic", "quadratic", "power"):
            raise ConfigError(f"unknown cost function kind {self.kind!r}")
        if self.kind == "power" and not self.exponent > 0:
            raise ConfigError("power cost function needs a positive exponent")

    def __call__(self, epsilon: float, gamma: float) -> float:
        if self.kind == "quartic":
            return (1.0 + gamma) * epsilon ** 4
        if self.kind == "nonic":
            return (1.0 + gamma) * epsilon ** 9
        if self.kind == "quadratic":
            return epsilon ** 2
        return (1.0 + gamma) * epsilon ** self.exponent


# ---------------------------------------------------------------------------
# Parameters and outcome
# ---------------------------------------------------------------------------

@dataclass
class MechanismParams:
    """Every knob of one mechanism run.

    The sensitivities inside `privacy` may be unresolved (None); the run then
    fills them from the regime's bound formula at the dataset's actual n,
    using the sensitivity constant c0.
    """

    privacy: PrivacyParams
    settings: EstimatorSettings
    a1: float
    a2: float
    alpha: float
    beta: float
    cost_fn: CostFunction = field(default_factory=CostFunction)
    schedule_delta: Optional[float] = None
    posterior_samples: int = 10_000
    seed: int = 0
    c0: float = 1.0
    tau_threshold: Optional[float] = None
    payments_nonnegative: bool = False
    c0_calibrated: bool = False  # data-dependent c0 voids the privacy accounting

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.beta < 1.0):
            raise ConfigError("alpha and beta must lie in (0, 1)")
        if self.a1 < 0 or self.a2 < 0:
            raise ConfigError("payment parameters must be nonnegative")
        if self.posterior_samples < 1:
            raise ConfigError("posterior_samples must be >= 1")


@dataclass
class MechanismOutcome:
    theta_bar_full: np.ndarray
    theta_bar_g0: np.ndarray
    theta_bar_g1: np.ndarray
    payments: np.ndarray
    group_assignment: np.ndarray
    budget: float
    account: Tuple[float, float]
    privacy: PrivacyParams
    noise_audit: Tuple[Tuple[str, Optional[int], float], ...]
    p: np.ndarray
    q: np.ndarray
    posterior_seed: int
    payments_nonnegative: bool


# ---------------------------------------------------------------------------
# Posterior means
# ---------------------------------------------------------------------------

def _project_rows(M: np.ndarray, tau_theta: float) -> np.ndarray:
    norms = np.sqrt(rows_inner(M, M))
    scale = np.ones_like(norms)
    over = norms > tau_theta
    scale[over] = tau_theta / norms[over]
    return M * scale[:, None]


def _linear_posterior_means(
    X: np.ndarray, y: np.ndarray, noise_std: float, tau_theta: float
) -> np.ndarray:
    # conjugate mean for one observation under the N(0, (tau_theta^2/d) I) prior
    d = X.shape[1]
    s0sq = tau_theta ** 2 / d
    sig2 = noise_std ** 2
    denom = sig2 + s0sq * rows_inner(X, X)
    coef = np.divide(s0sq * y, denom, out=np.zeros_like(denom), where=denom > 0)
    return _project_rows(coef[:, None] * X, tau_theta)


def _draw_truncated_prior(
    d: int, tau_theta: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    scale = tau_theta / math.sqrt(d)
    out = np.empty((count, d))
    have = 0
    while have < count:
        batch = rng.standard_normal((max(16, int(1.4 * (count - have))), d)) * scale
        keep = batch[np.sum(batch * batch, axis=1) <= tau_theta ** 2]
        take = min(count - have, keep.shape[0])
        out[have : have + take] = keep[:take]
        have += take
    return out


def _is_posterior_mean(
    x: np.ndarray,
    y_report: float,
    model: ModelKind,
    tau_theta: float,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    thetas = _draw_truncated_prior(x.shape[0], tau_theta, samples, rng)
    a = thetas @ x
    if model.family == LOGISTIC:
        loglik = y_report * a - (np.abs(a) + np.log1p(np.exp(-2.0 * np.abs(a))))
    elif model.family == POISSON:
        loglik = y_report * a - np.exp(a)
    else:
        raise ConfigError("importance sampling is for the logistic and poisson models")
    w = np.exp(loglik - np.max(loglik))
    sw = float(np.sum(w))
    ess = sw * sw / float(np.sum(w * w))
    if ess < _ESS_FLOOR:
        raise DegenerateWeightsError(
            f"effective sample size {ess:.1f} below {_ESS_FLOOR:.0f}; "
            f"report {y_report!r} is extreme for the prior"
        )
    mean = (w @ thetas) / sw
    return _project_rows(mean[None, :], tau_theta)[0]


def posterior_mean(
    tau_theta: float,
    x: np.ndarray,
    y_report: float,
    model: ModelKind,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Posterior mean of theta given a single reported pair (x, y).

    The prior is the same truncated Gaussian the generator uses. The linear
    model has a conjugate closed form (computed with the untruncated prior,
    then ball-projected); the discrete models use self-normalized importance
    sampling over prior draws.
    """
    x = np.asarray(x, dtype=float).ravel()
    if model.family == LINEAR:
        X = x[None, :]
        return _linear_posterior_means(
            X, np.asarray([y_report], dtype=float), model.noise_std, tau_theta
        )[0]
    if samples < 1000:
        raise ConfigError("sampling-mode posterior needs samples >= 1000")
    return _is_posterior_mean(x, float(y_report), model, tau_theta, samples, rng)


def _posterior_means_batch(
    X: np.ndarray,
    y: np.ndarray,
    model: ModelKind,
    tau_theta: float,
    samples: int,
    posterior_seed: int,
) -> np.ndarray:
    if model.family == LINEAR:
        return _linear_posterior_means(X, y, model.noise_std, tau_theta)
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        rng = np.random.default_rng([posterior_seed, i])
        out[i] = _is_posterior_mean(X[i], float(y[i]), model, tau_theta, samples, rng)
    return out


# ---------------------------------------------------------------------------
# The mechanism
# ---------------------------------------------------------------------------

def resolve_privacy(
    params: MechanismParams, n: int, d: int, bundle: LinkBundle
) -> PrivacyParams:
    """Fill unresolved sensitivities from the regime's bound formula at size n."""
    settings = params.settings
    constants = compute_link_constants(
        bundle, settings.polytope, settings.tau1, settings.tau2, settings.tau_theta
    )
    return _resolve_privacy(params, n, d, constants.kappa1)


def _resolve_privacy(
    params: MechanismParams, n: int, d: int, kappa1: float
) -> PrivacyParams:
    pp = params.privacy
    if params.settings.regime == HEAVY:
        dn = pp.delta_n if pp.delta_n is not None else sensitivity_bound_heavy(n, d, params.c0).delta_n
        dh = (
            pp.delta_half
            if pp.delta_half is not None
            else sensitivity_bound_heavy(n // 2, d, params.c0).delta_n
        )
    else:
        dn = (
            pp.delta_n
            if pp.delta_n is not None
            else sensitivity_bound_subgaussian(n, d, kappa1, params.c0).delta_n
        )
        dh = (
            pp.delta_half
            if pp.delta_half is not None
            else sensitivity_bound_subgaussian(n // 2, d, kappa1, params.c0).delta_n
        )
    return PrivacyParams(pp.epsilon, dn, dh, pp.gamma_n, pp.gamma_half)


def agent_payment(
    x: np.ndarray,
    y_report: float,
    theta_bar_opposite: np.ndarray,
    bundle: LinkBundle,
    params: MechanismParams,
    posterior_seed: int,
    agent_index: int,
) -> float:
    """Recompute one agent's payment from its own report and the opposite
    group's released estimator alone (the group-blinding contract)."""
    x = np.asarray(x, dtype=float).ravel()
    settings = params.settings
    if settings.regime == HEAVY:
        x_pay = l4_shrink_rows(x[None, :], settings.tau1)
        p = float(rows_inner(x_pay, theta_bar_opposite)[0])
        m = _posterior_means_batch(
            x[None, :],
            np.asarray([y_report], dtype=float),
            bundle.model,
            settings.tau_theta,
            params.posterior_samples,
            posterior_seed,
        )
        q = float(rows_inner(x_pay, m)[0])
    else:
        p = float(bundle.A_prime(float(rows_inner(x[None, :], theta_bar_opposite)[0])))
        if bundle.model.family == LINEAR:
            m = _posterior_means_batch(
                x[None, :],
                np.asarray([y_report], dtype=float),
                bundle.model,
                settings.tau_theta,
                params.posterior_samples,
                posterior_seed,
            )
        else:
            rng = np.random.default_rng([posterior_seed, agent_index])
            m = _is_posterior_mean(
                x, float(y_report), bundle.model, settings.tau_theta,
                params.posterior_samples, rng,
            )[None, :]
        q = float(bundle.A_prime(float(rows_inner(x[None, :], m)[0])))
    pay = brier_payment(params.a1, params.a2, p, q)
    if params.payments_nonnegative:
        pay = max(0.0, pay)
    return float(pay)


def run_mechanism(
    reported: Dataset,
    bundle: LinkBundle,
    params: MechanismParams,
    rng: Optional[np.random.Generator] = None,
) -> MechanismOutcome:
    """Execute one full mechanism run on the reported dataset.

    Steps, in order: random equal partition; three estimator evaluations;
    sensitivity resolution; three independent noise draws (full, group 0,
    group 1); ball projections; per-agent Brier payments against the
    opposite group's private estimator.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    settings = params.settings
    n, d = reported.n, reported.d
    if n < 2 * d or n // 2 < d:
        raise PartitionTooSmallError(f"n = {n} leaves a group smaller than d = {d}")
    if settings.regime == HEAVY and bundle.model.family != LINEAR:
        raise ConfigError("heavy regime requires the linear model")
    check_responses(reported, bundle.model)

    perm = rng.permutation(n)
    assign = np.zeros(n, dtype=np.int8)
    assign[perm[n // 2 :]] = 1
    mask0 = assign == 0

    theta_full = estimate(reported, bundle, settings)
    theta_g0 = estimate(reported.take(mask0), bundle, settings)
    theta_g1 = estimate(reported.take(~mask0), bundle, settings)

    constants = compute_link_constants(
        bundle, settings.polytope, settings.tau1, settings.tau2, settings.tau_theta
    )
    resolved = _resolve_privacy(params, n, d, constants.kappa1)

    noisy_full, s_full = privatize(theta_full, resolved, WHICH_FULL, rng, seed=params.seed)
    noisy_g0, s_g0 = privatize(theta_g0, resolved, WHICH_HALF0, rng, seed=params.seed)
    noisy_g1, s_g1 = privatize(theta_g1, resolved, WHICH_HALF1, rng, seed=params.seed)

    tau_theta = settings.tau_theta
    bar_full = _project_rows(noisy_full[None, :], tau_theta)[0]
    bar_g0 = _project_rows(noisy_g0[None, :], tau_theta)[0]
    bar_g1 = _project_rows(noisy_g1[None, :], tau_theta)[0]

    posterior_seed = int(rng.integers(2 ** 62))

    X, y = reported.X, reported.y
    x_pay = l4_shrink_rows(X, settings.tau1) if settings.regime == HEAVY else X
    inner_p = np.empty(n)
    inner_p[mask0] = rows_inner(x_pay[mask0], bar_g1)
    inner_p[~mask0] = rows_inner(x_pay[~mask0], bar_g0)
    means = _posterior_means_batch(
        X, y, bundle.model, tau_theta, params.posterior_samples, posterior_seed
    )
    inner_q = rows_inner(x_pay, means)
    if settings.regime == HEAVY:
        p, q = inner_p, inner_q
    else:
        p, q = bundle.A_prime(inner_p), bundle.A_prime(inner_q)
    payments = brier_payment(params.a1, params.a2, p, q)
    if params.payments_nonnegative:
        payments = np.maximum(0.0, payments)

    return MechanismOutcome(
        theta_bar_full=bar_full,
        theta_bar_g0=bar_g0,
        theta_bar_g1=bar_g1,
        payments=payments,
        group_assignment=assign,
        budget=math.fsum(payments),
        account=compose_account(resolved),
        privacy=resolved,
        noise_audit=(
            (WHICH_FULL, s_full.seed, s_full.magnitude),
            (WHICH_HALF0, s_g0.seed, s_g0.magnitude),
            (WHICH_HALF1, s_g1.seed, s_g1.magnitude),
        ),
        p=np.asarray(p, dtype=float),
        q=np.asarray(q, dtype=float),
        posterior_seed=posterior_seed,
        payments_nonnegative=params.payments_nonnegative,
    )


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def outcome_to_json(outcome: MechanismOutcome) -> dict:
    """Plain-dict form of one run for report files."""
    return {
        "theta_bar_full": [float(v) for v in outcome.theta_bar_full],
        "theta_bar_g0": [float(v) for v in outcome.theta_bar_g0],
        "theta_bar_g1": [float(v) for v in outcome.theta_bar_g1],
        "payments": [float(v) for v in outcome.payments],
        "group_assignment": [int(v) for v in outcome.group_assignment],
        "budget": outcome.budget,
        "account": {"epsilon_total": outcome.account[0], "gamma_total": outcome.account[1]},
        "privacy": {
            "epsilon": outcome.privacy.epsilon,
            "delta_n": outcome.privacy.delta_n,
            "delta_half": outcome.privacy.delta_half,
            "gamma_n": outcome.privacy.gamma_n,
            "gamma_half": outcome.privacy.gamma_half,
        },
        "noise_audit": [
            {"which": which, "seed": seed, "magnitude": magnitude}
            for which, seed, magnitude in outcome.noise_audit
        ],
        "posterior_seed": outcome.posterior_seed,
        "payments_nonnegative": outcome.payments_nonnegative,
    }


def payments_to_csv(
    outcome: MechanismOutcome, costs: np.ndarray, cost_fn: CostFunction, path
) -> None:
    """Per-agent payment table: agent_index, group, payment, cost, utility."""
    import csv
    from pathlib import Path

    costs = np.asarray(costs, dtype=float)
    if costs.shape[0] != outcome.payments.shape[0]:
        raise ConfigError("costs and payments must align by agent index")
    eps_tot, gamma_tot = outcome.account
    unit_cost = cost_fn(eps_tot, gamma_tot)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("agent_index", "group", "payment", "cost", "utility"))
        for i in range(costs.shape[0]):
            pay = float(outcome.payments[i])
            writer.writerow(
                (
                    i,
                    int(outcome.group_assignment[i]),
                    repr(pay),
                    repr(float(costs[i])),
                    repr(pay - float(costs[i]) * unit_cost),
                )
            )


def rationality_check(
    outcome: MechanismOutcome, costs: np.ndarray, cost_fn: CostFunction, tau: float
) -> float:
    """Fraction of below-threshold agents whose realized utility is nonnegative."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape[0] != outcome.payments.shape[0]:
        raise ConfigError("costs and payments must align by agent index")
    eps_tot, gamma_tot = outcome.account
    below = costs <= tau
    if not np.any(below):
        return 1.0
    utility = outcome.payments[below] - costs[below] * cost_fn(eps_tot, gamma_tot)
    return float(np.mean(utility >= 0.0))


def budget_bound(n: int, a1: float, a2: float, m_a: float) -> float:
    """Worst-case total payment n (a1 + a2 (M_A + M_A^2))."""
    if n < 0 or a1 < 0 or a2 < 0 or m_a < 0:
        raise ConfigError("budget bound inputs must be nonnegative")
    return n * (a1 + a2 * (m_a + m_a * m_a))


def rationality_floor_glm(
    a2: float, m_a: float, tau_threshold: float, cost_fn: CostFunction,
    epsilon: float, gamma_total: float,
) -> float:
    """Smallest a1 making below-threshold participation individually rational."""
    return a2 * (m_a + 3.0 * m_a * m_a) + tau_threshold * cost_fn(2.0 * epsilon, gamma_total)


def rationality_floor_heavy(
    a2: float, d: int, tau1: float, tau_theta: float, tau_threshold: float,
    cost_fn: CostFunction, epsilon: float, gamma_total: float,
) -> float:
    lin = d ** 0.25 * tau1 * tau_theta
    return a2 * (lin + 3.0 * lin * lin) + tau_threshold * cost_fn(2.0 * epsilon, gamma_total)


# ---------------------------------------------------------------------------
# Parameter schedules
# ---------------------------------------------------------------------------

_HEAVY_DELTA = (1.0 / 9.0, 1.0 / 8.0)

_SCALE_KEYS = ("tau1", "tau2", "epsilon", "alpha", "a2")


def preset_schedule(
    model: ModelKind,
    regime: str,
    n: int,
    delta: float,
    d: int,
    *,
    c: float = 1.0,
    cost_lambda: float = 1.0,
    tau_theta: float = 1.0,
    sigma: float = 1.0,
    c0: float = 1.0,
    c0_calibrated: bool = False,
    gamma_c1: float = 1.0,
    gamma_exponent: float = 1.0,
    posterior_samples: int = 10_000,
    seed: int = 0,
    payments_nonnegative: bool = False,
    scale: Optional[dict] = None,
) -> MechanismParams:
    """Fill every mechanism knob from the per-model parameter schedules.

    The exponents follow the per-model schedules; every hidden Theta(.)
    constant defaults to 1 and can be overridden through `scale`, a dict of
    multipliers for tau1, tau2, epsilon, alpha and a2. a1 is set exactly to
    the individual-rationality floor, with the threshold taken from the
    closed-form bound (1/lambda) log(1/(alpha beta)).
    """
    if n < 4:
        raise ConfigError("schedule requires n >= 4")
    mult = {k: 1.0 for k in _SCALE_KEYS}
    if scale:
        unknown = set(scale) - set(_SCALE_KEYS)
        if unknown:
            raise ConfigError(f"unknown scale overrides {sorted(unknown)}")
        mult.update({k: float(v) for k, v in scale.items()})

    log_n = math.log(n)
    if regime == HEAVY:
        if model.family != LINEAR:
            raise ConfigError("heavy schedule applies to the linear model only")
        lo, hi = _HEAVY_DELTA
        if not (lo <= delta < hi):
            raise ConfigError(f"delta = {delta} outside the heavy schedule range [{lo}, {hi})")
        polytope = PolytopeSpec()
        tau1 = mult["tau1"] * (n / log_n) ** 0.25
        tau2 = mult["tau2"] * (n / log_n) ** 0.125
        epsilon = mult["epsilon"] * n ** (-delta)
        alpha = mult["alpha"] * n ** (-1.0 + delta)
        a2 = mult["a2"] * n ** (-0.5 - 9.0 * delta)
        cost_fn = CostFunction("nonic")
    else:
        check_preset_delta(model.family, delta)
        polytope = preset_polytope(model, n, delta)
        tau1 = mult["tau1"] * sigma * math.sqrt(log_n)
        if model.family == LINEAR:
            tau2 = mult["tau2"] * n ** ((1.0 - 3.0 * delta) / 2.0)
            epsilon = mult["epsilon"] * n ** (-delta)
            a2 = mult["a2"] * n ** (-4.0 * delta)
        elif model.family == LOGISTIC:
            tau2 = mult["tau2"] * 1.0
            epsilon = mult["epsilon"] * n ** (-delta)
            a2 = mult["a2"] * n ** (-4.0 * delta)
        else:
            tau2 = mult["tau2"] * n ** 0.25
            epsilon = mult["epsilon"] * n ** (-3.0 * delta)
            a2 = mult["a2"] * n ** (-6.0 * delta)
        alpha = mult["alpha"] * n ** (-3.0 * delta)
        cost_fn = CostFunction("quartic")

    beta = n ** (-c)
    alpha = min(alpha, 1.0 - 1e-12)
    beta = min(beta, 1.0 - 1e-12)
    gamma_n = min(1.0, gamma_c1 * n ** (-gamma_exponent))
    gamma_half = min(1.0, gamma_c1 * (n // 2) ** (-gamma_exponent))
    gamma_total = gamma_n + 2.0 * gamma_half

    settings = EstimatorSettings(
        tau1=tau1, tau2=tau2, tau_theta=tau_theta, polytope=polytope, regime=regime
    )
    tau_thr = tau_alpha_beta_bound(alpha, beta, cost_lambda)
    if regime == HEAVY:
        a1 = rationality_floor_heavy(
            a2, d, tau1, tau_theta, tau_thr, cost_fn, epsilon, gamma_total
        )
    else:
        bundle = make_link_bundle(model)
        constants = compute_link_constants(bundle, polytope, tau1, tau2, tau_theta)
        a1 = rationality_floor_glm(a2, constants.m_a, tau_thr, cost_fn, epsilon, gamma_total)

    return MechanismParams(
        privacy=PrivacyParams(epsilon, None, None, gamma_n, gamma_half),
        settings=settings,
        a1=a1,
        a2=a2,
        alpha=alpha,
        beta=beta,
        cost_fn=cost_fn,
        schedule_delta=delta,
        posterior_samples=posterior_samples,
        seed=seed,
        c0=c0,
        tau_threshold=tau_thr,
        payments_nonnegative=payments_nonnegative,
        c0_calibrated=c0_calibrated,
    )
