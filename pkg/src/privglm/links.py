"""Link-function algebra for the three supported exponential-family models.

Each model is summarized by the quintuple (A, A', A'', (A')^-1, [(A')^-1]')
where A is the convex log-partition function and A' maps linear predictors to
response means:

    linear    A(a) = a^2 / 2           A'(a) = a        mean set (-inf, inf)
    logistic  A(a) = log(e^-a + e^a)   A'(a) = tanh(a)  mean set (-1, 1)
    poisson   A(a) = e^a               A'(a) = e^a      mean set (0, inf)

Because A' is only onto the interior of the response-mean set, the estimator
first clips responses to [-tau2, tau2] and then projects them onto a closed
subset of that interior (an interval here), so that (A')^-1 stays defined.

The constants (kappa0, kappa1, kappa2, m_a, eps_mbar) are worst-case
magnitudes of the five functions over the intervals the estimator actually
touches. All five functions are monotone (or unimodal with a known peak) on
those intervals for the three models, so every maximum is attained at an
interval endpoint and is computed in closed form ("endpoint analysis") rather
than by grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ConfigError, InvalidPolytopeError, LinkDomainError

ArrayLike = Union[float, np.ndarray]

LINEAR = "linear"
LOGISTIC = "logistic"
POISSON = "poisson"
FAMILIES = (LINEAR, LOGISTIC, POISSON)


def _match(out: np.ndarray, ref) -> ArrayLike:
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(ref) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ModelKind:
    """One of the three supported response models.

    ``noise_std`` is the Gaussian noise level and only meaningful for the
    linear model; the scale parameter is noise_std**2 for linear and 1 for
    the two discrete models. Zero noise is admitted as the degenerate
    deterministic-response case used by simulations.
    """

    family: str
    noise_std: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.family == LINEAR and not self.noise_std >= 0:
            raise ConfigError("linear model requires noise_std >= 0")

    @property
    def phi(self) -> float:
        return self.noise_std ** 2 if self.family == LINEAR else 1.0

    @classmethod
    def linear(cls, noise_std: float = 1.0) -> "ModelKind":
        return cls(LINEAR, noise_std)

    @classmethod
    def logistic(cls) -> "ModelKind":
        return cls(LOGISTIC)

    @classmethod
    def poisson(cls) -> "ModelKind":
        return cls(POISSON)

    def to_json(self) -> dict:
        obj = {"model": self.family}
        if self.family == LINEAR:
            obj["noise_std"] = self.noise_std
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ModelKind":
        family = obj.get("model")
        if family == LINEAR:
            return cls.linear(float(obj.get("noise_std", 1.0)))
        if family in (LOGISTIC, POISSON):
            return cls(family)
        raise ConfigError(f"bad model entry {obj!r}")


@dataclass(frozen=True)
class PolytopeSpec:
    """Closed interval [lower, upper] of admissible response means.

    Either endpoint may be infinite; infinities are kept as genuine float
    infinities in memory and serialized as the strings "-inf"/"inf" so the
    JSON form is unambiguous.
    """

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ConfigError("polytope bounds must not be NaN")
        if self.lower > self.upper:
            raise ConfigError(f"polytope lower {self.lower} exceeds upper {self.upper}")

    def project(self, y: ArrayLike) -> ArrayLike:
        out = np.clip(np.asarray(y, dtype=float), self.lower, self.upper)
        return _match(out, y)

    def to_json(self) -> dict:
        def enc(v: float):
            if v == math.inf:
                return "inf"
            if v == -math.inf:
                return "-inf"
            return v

        return {"lower": enc(self.lower), "upper": enc(self.upper)}

    @classmethod
    def from_json(cls, obj: dict) -> "PolytopeSpec":
        def dec(v) -> float:
            if v == "inf":
                return math.inf
            if v == "-inf":
                return -math.inf
            return float(v)

        return cls(dec(obj["lower"]), dec(obj["upper"]))


@dataclass(frozen=True)
class LinkBundle:
    """Callable quintuple for one model; every callable accepts scalars or arrays."""

    A: Callable[[ArrayLike], ArrayLike]
    A_prime: Callable[[ArrayLike], ArrayLike]
    A_second: Callable[[ArrayLike], ArrayLike]
    A_prime_inv: Callable[[ArrayLike], ArrayLike]
    A_prime_inv_deriv: Callable[[ArrayLike], ArrayLike]
    model: ModelKind


@dataclass(frozen=True)
class LinkConstants:
    """Worst-case link magnitudes over the intervals used by the estimator.

    kappa0   max |[(A')^-1]'| over M' union Mbar
    kappa1   max |(A')^-1|    over Mbar intersect [-tau2, tau2]
    kappa2   max |A''|        over [-tau_theta*tau1, tau_theta*tau1]
    m_a      max |A'|         over the same interval
    eps_mbar max distance from a clipped response to Mbar
    """

    kappa0: float
    kappa1: float
    kappa2: float
    m_a: float
    eps_mbar: float
    tau1: float
    tau2: float

    def __post_init__(self):
        for name in ("kappa0", "kappa1", "kappa2", "m_a", "eps_mbar"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidPolytopeError(f"link constant {name} = {v} is not finite and nonnegative")


# ---------------------------------------------------------------------------
# Per-model link functions
# ---------------------------------------------------------------------------

def _linear_A(a):
    out = 0.5 * np.square(np.asarray(a, dtype=float))
    return _match(out, a)


def _identity(a):
    out = np.asarray(a, dtype=float).copy()
    return _match(out, a)


def _ones_like(a):
    out = np.ones_like(np.asarray(a, dtype=float))
    return _match(out, a)


def _logistic_A(a):
    # log(e^-a + e^a) = |a| + log1p(e^(-2|a|)), stable for large |a|
    aa = np.abs(np.asarray(a, dtype=float))
    out = aa + np.log1p(np.exp(-2.0 * aa))
    return _match(out, a)


def _logistic_A_prime(a):
    out = np.tanh(np.asarray(a, dtype=float))
    return _match(out, a)


def _logistic_A_second(a):
    # 4 / (e^a + e^-a)^2 = 4 e^(-2|a|) / (1 + e^(-2|a|))^2
    e = np.exp(-2.0 * np.abs(np.asarray(a, dtype=float)))
    out = 4.0 * e / np.square(1.0 + e)
    return _match(out, a)


def _logistic_A_prime_inv(y):
    arr = np.asarray(y, dtype=float)
    if np.any(np.abs(arr) >= 1.0):
        raise LinkDomainError("logistic mean inverse requires |y| < 1")
    out = np.arctanh(arr)
    return _match(out, y)


def _logistic_A_prime_inv_deriv(y):
    arr = np.asarray(y, dtype=float)
    if np.any(np.abs(arr) >= 1.0):
        raise LinkDomainError("logistic mean inverse derivative requires |y| < 1")
    out = 1.0 / (1.0 - np.square(arr))
    return _match(out, y)


def _exp(a):
    out = np.exp(np.asarray(a, dtype=float))
    return _match(out, a)


def _poisson_A_prime_inv(y):
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= 0.0):
        raise LinkDomainError("poisson mean inverse requires y > 0")
    out = np.log(arr)
    return _match(out, y)


def _poisson_A_prime_inv_deriv(y):
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= 0.0):
        raise LinkDomainError("poisson mean inverse derivative requires y > 0")
    out = 1.0 / arr
    return _match(out, y)


def make_link_bundle(model: ModelKind) -> LinkBundle:
    """Closed-form link quintuple for the given model."""
    if model.family == LINEAR:
        return LinkBundle(_linear_A, _identity, _ones_like, _identity, _ones_like, model)
    if model.family == LOGISTIC:
        return LinkBundle(
            _logistic_A,
            _logistic_A_prime,
            _logistic_A_second,
            _logistic_A_prime_inv,
            _logistic_A_prime_inv_deriv,
            model,
        )
    return LinkBundle(_exp, _exp, _exp, _poisson_A_prime_inv, _poisson_A_prime_inv_deriv, model)


# ---------------------------------------------------------------------------
# Response preprocessing
# ---------------------------------------------------------------------------

def clip_response(y: ArrayLike, tau2: float) -> ArrayLike:
    """sgn(y) * min(|y|, tau2); keeps the sign, caps the magnitude at tau2."""
    if not tau2 > 0:
        raise ConfigError("tau2 must be positive")
    arr = np.asarray(y, dtype=float)
    out = np.sign(arr) * np.minimum(np.abs(arr), tau2)
    return _match(out, y)


def project_polytope(y_clipped: ArrayLike, spec: PolytopeSpec) -> ArrayLike:
    """Nearest point of [lower, upper]; an interval clamp."""
    return spec.project(y_clipped)


# delta ranges are closed on the left: the worked subsets for the logistic and
# Poisson models sit exactly at delta = 1/4.
_PRESET_DELTA = {
    LINEAR: (0.25, 1.0 / 3.0),
    LOGISTIC: (0.25, 0.5),
    POISSON: (0.25, 1.0 / 3.0),
}


def check_preset_delta(family: str, delta: float) -> None:
    lo, hi = _PRESET_DELTA[family]
    if not (lo <= delta < hi):
        raise ConfigError(
            f"delta = {delta} outside the {family} schedule range [{lo}, {hi})"
        )


def preset_polytope(model: ModelKind, n: int, delta: float) -> PolytopeSpec:
    """Per-model closed response-mean subset at sample size n.

    linear    (-inf, inf)
    logistic  [-1 + 2 n^-delta, 1 - 2 n^-delta]
    poisson   [n^-delta, inf)
    """
    if n < 2:
        raise ConfigError("preset polytope requires n >= 2")
    check_preset_delta(model.family, delta)
    if model.family == LINEAR:
        return PolytopeSpec()
    if model.family == LOGISTIC:
        eps = 2.0 * n ** (-delta)
        if eps >= 1.0:
            raise ConfigError(f"n = {n} too small for logistic subset at delta = {delta}")
        return PolytopeSpec(-1.0 + eps, 1.0 - eps)
    return PolytopeSpec(n ** (-delta), math.inf)


# ---------------------------------------------------------------------------
# Link constants via endpoint analysis
# ---------------------------------------------------------------------------

def _interval_distance(y: float, lower: float, upper: float) -> float:
    return max(0.0, lower - y, y - upper)


def compute_link_constants(
    bundle: LinkBundle,
    spec: PolytopeSpec,
    tau1: float,
    tau2: float,
    tau_theta: float,
) -> LinkConstants:
    """Evaluate the five worst-case constants for one (model, subset) pair.

    Maxima are taken at interval endpoints: on the relevant intervals
    |(A')^-1| and |[(A')^-1]'| are monotone in |y| for all three models,
    |A''| and |A'| are monotone in |a| (with the logistic |A''| peaking at 0,
    which every symmetric predictor interval contains), and the distance to
    an interval is convex in y. An infinite value, an empty intersection
    with the clip range, or a pole inside the subset signals an invalid
    subset choice and raises InvalidPolytopeError.
    """
    if not (tau1 > 0 and tau2 > 0 and tau_theta > 0):
        raise ConfigError("tau1, tau2 and tau_theta must be positive")
    lo, hi = spec.lower, spec.upper
    T = tau_theta * tau1
    family = bundle.model.family

    # Mbar intersect [-tau2, tau2]
    ilo, ihi = max(lo, -tau2), min(hi, tau2)
    if ilo > ihi:
        raise InvalidPolytopeError(
            f"subset [{lo}, {hi}] does not meet the clip range [-{tau2}, {tau2}]"
        )

    if family == LINEAR:
        kappa0 = 1.0
        kappa1 = max(abs(ilo), abs(ihi))
        kappa2 = 1.0
        m_a = T
        eps_mbar = max(0.0, lo + tau2, tau2 - hi)
        return LinkConstants(kappa0, kappa1, kappa2, m_a, eps_mbar, tau1, tau2)

    if family == LOGISTIC:
        m = max(math.tanh(T), abs(lo), abs(hi))
        if m >= 1.0:
            raise InvalidPolytopeError(
                "logistic subset touches the pole of the inverse-mean derivative at |y| = 1"
            )
        kappa0 = 1.0 / (1.0 - m * m)
        if max(abs(ilo), abs(ihi)) >= 1.0:
            raise InvalidPolytopeError("logistic subset reaches |y| = 1 inside the clip range")
        kappa1 = max(abs(math.atanh(ilo)), abs(math.atanh(ihi)))
        kappa2 = 1.0
        m_a = math.tanh(T)
        candidates = [y for y in (-1.0, 1.0) if abs(y) <= tau2]
        eps_mbar = max((_interval_distance(y, lo, hi) for y in candidates), default=0.0)
        return LinkConstants(kappa0, kappa1, kappa2, m_a, eps_mbar, tau1, tau2)

    # poisson
    if lo <= 0.0:
        raise InvalidPolytopeError(
            "poisson subset must stay strictly positive (pole of the inverse mean at 0)"
        )
    lower_reach = min(math.exp(-T), lo)  # exp underflows to 0 for huge ranges
    if lower_reach <= 0.0:
        raise InvalidPolytopeError(
            "poisson inverse-mean derivative unbounded on the predictor range"
        )
    kappa0 = 1.0 / lower_reach
    kappa1 = max(abs(math.log(ilo)), abs(math.log(ihi)))
    try:
        peak = math.exp(T)
    except OverflowError:
        raise InvalidPolytopeError("poisson mean unbounded on the predictor range")
    kappa2 = peak
    m_a = peak
    candidates = [0.0, float(math.floor(tau2))]
    eps_mbar = max(_interval_distance(y, lo, hi) for y in candidates)
    return LinkConstants(kappa0, kappa1, kappa2, m_a, eps_mbar, tau1, tau2)
