"""Closed-form estimators, covariate/response preprocessing and sensitivity bounds.

Both regimes reduce to one least-squares solve:

    sub-Gaussian  theta_hat = (X^T X)^-1 X^T (A')^-1(project(clip(y)))
    heavy-tailed  theta_hat = (Xs^T Xs)^-1 Xs^T clip(y),  Xs rows l4-shrunk

The solve goes through a rank-revealing SVD with a condition-number cap so a
degenerate design raises instead of silently amplifying noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConfigError, SingularGramError
from .links import LinkBundle, ModelKind, PolytopeSpec, clip_response, project_polytope

SUBGAUSSIAN = "subgaussian"
HEAVY = "heavy"
REGIMES = (SUBGAUSSIAN, HEAVY)


@dataclass
class Dataset:
    """Design matrix X (rows are covariates) and response vector y."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        n, d = self.X.shape
        if self.y.shape[0] != n:
            raise ConfigError(f"X has {n} rows but y has {self.y.shape[0]} entries")
        if not (n >= d >= 1):
            raise ConfigError(f"need n >= d >= 1, got n = {n}, d = {d}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ConfigError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def replace_row(self, i: int, x_new: np.ndarray, y_new: float) -> "Dataset":
        X = self.X.copy()
        y = self.y.copy()
        X[i] = np.asarray(x_new, dtype=float)
        y[i] = float(y_new)
        return Dataset(X, y)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for i in range(self.n):
                writer.writerow([repr(float(v)) for v in self.X[i]] + [repr(float(self.y[i]))])

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "y" or any(
                h != f"x{j + 1}" for j, h in enumerate(header[:-1])
            ):
                raise ConfigError(f"{path}: expected header x1..xd,y, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        arr = np.asarray(rows, dtype=float)
        if arr.size == 0:
            raise ConfigError(f"{path}: no data rows")
        return cls(arr[:, :-1], arr[:, -1])


def check_responses(data: Dataset, model: ModelKind) -> None:
    """Validate responses against the model's response set."""
    if model.family == "logistic":
        if not np.all(np.isin(data.y, (-1.0, 1.0))):
            raise ConfigError("logistic responses must lie in {-1, +1}")
    elif model.family == "poisson":
        if np.any(data.y < 0) or np.any(data.y != np.floor(data.y)):
            raise ConfigError("poisson responses must be nonnegative integers")


@dataclass(frozen=True)
class EstimatorSettings:
    """Preprocessing thresholds and regime selector.

    tau1 caps the covariate l4 norm (heavy regime only), tau2 caps |y|,
    tau_theta is the radius of the parameter ball, and cond_cap bounds the
    design condition number accepted by the solver.
    """

    tau1: float
    tau2: float
    tau_theta: float
    polytope: PolytopeSpec = field(default_factory=PolytopeSpec)
    regime: str = SUBGAUSSIAN
    cond_cap: float = 1e12

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if not (self.tau1 > 0 and self.tau2 > 0 and self.tau_theta > 0):
            raise ConfigError("tau1, tau2, tau_theta must be positive")


def _solve_least_squares(X: np.ndarray, z: np.ndarray, cond_cap: float) -> np.ndarray:
    """Least-squares solution through SVD; raise if the design is ill-conditioned."""
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] <= 0.0 or not np.isfinite(s[0]):
        raise SingularGramError("design matrix is rank deficient")
    cond = s[0] / s[-1]
    if cond > cond_cap:
        raise SingularGramError(
            f"design condition number {cond:.3e} exceeds cap {cond_cap:.3e}"
        )
    return vt.T @ ((u.T @ z) / s)


def glm_estimate(data: Dataset, bundle: LinkBundle, settings: EstimatorSettings) -> np.ndarray:
    """Closed-form GLM estimate: (X^T X)^-1 X^T (A')^-1(project(clip(y)))."""
    y_clip = clip_response(data.y, settings.tau2)
    y_proj = project_polytope(y_clip, settings.polytope)
    z = bundle.A_prime_inv(y_proj)
    return _solve_least_squares(data.X, z, settings.cond_cap)


def rows_inner(A: np.ndarray, B) -> np.ndarray:
    """Row inner products accumulated column by column in a fixed order.

    The sequential order makes a single row and the same row inside a batch
    reduce bit-identically, which the payment-recompute contract relies on.
    B may be a matrix of matching shape or a single d-vector.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        acc = A[:, 0] * B[0]
        for j in range(1, A.shape[1]):
            acc = acc + A[:, j] * B[j]
    else:
        acc = A[:, 0] * B[:, 0]
        for j in range(1, A.shape[1]):
            acc = acc + A[:, j] * B[:, j]
    return acc


def l4_shrink_rows(X: np.ndarray, tau1: float) -> np.ndarray:
    """Row-wise l4 shrinkage: cap each row's l4 norm at tau1, keep directions."""
    if not tau1 > 0:
        raise ConfigError("tau1 must be positive")
    X = np.ascontiguousarray(X, dtype=float)
    X4 = X ** 4
    norms = rows_inner(X4, np.ones(X.shape[1])) ** 0.25
    scale = np.ones_like(norms)
    over = norms > tau1
    scale[over] = tau1 / norms[over]
    return X * scale[:, None]


def l4_shrink(x: np.ndarray, tau1: float) -> np.ndarray:
    """Rescale x so its l4 norm is at most tau1, keeping the direction.

    The zero vector is a fixed point (the formula is 0/0 there; continuity
    forces 0). Delegates to the row-wise path so single vectors and matrix
    rows shrink bit-identically.
    """
    return l4_shrink_rows(np.asarray(x, dtype=float)[None, :], tau1)[0]


def heavy_estimate(data: Dataset, settings: EstimatorSettings) -> np.ndarray:
    """Heavy-tailed linear estimate on the shrunk design and clipped responses."""
    Xs = l4_shrink_rows(data.X, settings.tau1)
    y_clip = clip_response(data.y, settings.tau2)
    return _solve_least_squares(Xs, np.asarray(y_clip, dtype=float), settings.cond_cap)


def estimate(data: Dataset, bundle: LinkBundle, settings: EstimatorSettings) -> np.ndarray:
    """Regime dispatch used by the mechanism and the sensitivity oracle."""
    if settings.regime == HEAVY:
        if bundle.model.family != "linear":
            raise ConfigError("heavy regime is defined for the linear model only")
        return heavy_estimate(data, settings)
    return glm_estimate(data, bundle, settings)


def project_ball(theta: np.ndarray, tau_theta: float) -> np.ndarray:
    """Euclidean projection onto the centered ball of radius tau_theta."""
    if not tau_theta > 0:
        raise ConfigError("tau_theta must be positive")
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    if nrm <= tau_theta:
        return theta.copy()
    return theta * (tau_theta / nrm)


@dataclass(frozen=True)
class SensitivityBound:
    """One-replacement l2 sensitivity bound plus the constants that produced it."""

    delta_n: float
    regime: str
    c0: float
    n: int
    d: int
    kappa1: Optional[float] = None

    def recompute(self) -> float:
        if self.regime == SUBGAUSSIAN:
            return self.c0 * self.kappa1 * math.sqrt(self.d * math.log(self.n) / self.n)
        return self.c0 * self.d ** 0.75 * (math.log(self.n) / self.n) ** 0.125


def sensitivity_bound_subgaussian(
    n: int, d: int, kappa1: float, c0: float = 1.0
) -> SensitivityBound:
    """C0 * kappa1 * sqrt(d log n / n)."""
    if n < 2:
        raise ConfigError("sensitivity bound requires n >= 2")
    delta = c0 * kappa1 * math.sqrt(d * math.log(n) / n)
    return SensitivityBound(delta, SUBGAUSSIAN, c0, n, d, kappa1)


def sensitivity_bound_heavy(n: int, d: int, c0: float = 1.0) -> SensitivityBound:
    """C0 * d^(3/4) * (log n / n)^(1/8)."""
    if n < 2:
        raise ConfigError("sensitivity bound requires n >= 2")
    delta = c0 * d ** 0.75 * (math.log(n) / n) ** 0.125
    return SensitivityBound(delta, HEAVY, c0, n, d)


def calibrate_c0(empirical_max: float, shape_delta: float, margin: float = 1.5) -> float:
    """C0 that places the bound `margin` above an observed worst case.

    Data-dependent scaling breaks the privacy accounting, so anything run
    with a calibrated C0 must be flagged non-private in reports.
    """
    if not shape_delta > 0:
        raise ConfigError("shape_delta must be positive")
    return margin * empirical_max / shape_delta


ReplacementSampler = Callable[[np.random.Generator], Tuple[np.ndarray, float]]


def empirical_sensitivity(
    data: Dataset,
    bundle: LinkBundle,
    settings: EstimatorSettings,
    trials: int,
    seed,
    draw_replacement: ReplacementSampler,
) -> float:
    """Largest observed one-replacement shift of the estimator.

    Each trial replaces one uniformly chosen row with a fresh draw from
    `draw_replacement` and re-runs the estimator; trial t derives its
    randomness from (seed..., t), so results do not depend on execution
    order. `seed` may be an int or a tuple of ints.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    entropy = [int(v) for v in (seed if isinstance(seed, (tuple, list)) else (seed,))]
    base = estimate(data, bundle, settings)
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(entropy + [t])
        i = int(rng.integers(data.n))
        x_new, y_new = draw_replacement(rng)
        shifted = estimate(data.replace_row(i, x_new, y_new), bundle, settings)
        worst = max(worst, float(np.linalg.norm(base - shifted)))
    return worst
