"""Parameter estimation for the recovery laws.

* :func:`fit_generalized_logistic`: bounded nonlinear least squares for the
  county water/sewer curve, with the Pearson correlation as the fit-quality
  measure;
* :func:`fit_sp_dm`: posterior mode of the aggregate social rate given a
  social series and the matching physical series (Gaussian likelihood,
  half-Cauchy rate priors, uniform capacity priors), found by multi-start
  bounded least squares, with an optional random-walk Metropolis check.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import PHYSICAL_COUPLING, SOCIAL_COUPLING, DynamicParams, LogisticCurveParams

MIN_CURVE_POINTS = 4
MIN_SERIES_DAYS = 10
MAX_LEVEL = 1.5
RHO_GATE = 0.950
DEFAULT_NOISE_SIGMA = 0.05


class DegenerateFitError(ValueError):
    def __init__(self, parameter: str, message: str):
        super().__init__(f"parameter {parameter} is unidentifiable: {message}")
        self.parameter = parameter


class FitQualityError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}; diagnostics: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ObservationSeries:
    days: tuple[int, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.days) != len(self.levels):
            raise ValueError("days and levels differ in length")
        for d in self.days:
            if int(d) != d or d < 0:
                raise ValueError(f"days must be non-negative integers, got {d!r}")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("days must be strictly increasing")
        for v in self.levels:
            if not (0.0 <= v <= MAX_LEVEL):
                raise ValueError(f"levels must lie in [0, {MAX_LEVEL}], got {v!r}")

    @classmethod
    def from_pairs(cls, pairs) -> "ObservationSeries":
        pairs = list(pairs)
        return cls(tuple(int(d) for d, _ in pairs), tuple(float(v) for _, v in pairs))

    def __len__(self):
        return len(self.days)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.days, dtype=np.float64)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.float64)

    @property
    def span(self) -> int:
        return self.days[-1] - self.days[0] + 1 if self.days else 0


def read_series_csv(path) -> ObservationSeries:
    """Two-column ``day,level`` CSV with a header row."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"day", "level"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain 'day' and 'level'")
        pairs = []
        for i, row in enumerate(reader, start=2):
            try:
                pairs.append((int(row["day"]), float(row["level"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}, row {i}: bad day/level {row['day']!r}, {row['level']!r}") from None
    try:
        return ObservationSeries.from_pairs(pairs)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be one-dimensional and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two points")
    da, db = a - a.mean(), b - b.mean()
    va, vb = float(da @ da), float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise ValueError("correlation is undefined for a zero-variance series")
    return max(-1.0, min(1.0, float(da @ db) / math.sqrt(va * vb)))


# --- generalized logistic curve ------------------------------------------------

@dataclass(frozen=True)
class CurveFit:
    params: LogisticCurveParams
    rho: float
    rmse: float
    n: int

    @property
    def accepted(self) -> bool:
        return self.rho > RHO_GATE

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), "rho": self.rho, "rmse": self.rmse, "n": self.n}


def _curve(tau, A, B, C, D):
    return A / (1.0 + np.exp(-C * (tau - D))) + B


def fit_generalized_logistic(series: ObservationSeries, min_rho: float | None = None) -> CurveFit:
    """Least-squares ``A / (1 + exp(-C (t - D))) + B`` with A > 0, C > 0, B >= 0, A + B <= 1.

    The offset is searched as ``B = u (1 - A)`` with ``u`` in [0, 1], which
    keeps every iterate feasible.  Days are measured from the first
    observation internally, so shifting all days shifts only ``D``.
    """
    if len(series) < MIN_CURVE_POINTS:
        raise ValueError(f"need at least {MIN_CURVE_POINTS} observations, got {len(series)}")
    t0 = series.days[0]
    tau = series.t - t0
    y = series.y
    span = float(tau[-1]) if tau[-1] > 0 else 1.0
    if float(np.ptp(y)) <= 1e-12:
        raise DegenerateFitError("C", "the series is flat, so no growth rate can be fitted")

    def resid(x):
        A, u, C, D = x
        return _curve(tau, A, u * (1.0 - A), C, D) - y

    def jac(x):
        A, u, C, D = x
        sig = 1.0 / (1.0 + np.exp(-C * (tau - D)))
        slope = A * sig * (1.0 - sig)
        return np.column_stack([sig - u, np.full_like(tau, 1.0 - A), slope * (tau - D), -C * slope])

    # Beyond about 10 per day the curve is a step at daily resolution and C is flat.
    c_hi = 10.0
    lo = [1e-9, 0.0, 1e-9, -2.0 * span]
    hi = [1.0, 1.0, c_hi, 3.0 * span]
    A0 = min(1.0, max(1e-3, float(np.ptp(y))))
    B0 = min(max(0.0, float(y.min())), 1.0 - A0)
    u0 = B0 / (1.0 - A0) if A0 < 1.0 else 0.0
    best = None
    for C0 in (4.0 / span, 20.0 / span, 0.5, 2.0):
        for q in (0.1, 0.3, 0.5, 0.7):
            x0 = np.clip([A0, u0, C0, q * span], lo, hi)
            r = least_squares(resid, x0, jac=jac, bounds=(lo, hi), method="trf",
                              xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=1000)
            if best is None or r.cost < best.cost - 1e-18:
                best = r
    A, u, C, D = best.x
    fitted = _curve(tau, A, u * (1.0 - A), C, D)
    if float(np.ptp(fitted)) <= 1e-12:
        raise DegenerateFitError("C", "the fitted curve is flat over the observed days")
    B = u * (1.0 - A)
    # The reparametrisation can leave A + B a few ulps above 1.
    params = LogisticCurveParams(float(A), float(max(0.0, min(B, 1.0 - A))), float(C), float(D + t0))
    fit = CurveFit(params, pearson(y, fitted), float(np.sqrt(np.mean((fitted - y) ** 2))), len(series))
    if min_rho is not None and not fit.rho > min_rho:
        raise FitQualityError(f"fit correlation {fit.rho:.4f} does not exceed {min_rho}")
    return fit


# --- aggregate social-rate MAP --------------------------------------------------

PARAM_NAMES = ("beta_s", "K_s", "beta_p", "K_p")


@dataclass(frozen=True)
class PriorSpec:
    beta_scale: float = 1.0
    K_low: float = 0.5
    K_high: float = 1.0
    # Rate search ceiling; far in the half-Cauchy tail.
    beta_max: float = 50.0

    def __post_init__(self):
        if not self.beta_scale > 0:
            raise ValueError("beta_scale must be > 0")
        if not 0 < self.K_low < self.K_high <= 1:
            raise ValueError("capacity bounds must satisfy 0 < K_low < K_high <= 1")
        if not self.beta_max > 0:
            raise ValueError("beta_max must be > 0")

    def log_density(self, theta) -> float:
        bs, ks, bp, kp = theta
        if min(bs, bp) < 0 or not (self.K_low <= ks <= self.K_high and self.K_low <= kp <= self.K_high):
            return -math.inf
        s = self.beta_scale
        half_cauchy = math.log(2.0 / (math.pi * s))
        uniform = -math.log(self.K_high - self.K_low)
        return (2 * half_cauchy - math.log1p((bs / s) ** 2) - math.log1p((bp / s) ** 2) + 2 * uniform)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        b = np.abs(self.beta_scale * rng.standard_cauchy((n, 2)))
        k = rng.uniform(self.K_low, self.K_high, (n, 2))
        return np.column_stack([b[:, 0], k[:, 0], b[:, 1], k[:, 1]])

    def bounds(self) -> list[tuple[float, float]]:
        b = (1e-8, self.beta_max)
        k = (self.K_low, self.K_high)
        return [b, k, b, k]


class SocialTrajectory:
    """Aggregate social level integrated with RK4 from the first observation.

    The physical level between observations is linearly interpolated from the
    physical series; it must cover the social series' days.
    """

    def __init__(self, series_s: ObservationSeries, series_p: ObservationSeries, N_bar: float, h: float = 0.25):
        if not N_bar > 0:
            raise ValueError(f"N_bar must be > 0, got {N_bar!r}")
        if series_p.days[0] > series_s.days[0] or series_p.days[-1] < series_s.days[-1]:
            raise ValueError("the physical series must cover the social series' days")
        self.N_bar = float(N_bar)
        t_first, t_last = series_s.days[0], series_s.days[-1]
        steps_per_day = max(1, int(round(1.0 / h)))
        self.h = 1.0 / steps_per_day
        n = (t_last - t_first) * steps_per_day
        grid = t_first + 0.5 * self.h * np.arange(2 * n + 1)
        self.rp = np.interp(grid, series_p.t, series_p.y).tolist()
        self.n_steps = n
        self.obs_steps = [(d - t_first) * steps_per_day for d in series_s.days]
        self.r0 = series_s.levels[0]

    def __call__(self, theta) -> np.ndarray:
        bs, ks, bp, kp = (float(v) for v in theta)
        a = SOCIAL_COUPLING * bs * self.N_bar
        c = PHYSICAL_COUPLING * bp
        rp, h = self.rp, self.h
        r = self.r0
        out = np.empty(len(self.obs_steps))
        j = 0
        for k in range(self.n_steps + 1):
            if j < len(self.obs_steps) and self.obs_steps[j] == k:
                out[j] = r
                j += 1
            if k == self.n_steps:
                break
            p0, p1, p2 = rp[2 * k], rp[2 * k + 1], rp[2 * k + 2]
            g0, g1, g2 = c * p0 * (1 - p0 / kp), c * p1 * (1 - p1 / kp), c * p2 * (1 - p2 / kp)
            k1 = a * r * (1 - r / ks) + g0
            x = r + 0.5 * h * k1
            k2 = a * x * (1 - x / ks) + g1
            x = r + 0.5 * h * k2
            k3 = a * x * (1 - x / ks) + g1
            x = r + h * k3
            k4 = a * x * (1 - x / ks) + g2
            r = r + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not math.isfinite(r) or abs(r) > 1e6:
                out[j:] = math.inf
                return out
        return out


@dataclass
class SPDMFit:
    params: DynamicParams
    log_posterior: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), "log_posterior": self.log_posterior, "diagnostics": self.diagnostics}


def log_posterior(theta, traj: SocialTrajectory, y: np.ndarray, prior: PriorSpec, noise_sigma: float) -> float:
    lp = prior.log_density(theta)
    if lp == -math.inf:
        return -math.inf
    pred = traj(theta)
    if not np.all(np.isfinite(pred)):
        return -math.inf
    r = (pred - y) / noise_sigma
    return lp - 0.5 * float(r @ r) - len(y) * math.log(noise_sigma * math.sqrt(2 * math.pi))


def _projected_gradient(f, x, bounds, eps=1e-6) -> np.ndarray:
    """Central-difference gradient with components pushing into an active bound zeroed."""
    g = np.zeros(len(x))
    for i, (lo, hi) in enumerate(bounds):
        e = eps * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] = min(hi, x[i] + e)
        xm[i] = max(lo, x[i] - e)
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
        tol = 1e-6 * max(1.0, abs(hi - lo))
        if (x[i] - lo <= tol and g[i] > 0) or (hi - x[i] <= tol and g[i] < 0):
            g[i] = 0.0
    return g


def _at_bound(x, bounds) -> dict:
    flags = {}
    for name, v, (lo, hi) in zip(PARAM_NAMES, x, bounds):
        tol = 1e-6 * max(1.0, hi - lo)
        flags[name] = "lower" if v - lo <= tol else "upper" if hi - v <= tol else None
    return flags


def metropolis(logp, x0, n_samples: int, step: Sequence[float], rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Random-walk Metropolis chain from ``x0``; returns (samples, acceptance rate)."""
    x = np.asarray(x0, dtype=np.float64).copy()
    lx = logp(x)
    step = np.asarray(step, dtype=np.float64)
    out = np.empty((n_samples, len(x)))
    accepted = 0
    for i in range(n_samples):
        prop = x + step * rng.standard_normal(len(x))
        lp = logp(prop)
        if math.log(rng.random() + 1e-300) < lp - lx:
            x, lx = prop, lp
            accepted += 1
        out[i] = x
    return out, accepted / n_samples if n_samples else 0.0


def fit_sp_dm(
    series_s: ObservationSeries,
    series_p: ObservationSeries,
    N_bar: float,
    prior: PriorSpec | None = None,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    *,
    seed: int = 0,
    n_starts: int = 16,
    workers: int = 1,
    gradient_tol: float = 1e-3,
    sample: int = 0,
    acceptance_bounds: tuple[float, float] = (0.05, 0.95),
) -> SPDMFit:
    """Posterior mode of (beta_s, K_s, beta_p, K_p) for the aggregate social rate.

    Starts are drawn from the prior with ``seed`` and optimized independently;
    the best log posterior wins, ties going to the lowest start index.  The
    fit fails with :class:`ConvergenceError` if the projected gradient norm at
    the mode exceeds ``gradient_tol * max(1, |log posterior|)``, or, when
    ``sample`` > 0 Metropolis steps are requested, if the acceptance rate falls
    outside ``acceptance_bounds``.
    """
    prior = prior or PriorSpec()
    if not noise_sigma > 0:
        raise ValueError("noise_sigma must be > 0")
    if len(series_s) < MIN_SERIES_DAYS:
        raise ValueError(f"the social series needs at least {MIN_SERIES_DAYS} daily observations, got {len(series_s)}")
    traj = SocialTrajectory(series_s, series_p, N_bar)
    y = series_s.y
    bounds = prior.bounds()

    def neg(x):
        v = log_posterior(x, traj, y, prior, noise_sigma)
        return 1e300 if v == -math.inf else -v

    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    # Starts beyond a rate of 10 add nothing but slow, stiff trajectories.
    starts = np.clip(prior.sample(rng, n_starts), lo, np.minimum(hi, [10.0, hi[1], 10.0, hi[3]]))

    # The negative log posterior is half a sum of squares once each half-Cauchy
    # term -log(1 + (b/s)^2) is written as the residual sqrt(2 log(1 + (b/s)^2)).
    scale = prior.beta_scale
    n_obs = len(y)

    def residuals(x):
        pred = traj(x)
        if not np.all(np.isfinite(pred)):
            return np.full(n_obs + 2, 1e10)
        return np.concatenate([
            (pred - y) / noise_sigma,
            [math.sqrt(2.0 * math.log1p((x[0] / scale) ** 2)), math.sqrt(2.0 * math.log1p((x[2] / scale) ** 2))],
        ])

    def solve(x0):
        r = least_squares(residuals, x0, bounds=(lo, hi), method="trf", x_scale="jac",
                          xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=3000)
        r.fun_value = float(neg(np.clip(r.x, lo, hi)))
        return r

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, starts))
    else:
        results = [solve(x0) for x0 in starts]
    order = sorted(range(len(results)), key=lambda i: (results[i].fun_value, i))
    best_i = order[0]
    best = results[best_i]
    x = np.clip(best.x, lo, hi)
    f = float(neg(x))
    grad = _projected_gradient(neg, x, bounds)
    gnorm = float(np.linalg.norm(grad))
    diagnostics = {
        "gradient_norm": gnorm,
        "gradient_tol": gradient_tol * max(1.0, abs(f)),
        "at_bound": _at_bound(x, bounds),
        "best_start": best_i,
        "starts": len(results),
        "optimizer_success": bool(best.success),
        "optimizer_message": str(best.message),
        "evaluations": int(best.nfev),
    }
    if sample:
        step = 0.02 * np.maximum(np.abs(x), 1e-3)
        chain, rate = metropolis(lambda v: -neg(v) if neg(v) < 1e300 else -math.inf, x, sample, step,
                                 np.random.default_rng([seed, 1]))
        diagnostics["acceptance_rate"] = rate
        diagnostics["posterior_mean"] = dict(zip(PARAM_NAMES, chain.mean(axis=0).tolist()))
        lo_a, hi_a = acceptance_bounds
        if not lo_a <= rate <= hi_a:
            raise ConvergenceError(f"sampler acceptance rate {rate:.3f} outside [{lo_a}, {hi_a}]", diagnostics)
    if f >= 1e300 or not gnorm <= diagnostics["gradient_tol"]:
        raise ConvergenceError("optimizer did not reach a stationary point", diagnostics)
    params = DynamicParams(float(x[0]), float(x[1]), float(x[2]), float(x[3]), N_bar=float(N_bar))
    return SPDMFit(params, -f, diagnostics)


def simulate_aggregate(params: DynamicParams, r0: float, physical: Sequence[float], N_bar: float,
                       days: int, h: float = 0.25) -> np.ndarray:
    """Aggregate social level on days 0..days driven by per-day physical levels."""
    rp = list(physical)
    if len(rp) < days + 1:
        raise ValueError("need a physical level for every day")
    s = ObservationSeries(tuple(range(days + 1)), tuple([0.0] * (days + 1)))
    p = ObservationSeries(tuple(range(days + 1)), tuple(float(v) for v in rp[: days + 1]))
    traj = SocialTrajectory(s, p, N_bar, h)
    traj.r0 = float(r0)
    return traj((params.beta_s, params.K_s, params.beta_p, params.K_p))
