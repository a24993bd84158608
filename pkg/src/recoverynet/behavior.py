"""Binary-logit return-home models and the survey pipeline that calibrates them.

Feature names follow the household recovery survey schema, with the
sub-question letter joined by an underscore (``q_human_a`` rather than
``q_human,a``) so they survive as CSV headers.  The comma spelling is accepted
on input.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HUMAN_FEATURES = ("q_human_a", "q_human_b")
SOCIAL_FEATURES = ("q_social_a", "q_social_b", "q_social_c", "q_social_d", "q_social_e")
PHYSICAL_FEATURES = ("q_physical_a", "q_physical_b", "q_physical_c", "q_physical_d", "q_physical_e")
BINARY_FEATURES = ("q_house", "q_sex")
FRACTION_FEATURES = HUMAN_FEATURES + SOCIAL_FEATURES + PHYSICAL_FEATURES
MODEL_FEATURES = ("q_house", "q_income") + FRACTION_FEATURES
SURVEY_VARIABLES = ("q_age", "q_sex", "q_race") + MODEL_FEATURES
OUTCOMES = ("y_evacuate", "y_return")

# Nine income bands: (label, lower bound, upper bound, value fed to the model).
INCOME_BANDS = (
    ("<15K", 0.0, 15_000.0, 15_000.0),
    ("15-30K", 15_000.0, 30_000.0, 22_500.0),
    ("30-45K", 30_000.0, 45_000.0, 37_500.0),
    ("45-60K", 45_000.0, 60_000.0, 52_500.0),
    ("60-75K", 60_000.0, 75_000.0, 67_500.0),
    ("75-90K", 75_000.0, 90_000.0, 82_500.0),
    ("90-105K", 90_000.0, 105_000.0, 97_500.0),
    ("105-120K", 105_000.0, 120_000.0, 112_500.0),
    (">120K", 120_000.0, math.inf, 120_000.0),
)
_BAND_EDGES = [b[2] for b in INCOME_BANDS[:-1]]


class FeatureError(ValueError):
    pass


class SeparationError(ValueError):
    """Raised when the logit likelihood has no finite maximiser."""


class ImputationError(ValueError):
    pass


def canonical_name(name: str) -> str:
    return name.strip().replace(",", "_").replace(" ", "")


def income_band(income_usd: float) -> int:
    """Index (0..8) of the survey income band containing ``income_usd``."""
    return bisect_right(_BAND_EDGES, income_usd)


def income_to_dollars(value) -> float:
    """Map a survey income answer to the dollar value used as a regressor.

    Accepts a band label (``"60-75K"``), a 1-based band number given as a
    string (``"5"``), or a number already in dollars.
    """
    if isinstance(value, str):
        v = value.strip().replace("$", "").replace(" ", "")
        for i, band in enumerate(INCOME_BANDS):
            if v == band[0] or v == str(i + 1):
                return band[3]
        return float(v)
    return float(value)


@dataclass(frozen=True)
class LogitModel:
    name: str
    intercept: float
    coefficients: tuple[tuple[str, float], ...]
    std_errors: tuple[tuple[str, float], ...] | None = None
    mcfadden_r2: float | None = None
    intercept_se: float | None = None

    def __post_init__(self):
        coefs = tuple((canonical_name(k), float(v)) for k, v in self.coefficients)
        object.__setattr__(self, "coefficients", coefs)
        names = [k for k, _ in coefs]
        unknown = [n for n in names if n not in MODEL_FEATURES]
        if unknown:
            raise FeatureError(f"unknown model features: {unknown}")
        if len(set(names)) != len(names):
            raise FeatureError(f"duplicate features in model: {names}")
        for group, label in (
            (HUMAN_FEATURES, "q_human"),
            (SOCIAL_FEATURES, "q_social"),
            (PHYSICAL_FEATURES, "q_physical"),
        ):
            k = sum(n in group for n in names)
            if k != 1:
                raise FeatureError(f"model must use exactly one {label} feature, found {k}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.coefficients)

    @property
    def income_in_model(self) -> bool:
        return "q_income" in self.feature_names

    def feature_for(self, group: str) -> str:
        """The model's chosen feature among ``q_human``/``q_social``/``q_physical``."""
        pool = {"q_human": HUMAN_FEATURES, "q_social": SOCIAL_FEATURES, "q_physical": PHYSICAL_FEATURES}[group]
        return next(n for n in self.feature_names if n in pool)

    def to_dict(self) -> dict:
        d = {"name": self.name, "intercept": self.intercept, "coefficients": dict(self.coefficients)}
        if self.std_errors is not None:
            d["std_errors"] = dict(self.std_errors)
        if self.mcfadden_r2 is not None:
            d["mcfadden_r2"] = self.mcfadden_r2
        if self.intercept_se is not None:
            d["intercept_se"] = self.intercept_se
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LogitModel":
        se = d.get("std_errors")
        return cls(
            name=d.get("name", "custom"),
            intercept=float(d["intercept"]),
            coefficients=tuple(d["coefficients"].items()),
            std_errors=tuple(se.items()) if se else None,
            mcfadden_r2=d.get("mcfadden_r2"),
            intercept_se=d.get("intercept_se"),
        )


PD_BM_HARRIS = LogitModel(
    name="PD-BM-Harris",
    intercept=-1.904,
    coefficients=(
        ("q_house", 1.520),
        ("q_human_a", 1.638),
        ("q_social_e", -1.756),
        ("q_physical_b", 1.171),
    ),
)
PD_BM_OTHER = LogitModel(
    name="PD-BM-Other",
    intercept=-2.379,
    coefficients=(
        ("q_income", 2.26e-5),
        ("q_human_b", 3.298),
        ("q_social_c", -4.845),
        ("q_physical_b", 1.675),
    ),
)
BUILTIN_MODELS = {m.name: m for m in (PD_BM_HARRIS, PD_BM_OTHER)}


def save_model(model: LogitModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path: str | Path) -> LogitModel:
    return LogitModel.from_dict(json.loads(Path(path).read_text()))


def _check_value(name: str, v: float) -> None:
    if math.isnan(v):
        raise FeatureError(f"feature {name} is NaN")
    if name in BINARY_FEATURES and v not in (0.0, 1.0):
        raise FeatureError(f"feature {name} must be 0 or 1, got {v!r}")
    if name in FRACTION_FEATURES and not 0.0 <= v <= 1.0:
        raise FeatureError(f"feature {name} must lie in [0, 1], got {v!r}")
    if name == "q_income" and v < 0:
        raise FeatureError(f"feature q_income must be >= 0, got {v!r}")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def linear_predictor(model: LogitModel, x: Mapping[str, float]) -> float:
    z = model.intercept
    for name, coef in model.coefficients:
        z = z + coef * x[name]
    return z


def return_probability(model: LogitModel, x: Mapping[str, float]) -> float:
    """Long-run return probability of an evacuee with features ``x``."""
    x = {canonical_name(k): float(v) for k, v in x.items()}
    missing = [n for n in model.feature_names if n not in x]
    if missing:
        raise FeatureError(f"missing features for {model.name}: {missing}")
    extra = sorted(set(x) - set(model.feature_names))
    if extra:
        warnings.warn(f"ignoring features not used by {model.name}: {extra}", stacklevel=2)
    for n in model.feature_names:
        _check_value(n, x[n])
    return float(sigmoid(np.array([linear_predictor(model, x)]))[0])


def return_probability_batch(model: LogitModel, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorised ``return_probability`` over equal-length feature columns (unchecked)."""
    z = np.full(len(next(iter(columns.values()))), model.intercept, dtype=np.float64)
    for name, coef in model.coefficients:
        z = z + coef * columns[name]
    return sigmoid(z)


def _sequential_sum(values) -> float:
    # Left-to-right in neighbour order, matching the simulator's sparse row sums.
    acc = 0.0
    for v in values:
        acc += float(v)
    return acc


def extract_features(net, h: int, human_prev: np.ndarray, social_now: np.ndarray,
                     physical_now: np.ndarray, model: LogitModel) -> dict[str, float]:
    """Features of home ``h`` as the model sees them during simulation.

    The neighbour feature is the mean level of adjacent homes in
    ``human_prev``; the POI feature is the mean level of POIs linked to the
    home in ``social_now`` (capped at 1, since POI levels can start above
    baseline); the water/sewer feature is the county node's level in
    ``physical_now``.  Categories with no neighbours give 0.
    """
    hn = net.human_nodes[h]
    nb = net.neighbors("human", h)
    sn = net.social_of_human(h)
    q_h = _sequential_sum(human_prev[nb]) / len(nb) if len(nb) else 0.0
    q_s = min(1.0, _sequential_sum(social_now[sn]) / len(sn)) if len(sn) else 0.0
    out = {
        model.feature_for("q_human"): q_h,
        model.feature_for("q_social"): q_s,
        model.feature_for("q_physical"): float(physical_now[net.human_physical[h]]),
    }
    if "q_house" in model.feature_names:
        out["q_house"] = 1.0 if hn.owns_house else 0.0
    if "q_income" in model.feature_names:
        out["q_income"] = float(hn.income_usd)
    return out


@dataclass
class SurveyRecord:
    respondent_id: str
    values: dict[str, float | None] = field(default_factory=dict)

    def get(self, name: str):
        return self.values.get(canonical_name(name))


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def preprocess_survey(records: Iterable[SurveyRecord]) -> list[SurveyRecord]:
    """Keep evacuated respondents and mean-impute missing answers.

    Records without a ``y_return`` answer are dropped as well, because the
    dependent variable cannot be imputed.
    """
    kept = [
        r for r in records
        if not _is_missing(r.get("y_evacuate")) and float(r.get("y_evacuate")) == 1.0
        and not _is_missing(r.get("y_return"))
    ]
    variables = sorted({k for r in kept for k in r.values if k not in OUTCOMES})
    means = {}
    for var in variables:
        vals = [float(r.values[var]) for r in kept if not _is_missing(r.values.get(var))]
        if not vals:
            raise ImputationError(f"variable {var} is missing in every retained record")
        means[var] = math.fsum(vals) / len(vals)
    out = []
    for r in kept:
        vals = {
            k: (means[k] if _is_missing(r.values.get(k)) else float(r.values[k]))
            for k in variables
        }
        for y in OUTCOMES:
            vals[y] = float(r.values[y])
        out.append(SurveyRecord(r.respondent_id, vals))
    return out


def read_survey_csv(path: str | Path) -> list[SurveyRecord]:
    """Parse a survey CSV; blank cells become missing, income labels become dollars."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rid = row.pop("respondent_id", None) or str(len(out))
            vals: dict[str, float | None] = {}
            for k, v in row.items():
                name = canonical_name(k)
                if v is None or v.strip() == "":
                    vals[name] = None
                elif name == "q_income":
                    vals[name] = income_to_dollars(v)
                elif name == "q_race":
                    try:
                        vals[name] = float(v)
                    except ValueError:
                        vals[name] = None
                else:
                    vals[name] = float(v)
            out.append(SurveyRecord(rid, vals))
    return out


@dataclass
class LogitFit:
    model: LogitModel
    log_likelihood: float
    null_log_likelihood: float
    gradient: np.ndarray
    iterations: int
    n: int

    @property
    def mcfadden_r2(self) -> float:
        return 1.0 - self.log_likelihood / self.null_log_likelihood


def _loglik(beta, X, y):
    z = X @ beta
    # log(1 + e^z) computed stably
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def fit_logit(
    records: Sequence[SurveyRecord] | None,
    feature_names: Sequence[str],
    dependent: str = "y_return",
    *,
    X: np.ndarray | None = None,
    y: np.ndarray | None = None,
    name: str = "fitted",
    max_iter: int = 100,
    tol: float = 1e-10,
    coef_limit: float = 50.0,
    require_schema: bool = True,
) -> LogitFit:
    """Maximum-likelihood binary logit by Newton-Raphson / IRLS.

    Pass either survey ``records`` or a design matrix ``X`` (without the
    intercept column) with labels ``y``.  ``require_schema=False`` lifts the
    one-feature-per-category rule so arbitrary designs (e.g. intercept-only)
    can be fitted; the returned model is then only usable with the batch API.
    """
    feature_names = [canonical_name(n) for n in feature_names]
    if X is None:
        rows = []
        ys = []
        for r in records:
            row = []
            for n in feature_names:
                v = r.get(n)
                if _is_missing(v):
                    raise FeatureError(f"record {r.respondent_id} is missing {n}")
                row.append(income_to_dollars(v) if n == "q_income" else float(v))
            rows.append(row)
            ys.append(float(r.get(dependent)))
        X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
        y = np.array(ys, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"dependent variable {dependent} must be binary")
    if n < 10 * max(1, len(feature_names)):
        raise ValueError(f"need at least {10 * max(1, len(feature_names))} records, got {n}")
    if y.min() == y.max():
        raise SeparationError(f"dependent variable {dependent} is constant; likelihood is unbounded")

    design = np.column_stack([np.ones(n), X])
    # Scale columns so Newton steps are well conditioned (income is in dollars).
    scale = np.maximum(np.abs(design).max(axis=0), 1e-300)
    scale[0] = 1.0
    Z = design / scale
    beta = np.zeros(Z.shape[1])
    ybar = y.mean()
    beta[0] = math.log(ybar / (1 - ybar))
    labels = ["intercept"] + feature_names
    it = 0
    for it in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-(Z @ beta)))
        w = p * (1 - p)
        grad = Z.T @ (y - p)
        hess = (Z * w[:, None]).T @ Z
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix; data are (quasi-)separated") from None
        beta = beta + step
        coef = beta / scale
        # Either test trips under separation: raw coefficients, or per-unit-range ones for wide columns.
        bad = [
            nm for nm, c, b in zip(labels, coef, beta)
            if not (abs(c) <= coef_limit and abs(b) <= coef_limit)
        ]
        if bad:
            raise SeparationError(f"|coefficient| exceeds {coef_limit} for {bad}; quasi-separation")
        if np.max(np.abs(step)) < tol:
            break

    p = 1.0 / (1.0 + np.exp(-(design @ coef)))
    w = p * (1 - p)
    grad = design.T @ (y - p)
    cov = np.linalg.inv((design * w[:, None]).T @ design)
    se = np.sqrt(np.diag(cov))
    ll = _loglik(coef, design, y)
    ll0 = float(n * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar)))
    coefs = tuple(zip(feature_names, coef[1:].tolist()))
    ses = tuple(zip(feature_names, se[1:].tolist()))
    r2 = 1.0 - ll / ll0
    cls = LogitModel if require_schema else _UncheckedLogit
    model = cls(name, float(coef[0]), coefs, ses, r2, float(se[0]))
    return LogitFit(model, ll, ll0, grad, it, n)


@dataclass(frozen=True)
class _UncheckedLogit(LogitModel):
    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", tuple((canonical_name(k), float(v)) for k, v in self.coefficients)
        )
