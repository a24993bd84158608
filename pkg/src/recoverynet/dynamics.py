"""Recovery laws for the three layers.

* social infrastructure: a coupled logistic rate driven by neighbouring POIs
  and the county water/sewer level, in an aggregate (mean-field) form and a
  per-node daily update;
* physical infrastructure: a four-parameter generalized logistic curve;
* homes: a daily Bernoulli return draw derived from the long-run return
  probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

# Fixed scale constants of the social rate; not fitted.
SOCIAL_COUPLING = 0.001
PHYSICAL_COUPLING = 0.1

CURVE_TOL = 1e-9

# Mean intra-layer POI degree per county, from the Harvey network.
MEAN_SOCIAL_DEGREE = {
    "Harris": 139.1,
    "Fort Bend": 107.7,
    "Brazoria": 79.9,
    "Galveston": 78.5,
    "Jefferson": 70.2,
}

HUMAN_MODES = ("paper", "exact")


@dataclass(frozen=True)
class DynamicParams:
    beta_s: float
    K_s: float
    beta_p: float
    K_p: float
    N_bar: float | None = None

    def __post_init__(self):
        for name in ("beta_s", "beta_p"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("K_s", "K_p"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {getattr(self, name)!r}")
        if self.N_bar is not None and not self.N_bar > 0:
            raise ValueError(f"N_bar must be > 0, got {self.N_bar!r}")

    def to_dict(self) -> dict:
        d = {"beta_s": self.beta_s, "K_s": self.K_s, "beta_p": self.beta_p, "K_p": self.K_p}
        if self.N_bar is not None:
            d["N_bar"] = self.N_bar
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DynamicParams":
        return cls(
            float(d["beta_s"]), float(d["K_s"]), float(d["beta_p"]), float(d["K_p"]),
            None if d.get("N_bar") is None else float(d["N_bar"]),
        )


SP_DM_HARRIS = DynamicParams(beta_s=0.026, K_s=0.671, beta_p=1.432, K_p=0.901)
SP_DM_OTHER = DynamicParams(beta_s=0.093, K_s=0.736, beta_p=1.114, K_p=0.935)
BUILTIN_DYNAMICS = {"SP-DM-Harris": SP_DM_HARRIS, "SP-DM-Other": SP_DM_OTHER}


@dataclass(frozen=True)
class LogisticCurveParams:
    """``A / (1 + exp(-C (t - D))) + B``: amplitude, floor, rate, midpoint day."""

    A: float
    B: float
    C: float
    D: float

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError(f"A must be > 0, got {self.A!r}")
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C!r}")
        if not self.B >= 0:
            raise ValueError(f"B must be >= 0, got {self.B!r}")
        if self.A + self.B > 1 + CURVE_TOL:
            raise ValueError(f"A + B must not exceed 1, got {self.A + self.B!r}")

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LogisticCurveParams":
        return cls(float(d["A"]), float(d["B"]), float(d["C"]), float(d["D"]))


def logistic_term(r, K):
    return r * (1.0 - r / K)


def sp_dm_rate(r_s_mean: float, r_p_mean: float, params: DynamicParams, N_bar: float | None = None) -> float:
    """Aggregate rate of change of a county's mean POI recovery level."""
    if r_s_mean < 0 or r_p_mean < 0:
        raise ValueError("recovery levels must be non-negative")
    n = params.N_bar if N_bar is None else N_bar
    if n is None:
        raise ValueError("N_bar is required for the aggregate rate")
    return (
        SOCIAL_COUPLING * params.beta_s * n * logistic_term(r_s_mean, params.K_s)
        + PHYSICAL_COUPLING * params.beta_p * logistic_term(r_p_mean, params.K_p)
    )


def social_node_update(
    r_prev: float,
    neighbor_r_prev: Sequence[float],
    r_phys_prev: float,
    params: DynamicParams,
    beta_s_multiplier: float = 1.0,
) -> float:
    """One day of a POI's recovery: capped at 1, floored at 0.

    Neighbour terms use this node's ``K_s`` whatever county the neighbour is in.
    """
    if r_prev < 0 or r_phys_prev < 0 or any(r < 0 for r in neighbor_r_prev):
        raise ValueError("recovery levels must be non-negative")
    acc = 0.0
    for r in neighbor_r_prev:
        acc += logistic_term(r, params.K_s)
    inc = (
        SOCIAL_COUPLING * (beta_s_multiplier * params.beta_s) * acc
        + PHYSICAL_COUPLING * params.beta_p * logistic_term(r_phys_prev, params.K_p)
    )
    return max(0.0, min(1.0, r_prev + inc))


def physical_level(t: float, params: LogisticCurveParams) -> float:
    v = params.A / (1.0 + math.exp(-params.C * (t - params.D))) + params.B
    if v > 1.0:
        if v - 1.0 < CURVE_TOL:
            return 1.0
        raise ValueError(f"physical level {v!r} exceeds 1 at t={t}; curve params invalid")
    if v < 0.0:
        if -v < CURVE_TOL:
            return 0.0
        raise ValueError(f"physical level {v!r} below 0 at t={t}; curve params invalid")
    return v


def daily_return_probability(P, M: int, mode: str = "paper"):
    """Per-day return chance for an evacuee with long-run probability ``P``.

    ``paper`` spreads P evenly over M days (P / M); ``exact`` picks the daily
    rate whose M-day cumulative return probability is exactly P.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if mode == "paper":
        return P / M
    if mode == "exact":
        return 1.0 - (1.0 - P) ** (1.0 / M)
    raise ValueError(f"unknown human-update mode {mode!r}; expected one of {HUMAN_MODES}")


def human_node_update(r_prev: float, P: float, M: int, u: float, mode: str = "paper") -> int:
    if r_prev not in (0, 1):
        raise ValueError(f"home recovery level must be 0 or 1, got {r_prev!r}")
    if not 0.0 <= P <= 1.0:
        raise ValueError(f"P must lie in [0, 1], got {P!r}")
    if r_prev == 1:
        return 1
    return 1 if u < daily_return_probability(P, M, mode) else 0
