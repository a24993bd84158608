"""Daily agent-based recovery loop over a :class:`MultilayerNetwork`.

Each step updates, in order, the county water/sewer nodes, every POI and
every still-evacuated home.  A layer reads only finished snapshots (the
previous day, or layers already updated today) and writes a fresh array, so
splitting nodes across worker threads cannot change the result.  Home draws
come from :mod:`recoverynet.rng`, keyed by (seed, node, day).
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import rng
from .behavior import BUILTIN_MODELS, LogitModel, income_band, INCOME_BANDS, return_probability_batch
from .dynamics import (
    HUMAN_MODES,
    PHYSICAL_COUPLING,
    SOCIAL_COUPLING,
    SP_DM_HARRIS,
    SP_DM_OTHER,
    DynamicParams,
    LogisticCurveParams,
    daily_return_probability,
    logistic_term,
    physical_level,
)
from .network import Layer, MultilayerNetwork

DEFAULT_DAYS = 60
DEFAULT_T0 = "2017-08-30"
URBAN_COUNTY = "Harris"


@dataclass(frozen=True)
class Scenario:
    id: object
    lambda_p: float
    lambda_s: float

    def __post_init__(self):
        if not self.lambda_p >= 1 or not self.lambda_s >= 1:
            raise ValueError(
                f"scenario multipliers must be >= 1, got ({self.lambda_p}, {self.lambda_s})"
            )

    def to_dict(self) -> dict:
        return {"id": self.id, "lambda_p": self.lambda_p, "lambda_s": self.lambda_s}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(d.get("id", "custom"), float(d["lambda_p"]), float(d["lambda_s"]))


SCENARIOS = {
    i: Scenario(i, float(lp), float(ls))
    for i, (lp, ls) in enumerate(
        [(1, 1), (2, 1), (4, 1), (1, 2), (1, 4), (2, 2), (2, 4), (4, 2), (4, 4)], start=1
    )
}


class ConfigError(ValueError):
    pass


@dataclass
class SimulationConfig:
    """Everything a run needs besides the network and day-0 levels.

    ``M`` is the number of daily update steps; a run records days 0..M.
    """

    curves: dict[str, LogisticCurveParams]
    dynamics: dict[str, DynamicParams]
    behavior_routing: dict[str, str]
    models: dict[str, LogitModel] = field(default_factory=lambda: dict(BUILTIN_MODELS))
    M: int = DEFAULT_DAYS
    t0: str = DEFAULT_T0
    seed: int = 0
    mode: str = "paper"
    freeze_probability: bool = False
    strict_eq7: bool = False
    physical_init: str = "curve"
    workers: int = 1

    def __post_init__(self):
        if int(self.M) < 1:
            raise ConfigError(f"M must be >= 1, got {self.M}")
        self.M = int(self.M)
        self.seed = rng.check_seed(self.seed)
        if self.mode not in HUMAN_MODES:
            raise ConfigError(f"mode must be one of {HUMAN_MODES}, got {self.mode!r}")
        if self.physical_init not in ("curve", "supplied"):
            raise ConfigError(f"physical_init must be 'curve' or 'supplied', got {self.physical_init!r}")
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for county, name in self.behavior_routing.items():
            if name not in self.models:
                raise ConfigError(f"county {county!r} routes to unknown model {name!r}")

    @classmethod
    def default(cls, curves: Mapping[str, LogisticCurveParams], **kw) -> "SimulationConfig":
        """Harris gets the Harris models, every other county the shared ones."""
        counties = list(curves)
        return cls(
            curves=dict(curves),
            dynamics={c: SP_DM_HARRIS if c == URBAN_COUNTY else SP_DM_OTHER for c in counties},
            behavior_routing={c: "PD-BM-Harris" if c == URBAN_COUNTY else "PD-BM-Other" for c in counties},
            **kw,
        )

    def check_counties(self, counties: Sequence[str]) -> None:
        for c in counties:
            missing = [
                what for what, table in (
                    ("curve", self.curves), ("dynamics", self.dynamics), ("behavior model", self.behavior_routing)
                ) if c not in table
            ]
            if missing:
                raise ConfigError(f"county {c!r} has no {', '.join(missing)} parameters")

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "t0": self.t0,
            "seed": self.seed,
            "mode": self.mode,
            "freeze_probability": self.freeze_probability,
            "strict_eq7": self.strict_eq7,
            "physical_init": self.physical_init,
            "workers": self.workers,
            "curves": {c: p.to_dict() for c, p in self.curves.items()},
            "dynamics": {c: p.to_dict() for c, p in self.dynamics.items()},
            "behavior_routing": dict(self.behavior_routing),
            "models": {n: m.to_dict() for n, m in self.models.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimulationConfig":
        models = dict(BUILTIN_MODELS)
        models.update({n: LogitModel.from_dict(m) for n, m in d.get("models", {}).items()})
        kw = {k: d[k] for k in (
            "M", "t0", "seed", "mode", "freeze_probability", "strict_eq7", "physical_init", "workers"
        ) if k in d}
        return cls(
            curves={c: LogisticCurveParams.from_dict(p) for c, p in d["curves"].items()},
            dynamics={c: DynamicParams.from_dict(p) for c, p in d["dynamics"].items()},
            behavior_routing=dict(d["behavior_routing"]),
            models=models,
            **kw,
        )


@dataclass
class InitialLevels:
    human: np.ndarray
    social: np.ndarray
    physical: np.ndarray | None = None


@dataclass
class SimulationState:
    """Day ``t`` plus every recorded day's per-node levels (day 0 first)."""

    t: int
    human: list[np.ndarray]
    social: list[np.ndarray]
    physical: list[np.ndarray]
    # Per-county gap between the recorded physical level and its baseline curve.
    physical_excess: np.ndarray
    frozen_P: np.ndarray | None = None

    @property
    def days(self) -> int:
        return self.t + 1

    def levels(self, layer: Layer, day: int | None = None) -> np.ndarray:
        hist = {Layer.HUMAN: self.human, Layer.SOCIAL: self.social, Layer.PHYSICAL: self.physical}[Layer(layer)]
        return hist[self.t if day is None else day]

    def matrix(self, layer: Layer) -> np.ndarray:
        """(days, nodes) array of the layer's history."""
        hist = {Layer.HUMAN: self.human, Layer.SOCIAL: self.social, Layer.PHYSICAL: self.physical}[Layer(layer)]
        return np.vstack(hist) if hist[0].size else np.zeros((len(hist), 0))


class _Plan:
    """Per (network, config) lookup tables reused on every step."""

    def __init__(self, net: MultilayerNetwork, config: SimulationConfig):
        config.check_counties(net.counties)
        self.net = net
        self.config = config
        self.curves = [config.curves[c] for c in net.counties]
        self.curve_table = np.array(
            [[physical_level(t, p) for p in self.curves] for t in range(config.M + 1)]
        ).reshape(config.M + 1, len(self.curves))

        # Social nodes grouped by their county's dynamics; groups share one neighbour pass.
        county_params = [config.dynamics[c] for c in net.counties]
        self.social_groups = []
        for params in dict.fromkeys(county_params):
            phys_ids = [i for i, p in enumerate(county_params) if p == params]
            rows = np.flatnonzero(np.isin(net.social_physical, phys_ids))
            self.social_groups.append((params, rows))

        county_models = [config.models[config.behavior_routing[c]] for c in net.counties]
        self.models = county_models
        self.human_model_idx = np.empty(net.n_human, dtype=np.int64)
        self.model_list: list[LogitModel] = []
        for i, m in enumerate(dict.fromkeys(county_models)):
            self.model_list.append(m)
            phys_ids = [j for j, mm in enumerate(county_models) if mm == m]
            self.human_model_idx[np.isin(net.human_physical, phys_ids)] = i

        self.human_deg = np.diff(net.human_adj.indptr).astype(np.float64)
        self.hs_deg = np.diff(net.human_social_adj.indptr).astype(np.float64)
        self.owns = np.array([1.0 if h.owns_house else 0.0 for h in net.human_nodes])
        self.income = np.array([float(h.income_usd) for h in net.human_nodes])
        self.workers = int(config.workers)


def _chunks(idx: np.ndarray, workers: int) -> list[np.ndarray]:
    if workers <= 1 or len(idx) < 2 * workers:
        return [idx]
    return [c for c in np.array_split(idx, workers) if len(c)]


def _parallel(fn, parts: list, workers: int) -> list:
    if workers <= 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, parts))


def _row_sums(adj: sp.csr_matrix, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    # CSR matvec accumulates each row left to right in neighbour-index order.
    return adj[rows] @ x


def initialize(net: MultilayerNetwork, config: SimulationConfig, initial: InitialLevels) -> SimulationState:
    plan = _Plan(net, config)
    return _initialize(plan, initial)


def _initialize(plan: _Plan, initial: InitialLevels) -> SimulationState:
    net, config = plan.net, plan.config
    human = np.asarray(initial.human, dtype=np.float64).copy()
    social = np.asarray(initial.social, dtype=np.float64).copy()
    if human.shape != (net.n_human,):
        raise ValueError(f"expected {net.n_human} home levels, got {human.shape}")
    if social.shape != (net.n_social,):
        raise ValueError(f"expected {net.n_social} POI levels, got {social.shape}")
    bad = np.flatnonzero((human != 0) & (human != 1))
    if len(bad):
        raise ValueError(f"home levels must be 0 or 1; node {bad[0]} has {human[bad[0]]!r}")
    if np.any(~np.isfinite(social)) or np.any(social < 0):
        raise ValueError("POI levels must be finite and >= 0")
    curve0 = plan.curve_table[0]
    if config.physical_init == "curve":
        physical = curve0.copy()
    else:
        if initial.physical is None:
            raise ValueError("physical_init='supplied' needs initial physical levels")
        physical = np.asarray(initial.physical, dtype=np.float64).copy()
        if physical.shape != (net.n_physical,):
            raise ValueError(f"expected {net.n_physical} physical levels, got {physical.shape}")
        if np.any((physical < 0) | (physical > 1)):
            raise ValueError("physical levels must lie in [0, 1]")
    state = SimulationState(
        t=0, human=[human], social=[social], physical=[physical],
        physical_excess=physical - curve0,
    )
    if config.freeze_probability:
        idx = np.arange(net.n_human)
        state.frozen_P = _return_probabilities(plan, idx, human, social, physical)
    return state


def _return_probabilities(plan: _Plan, idx, human_prev, social_now, physical_now) -> np.ndarray:
    net = plan.net
    if not len(idx):
        return np.empty(0)
    deg = plan.human_deg[idx]
    nb = _row_sums(net.human_adj, idx, human_prev)
    q_h = np.divide(nb, deg, out=np.zeros(len(idx)), where=deg > 0)
    hs_deg = plan.hs_deg[idx]
    sn = _row_sums(net.human_social_adj, idx, social_now)
    q_s = np.minimum(1.0, np.divide(sn, hs_deg, out=np.zeros(len(idx)), where=hs_deg > 0))
    q_p = physical_now[net.human_physical[idx]]
    P = np.empty(len(idx))
    midx = plan.human_model_idx[idx]
    for k, model in enumerate(plan.model_list):
        sel = midx == k
        if not np.any(sel):
            continue
        cols = {
            model.feature_for("q_human"): q_h[sel],
            model.feature_for("q_social"): q_s[sel],
            model.feature_for("q_physical"): q_p[sel],
            "q_house": plan.owns[idx[sel]],
            "q_income": plan.income[idx[sel]],
        }
        P[sel] = return_probability_batch(model, cols)
    return P


def step(state: SimulationState, net: MultilayerNetwork, config: SimulationConfig,
         scenario: Scenario, plan: _Plan | None = None) -> SimulationState:
    """Advance one day; the input state is left untouched."""
    plan = plan or _Plan(net, config)
    t = state.t
    if t >= config.M:
        raise ValueError(f"state is already at the final day {config.M}")
    workers = plan.workers

    # Physical: baseline curve increment scaled by lambda_p, capped at 1.
    base_prev, base_next = plan.curve_table[t], plan.curve_table[t + 1]
    delta = base_next - base_prev
    excess = state.physical_excess + (scenario.lambda_p - 1.0) * delta
    phys_next = base_next + excess
    capped = phys_next > 1.0
    phys_next = np.where(capped, 1.0, phys_next)
    excess = np.where(capped, 1.0 - base_next, excess)
    phys_prev = state.physical[t]
    phys_read = phys_prev if config.strict_eq7 else phys_next

    # Social: per-node logistic update from day-t neighbours.
    s_prev = state.social[t]
    s_next = np.empty_like(s_prev)
    for params, rows in plan.social_groups:
        if not len(rows):
            continue
        g = logistic_term(s_prev, params.K_s)
        beta_s = scenario.lambda_s * params.beta_s
        phys_term = PHYSICAL_COUPLING * params.beta_p * logistic_term(phys_read, params.K_p)

        def social_chunk(r, g=g, beta_s=beta_s, phys_term=phys_term):
            inc = SOCIAL_COUPLING * beta_s * _row_sums(net.social_adj, r, g) + phys_term[net.social_physical[r]]
            return r, np.maximum(0.0, np.minimum(1.0, s_prev[r] + inc))

        for r, v in _parallel(social_chunk, _chunks(rows, workers), workers):
            s_next[r] = v
    s_read = s_prev if config.strict_eq7 else s_next

    # Homes: only evacuees draw; returned residents stay.
    h_prev = state.human[t]
    h_next = h_prev.copy()
    away = np.flatnonzero(h_prev == 0)

    def human_chunk(idx):
        if state.frozen_P is not None:
            P = state.frozen_P[idx]
        else:
            P = _return_probabilities(plan, idx, h_prev, s_read, phys_read)
        p_day = daily_return_probability(P, config.M, config.mode)
        u = rng.uniforms(config.seed, idx, t + 1)
        return idx, (u < p_day).astype(np.float64)

    if len(away):
        for idx, v in _parallel(human_chunk, _chunks(away, workers), workers):
            h_next[idx] = v

    return dataclasses.replace(
        state,
        t=t + 1,
        human=state.human + [h_next],
        social=state.social + [s_next],
        physical=state.physical + [phys_next],
        physical_excess=excess,
    )


@dataclass
class SimulationResult:
    config: SimulationConfig
    scenario: Scenario
    state: SimulationState
    summary: dict


def run(net: MultilayerNetwork, config: SimulationConfig, scenario: Scenario,
        initial: InitialLevels) -> SimulationResult:
    """Simulate days 0..M under ``scenario``; deterministic in (seed, config, network)."""
    plan = _Plan(net, config)
    state = _initialize(plan, initial)
    for _ in range(config.M):
        state = step(state, net, config, scenario, plan)
    return SimulationResult(config, scenario, state, summarize(net, state, config, scenario))


# --- aggregation -------------------------------------------------------------

STRATA = ("county", "tenure", "income")


def _stratum_labels(net: MultilayerNetwork, layer: Layer, by: str) -> list[str]:
    layer = Layer(layer)
    if by == "county":
        cidx = net.county_index(layer)
        return [net.counties[c] for c in cidx]
    if layer is not Layer.HUMAN:
        raise ValueError(f"stratum {by!r} is only defined for the human layer")
    if by == "tenure":
        return ["own" if h.owns_house else "rent" for h in net.human_nodes]
    if by == "income":
        return [INCOME_BANDS[income_band(h.income_usd)][0] for h in net.human_nodes]
    raise ValueError(f"unknown stratum {by!r}; expected one of {STRATA}")


def stratified_means(state: SimulationState, net: MultilayerNetwork, by: str,
                     layer: Layer = Layer.HUMAN) -> dict[str, list[float]]:
    """Per-day mean level of each stratum's members; empty strata are omitted."""
    labels = np.array(_stratum_labels(net, layer, by), dtype=object)
    mat = state.matrix(layer)
    out = {}
    order = sorted(set(labels.tolist()), key=_stratum_sort_key(by))
    for s in order:
        members = np.flatnonzero(labels == s)
        if len(members):
            out[s] = mat[:, members].mean(axis=1).tolist()
    return out


def _stratum_sort_key(by: str):
    if by == "income":
        rank = {b[0]: i for i, b in enumerate(INCOME_BANDS)}
        return lambda s: rank[s]
    return lambda s: s


def layer_means(state: SimulationState, layer: Layer) -> list[float]:
    mat = state.matrix(layer)
    if mat.shape[1] == 0:
        return []
    return mat.mean(axis=1).tolist()


def summarize(net: MultilayerNetwork, state: SimulationState, config: SimulationConfig,
              scenario: Scenario) -> dict:
    layers = (Layer.HUMAN, Layer.SOCIAL, Layer.PHYSICAL)
    return {
        "scenario": scenario.to_dict(),
        "days": list(range(state.days)),
        "layer_means": {l.value: layer_means(state, l) for l in layers},
        "county_means": {
            l.value: stratified_means(state, net, "county", l) for l in layers
        },
        "human_strata": {
            "tenure": stratified_means(state, net, "tenure"),
            "income": stratified_means(state, net, "income"),
        },
        "config": config.to_dict(),
    }
