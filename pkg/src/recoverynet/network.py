"""Three-layer socio-physical network: homes, POIs and county water/sewer nodes.

Intra-layer edges (homes-homes, POIs-POIs) and POI->home edges exist iff the
haversine distance between the two locations is at most ``delta_km``.  Each
home and POI receives exactly one incoming edge from the physical node of its
own county; those edges are stored as a per-node lookup array.  The physical
layer has no intra-layer edges.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .geo import GeoPoint, SpatialGrid, build_grid, check_bounding_box, haversine_array

DEFAULT_DELTA_KM = 1.0


class Layer(str, enum.Enum):
    HUMAN = "human"
    SOCIAL = "social"
    PHYSICAL = "physical"


class MissingCountyError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class NodeId:
    layer: Layer
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"node index must be non-negative, got {self.index}")


@dataclass(frozen=True)
class HumanNode:
    id: NodeId
    location: GeoPoint
    county: str
    income_usd: float
    owns_house: bool
    key: str | None = None

    def __post_init__(self):
        if not self.income_usd >= 0:
            raise ValueError(f"income_usd must be >= 0, got {self.income_usd!r}")


@dataclass(frozen=True)
class SocialNode:
    id: NodeId
    location: GeoPoint
    county: str
    baseline_daily_visits: float
    key: str | None = None

    def __post_init__(self):
        if not self.baseline_daily_visits > 0:
            raise ValueError(
                f"baseline_daily_visits must be > 0, got {self.baseline_daily_visits!r}"
            )


@dataclass(frozen=True)
class PhysicalNode:
    id: NodeId
    county: str
    location: GeoPoint


def _csr(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    m = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows.astype(np.int64), cols.astype(np.int64))),
        shape=shape,
    )
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass
class MultilayerNetwork:
    human_nodes: list[HumanNode]
    social_nodes: list[SocialNode]
    physical_nodes: list[PhysicalNode]
    delta_km: float
    # Row i lists the neighbours of node i, sorted by index.
    human_adj: sp.csr_matrix
    social_adj: sp.csr_matrix
    # Row h lists the POIs with an edge into home h (E_hs is directed Social -> Human).
    human_social_adj: sp.csr_matrix
    # Index into physical_nodes of the county node feeding each home / POI.
    human_physical: np.ndarray
    social_physical: np.ndarray
    counties: list[str] = field(default_factory=list)

    @property
    def n_human(self) -> int:
        return len(self.human_nodes)

    @property
    def n_social(self) -> int:
        return len(self.social_nodes)

    @property
    def n_physical(self) -> int:
        return len(self.physical_nodes)

    def neighbors(self, layer: Layer, i: int) -> np.ndarray:
        adj = {Layer.HUMAN: self.human_adj, Layer.SOCIAL: self.social_adj}[Layer(layer)]
        return adj.indices[adj.indptr[i] : adj.indptr[i + 1]]

    def social_of_human(self, h: int) -> np.ndarray:
        a = self.human_social_adj
        return a.indices[a.indptr[h] : a.indptr[h + 1]]

    def degrees(self, layer: Layer) -> np.ndarray:
        layer = Layer(layer)
        if layer is Layer.PHYSICAL:
            return np.zeros(self.n_physical, dtype=np.int64)
        adj = self.human_adj if layer is Layer.HUMAN else self.social_adj
        return np.diff(adj.indptr).astype(np.int64)

    def edge_sets(self) -> dict[str, set[tuple[int, int]]]:
        """All six edge sets as explicit index pairs.

        ``E_h``/``E_s`` hold each undirected edge once as ``(low, high)``.
        Inter-layer sets hold ``(source, target)``.
        """

        def undirected(adj):
            coo = adj.tocoo()
            keep = coo.row < coo.col
            return set(zip(coo.row[keep].tolist(), coo.col[keep].tolist()))

        hs = self.human_social_adj.tocoo()
        return {
            "E_h": undirected(self.human_adj),
            "E_s": undirected(self.social_adj),
            "E_p": set(),
            "E_hs": set(zip(hs.col.tolist(), hs.row.tolist())),
            "E_hp": {(int(p), h) for h, p in enumerate(self.human_physical)},
            "E_sp": {(int(p), s) for s, p in enumerate(self.social_physical)},
        }

    def county_index(self, layer: Layer) -> np.ndarray:
        """Physical-node (== county) index per node of ``layer``."""
        layer = Layer(layer)
        if layer is Layer.HUMAN:
            return self.human_physical
        if layer is Layer.SOCIAL:
            return self.social_physical
        return np.arange(self.n_physical)

    def summary(self) -> dict:
        """Node counts, edge counts and degree histograms, JSON-ready."""
        out = {
            "delta_km": self.delta_km,
            "nodes": {"human": self.n_human, "social": self.n_social, "physical": self.n_physical},
            "edges": {
                "E_h": int(self.human_adj.nnz // 2),
                "E_s": int(self.social_adj.nnz // 2),
                "E_p": 0,
                "E_hs": int(self.human_social_adj.nnz),
                "E_hp": self.n_human,
                "E_sp": self.n_social,
            },
            "degree_histogram": {},
            "mean_degree_by_county": {},
        }
        for layer in (Layer.HUMAN, Layer.SOCIAL):
            hist = degree_histogram(self, layer)
            out["degree_histogram"][layer.value] = {str(k): v for k, v in sorted(hist.items())}
            deg = self.degrees(layer)
            cidx = self.county_index(layer)
            out["mean_degree_by_county"][layer.value] = {
                self.physical_nodes[p].county: float(deg[cidx == p].mean())
                for p in range(self.n_physical)
                if np.any(cidx == p)
            }
        return out


def _locations(nodes) -> tuple[np.ndarray, np.ndarray]:
    lat = np.array([n.location.latitude for n in nodes], dtype=np.float64)
    lon = np.array([n.location.longitude for n in nodes], dtype=np.float64)
    return lat, lon


def _pairs_within(
    qgrid: SpatialGrid, tgrid: SpatialGrid, delta: float
) -> tuple[np.ndarray, np.ndarray]:
    """All (query position, target position) pairs at distance <= delta."""
    rows, cols = [], []
    for cell, members in qgrid.cells.items():
        box = qgrid.cell_box(cell)
        near = tgrid.cells_near_box(*box, delta)
        if not near:
            continue
        cand = np.concatenate([tgrid.cells[c] for c in near])
        d = haversine_array(
            qgrid.lat[members][:, None],
            qgrid.lon[members][:, None],
            tgrid.lat[cand][None, :],
            tgrid.lon[cand][None, :],
        )
        qi, ti = np.nonzero(d <= delta)
        rows.append(members[qi])
        cols.append(cand[ti])
    if not rows:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(rows), np.concatenate(cols)


def build_network(
    humans: Sequence[HumanNode],
    socials: Sequence[SocialNode],
    physicals: Sequence[PhysicalNode],
    delta_km: float = DEFAULT_DELTA_KM,
) -> MultilayerNetwork:
    """Construct every edge set from node locations with a spatial grid.

    Node ``id.index`` values must equal the node's position in its list.
    """
    if not delta_km > 0:
        raise ValueError(f"delta_km must be > 0, got {delta_km!r}")
    for layer, nodes in ((Layer.HUMAN, humans), (Layer.SOCIAL, socials), (Layer.PHYSICAL, physicals)):
        for pos, n in enumerate(nodes):
            if n.id.layer is not layer or n.id.index != pos:
                raise ValueError(f"{layer.value} node at position {pos} has id {n.id}")
    county_to_phys: dict[str, int] = {}
    for p in physicals:
        if p.county in county_to_phys:
            raise ValueError(f"county {p.county!r} has more than one physical node")
        county_to_phys[p.county] = p.id.index

    def phys_lookup(nodes, kind):
        out = np.empty(len(nodes), dtype=np.int64)
        for i, n in enumerate(nodes):
            try:
                out[i] = county_to_phys[n.county]
            except KeyError:
                raise MissingCountyError(
                    f"{kind} node {i} is in county {n.county!r}, which has no physical node"
                ) from None
        return out

    human_phys = phys_lookup(humans, "human")
    social_phys = phys_lookup(socials, "social")

    hlat, hlon = _locations(humans)
    slat, slon = _locations(socials)
    all_lat = np.concatenate([hlat, slat])
    all_lon = np.concatenate([hlon, slon])
    check_bounding_box(all_lat, all_lon)
    ref_lat = 0.5 * (all_lat.min() + all_lat.max()) if len(all_lat) else 0.0

    hgrid = build_grid([(i, n.location) for i, n in enumerate(humans)], delta_km, ref_lat)
    sgrid = build_grid([(i, n.location) for i, n in enumerate(socials)], delta_km, ref_lat)

    nh, ns = len(humans), len(socials)
    r, c = _pairs_within(hgrid, hgrid, delta_km)
    keep = r != c
    human_adj = _csr(r[keep], c[keep], (nh, nh))
    r, c = _pairs_within(sgrid, sgrid, delta_km)
    keep = r != c
    social_adj = _csr(r[keep], c[keep], (ns, ns))
    r, c = _pairs_within(hgrid, sgrid, delta_km)
    human_social_adj = _csr(r, c, (nh, ns))

    return MultilayerNetwork(
        human_nodes=list(humans),
        social_nodes=list(socials),
        physical_nodes=list(physicals),
        delta_km=float(delta_km),
        human_adj=human_adj,
        social_adj=social_adj,
        human_social_adj=human_social_adj,
        human_physical=human_phys,
        social_physical=social_phys,
        counties=[p.county for p in physicals],
    )


def degree_histogram(net: MultilayerNetwork, layer: Layer) -> dict[int, int]:
    layer = Layer(layer)
    if layer is Layer.PHYSICAL:
        raise ValueError("the physical layer has no intra-layer edges; histogram is undefined")
    return dict(Counter(net.degrees(layer).tolist()))


def exponential_tail_fit(histogram: dict[int, int]) -> tuple[float, float]:
    """Fit log(count) = a - rate * degree; return (rate, R^2).

    A perfectly horizontal fit (all counts equal) reports R^2 = 1.
    """
    pts = sorted((int(d), c) for d, c in histogram.items() if c > 0)
    if len(pts) < 3:
        raise InsufficientDataError(
            f"need at least 3 degrees with positive counts, got {len(pts)}"
        )
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.log(np.array([p[1] for p in pts], dtype=np.float64))
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    resid = y - (ym + slope * (x - xm))
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return float(-slope), float(r2)


def county_centroid(points: Sequence[GeoPoint]) -> GeoPoint:
    """Arithmetic centroid of lat/lon, adequate for county-sized extents."""
    if not points:
        raise ValueError("cannot take the centroid of no points")
    return GeoPoint(
        math.fsum(p.latitude for p in points) / len(points),
        math.fsum(p.longitude for p in points) / len(points),
    )
