"""Geospatial primitives and a uniform-grid index for fixed-radius queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG_LAT = EARTH_RADIUS_KM * math.pi / 180.0


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not (-90.0 <= lat <= 90.0) or math.isnan(lat):
            raise ValueError(f"latitude out of range [-90, 90]: {self.latitude!r}")
        if not (-180.0 <= lon <= 180.0) or math.isnan(lon):
            raise ValueError(f"longitude out of range [-180, 180]: {self.longitude!r}")
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "longitude", lon)


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in km between broadcastable coordinate arrays (degrees)."""
    lat1 = np.radians(np.atleast_1d(np.asarray(lat1, dtype=np.float64)))
    lat2 = np.radians(np.atleast_1d(np.asarray(lat2, dtype=np.float64)))
    dlat = lat2 - lat1
    dlon = np.radians(np.atleast_1d(np.asarray(lon2, dtype=np.float64))) - np.radians(
        np.atleast_1d(np.asarray(lon1, dtype=np.float64))
    )
    h = np.sin(dlat * 0.5) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon * 0.5) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    # Routed through the array kernel so scalar and bulk distances agree bit for bit.
    return float(haversine_array(a.latitude, a.longitude, b.latitude, b.longitude)[0])


@dataclass
class SpatialGrid:
    """Uniform lat/lon bucket grid.

    Cells are ``cell_size`` km tall; their longitude width is stretched by
    ``1 / cos(ref_lat)`` so they are roughly square near the reference latitude.
    Queries always check true haversine distance, so the cell shape only
    affects speed.
    """

    cell_size: float
    ref_lat: float
    ids: list = field(default_factory=list)
    lat: np.ndarray = field(default_factory=lambda: np.empty(0))
    lon: np.ndarray = field(default_factory=lambda: np.empty(0))
    cells: dict = field(default_factory=dict)

    @property
    def dlat(self) -> float:
        return self.cell_size / KM_PER_DEG_LAT

    @property
    def dlon(self) -> float:
        return self.dlat / math.cos(math.radians(self.ref_lat))

    def cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        return (math.floor(lat / self.dlat), math.floor(lon / self.dlon))

    def __len__(self) -> int:
        return len(self.ids)

    def cell_members(self, cell: tuple[int, int]) -> list[tuple[object, GeoPoint]]:
        return [
            (self.ids[k], GeoPoint(self.lat[k], self.lon[k]))
            for k in self.cells.get(cell, ())
        ]

    def candidate_cells(self, lat: float, lon: float, radius: float) -> list[tuple[int, int]]:
        """Cells that can hold a point within ``radius`` km of (lat, lon)."""
        return self.cells_near_box(lat, lat, lon, lon, radius)

    def cells_near_box(
        self, lat_lo: float, lat_hi: float, lon_lo: float, lon_hi: float, radius: float
    ) -> list[tuple[int, int]]:
        """Occupied cells that can hold a point within ``radius`` km of the given box."""
        span_lat = radius / KM_PER_DEG_LAT
        lat_lo, lat_hi = lat_lo - span_lat, lat_hi + span_lat
        # Widest longitude reach of a ball happens at its most poleward latitude.
        cos_min = math.cos(math.radians(min(89.999, max(abs(lat_lo), abs(lat_hi)))))
        s = math.sin(min(radius / EARTH_RADIUS_KM, math.pi / 2)) / cos_min
        span_lon = 180.0 if s >= 1.0 else math.degrees(math.asin(s))
        i0, i1 = math.floor(lat_lo / self.dlat), math.floor(lat_hi / self.dlat)
        j0, j1 = math.floor((lon_lo - span_lon) / self.dlon), math.floor((lon_hi + span_lon) / self.dlon)
        if (i1 - i0 + 1) * (j1 - j0 + 1) > len(self.cells):
            return sorted(c for c in self.cells if i0 <= c[0] <= i1 and j0 <= c[1] <= j1)
        return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1) if (i, j) in self.cells]

    def cell_box(self, cell: tuple[int, int]) -> tuple[float, float, float, float]:
        i, j = cell
        return (i * self.dlat, (i + 1) * self.dlat, j * self.dlon, (j + 1) * self.dlon)

    def candidates(self, lat: float, lon: float, radius: float) -> np.ndarray:
        cells = self.candidate_cells(lat, lon, radius)
        if not cells:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.cells[c] for c in cells])


def build_grid(
    points: Sequence[tuple[object, GeoPoint]],
    cell_size: float,
    ref_lat: float | None = None,
) -> SpatialGrid:
    """Bucket ``(id, GeoPoint)`` pairs into a grid of ``cell_size`` km cells.

    ``ref_lat`` defaults to the midpoint of the points' latitude range.
    """
    if not cell_size > 0:
        raise ValueError(f"cell_size must be > 0, got {cell_size!r}")
    ids = [p[0] for p in points]
    lat = np.array([p[1].latitude for p in points], dtype=np.float64)
    lon = np.array([p[1].longitude for p in points], dtype=np.float64)
    if ref_lat is None:
        ref_lat = 0.5 * (lat.min() + lat.max()) if len(lat) else 0.0
    grid = SpatialGrid(cell_size=float(cell_size), ref_lat=float(ref_lat), ids=ids, lat=lat, lon=lon)
    if not len(lat):
        return grid
    ci = np.floor(lat / grid.dlat).astype(np.int64)
    cj = np.floor(lon / grid.dlon).astype(np.int64)
    order = np.lexsort((np.arange(len(lat)), cj, ci))
    keys = np.stack([ci[order], cj[order]], axis=1)
    bounds = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    for chunk in np.split(order, bounds):
        k = int(chunk[0])
        grid.cells[(int(ci[k]), int(cj[k]))] = chunk.astype(np.int64)
    return grid


def radius_query(grid: SpatialGrid, center: GeoPoint, radius: float) -> set:
    """Ids whose stored point lies within the closed ball of ``radius`` km."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius!r}")
    cand = grid.candidates(center.latitude, center.longitude, radius)
    if not len(cand):
        return set()
    d = haversine_array(center.latitude, center.longitude, grid.lat[cand], grid.lon[cand])
    return {grid.ids[k] for k in cand[d <= radius]}


def check_bounding_box(lats: Iterable[float], lons: Iterable[float]) -> None:
    """Reject point sets whose longitude extent wraps across the antimeridian."""
    lons = np.asarray(list(lons), dtype=np.float64)
    if len(lons) and lons.max() - lons.min() > 180.0:
        raise ValueError("bounding box crosses the antimeridian; not supported")
