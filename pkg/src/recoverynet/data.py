"""CSV node tables, a synthetic-city generator, and result export.

Tables (UTF-8, comma separated, header row required):

* homes:    home_id, lat, lon, county, income_usd, owns_house, initial_level
* POIs:     poi_id, lat, lon, county, baseline_daily_visits, initial_level
* physical: county, lat, lon, A, B, C, D[, initial_level]

Row order defines node indices.  Floats are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .behavior import INCOME_BANDS
from .dynamics import LogisticCurveParams
from .engine import InitialLevels, SimulationResult, Layer
from .geo import GeoPoint, KM_PER_DEG_LAT
from .network import HumanNode, NodeId, PhysicalNode, SocialNode, county_centroid

HOMES_COLUMNS = ("home_id", "lat", "lon", "county", "income_usd", "owns_house", "initial_level")
POIS_COLUMNS = ("poi_id", "lat", "lon", "county", "baseline_daily_visits", "initial_level")
PHYSICAL_COLUMNS = ("county", "lat", "lon", "A", "B", "C", "D", "initial_level")
COMPARISON_DAYS = (0, 7, 30, 60)


class ValidationError(ValueError):
    def __init__(self, path, row: int | None, column: str | None, message: str):
        where = str(path)
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {message}")
        self.path, self.row, self.column = path, row, column


@dataclass
class Inputs:
    humans: list[HumanNode]
    socials: list[SocialNode]
    physicals: list[PhysicalNode]
    initial: InitialLevels
    curves: dict[str, LogisticCurveParams]

    @property
    def counties(self) -> list[str]:
        return [p.county for p in self.physicals]


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- reading -----------------------------------------------------------------

def _read_rows(path, required: Sequence[str]):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ValidationError(path, None, None, f"cannot open: {e.strerror}") from e
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(path, None, None, "empty file; header row required")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ValidationError(path, 1, missing[0], "required column missing from header")
        # Line 1 is the header, so data rows start at 2.
        return [(i + 2, row) for i, row in enumerate(reader)]


def _num(path, line, row, col, *, lo=None, hi=None, lo_open=False, allowed=None) -> float:
    raw = row.get(col)
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise ValidationError(path, line, col, f"not a number: {raw!r}") from None
    if math.isnan(v) or math.isinf(v):
        raise ValidationError(path, line, col, f"not a finite number: {raw!r}")
    if allowed is not None and v not in allowed:
        raise ValidationError(path, line, col, f"must be one of {sorted(allowed)}, got {raw!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ValidationError(path, line, col, f"must be {'>' if lo_open else '>='} {lo}, got {raw!r}")
    if hi is not None and v > hi:
        raise ValidationError(path, line, col, f"must be <= {hi}, got {raw!r}")
    return v


def _point(path, line, row) -> GeoPoint:
    lat = _num(path, line, row, "lat", lo=-90, hi=90)
    lon = _num(path, line, row, "lon", lo=-180, hi=180)
    return GeoPoint(lat, lon)


def _unique(path, line, seen: set, key: str, col: str):
    if key in seen:
        raise ValidationError(path, line, col, f"duplicate id {key!r}")
    seen.add(key)


def _county(path, line, row, counties) -> str:
    c = (row.get("county") or "").strip()
    if not c:
        raise ValidationError(path, line, "county", "empty county")
    if counties is not None and c not in counties:
        raise ValidationError(path, line, "county", f"county {c!r} not configured")
    return c


def read_homes(path, counties=None) -> tuple[list[HumanNode], np.ndarray]:
    nodes, levels, seen = [], [], set()
    for line, row in _read_rows(path, HOMES_COLUMNS):
        key = row["home_id"].strip()
        _unique(path, line, seen, key, "home_id")
        loc = _point(path, line, row)
        county = _county(path, line, row, counties)
        income = _num(path, line, row, "income_usd", lo=0)
        owns = _num(path, line, row, "owns_house", allowed={0.0, 1.0})
        level = _num(path, line, row, "initial_level", allowed={0.0, 1.0})
        nodes.append(HumanNode(NodeId(Layer.HUMAN, len(nodes)), loc, county, income, owns == 1.0, key))
        levels.append(level)
    return nodes, np.array(levels, dtype=np.float64)


def read_pois(path, counties=None) -> tuple[list[SocialNode], np.ndarray]:
    nodes, levels, seen = [], [], set()
    for line, row in _read_rows(path, POIS_COLUMNS):
        key = row["poi_id"].strip()
        _unique(path, line, seen, key, "poi_id")
        loc = _point(path, line, row)
        county = _county(path, line, row, counties)
        base = _num(path, line, row, "baseline_daily_visits", lo=0, lo_open=True)
        level = _num(path, line, row, "initial_level", lo=0)
        nodes.append(SocialNode(NodeId(Layer.SOCIAL, len(nodes)), loc, county, base, key))
        levels.append(level)
    return nodes, np.array(levels, dtype=np.float64)


def read_physical(path) -> list[dict]:
    """Rows of the physical table; blank lat/lon/initial_level come back as None."""
    out, seen = [], set()
    for line, row in _read_rows(path, ("county", "A", "B", "C", "D")):
        county = _county(path, line, row, None)
        _unique(path, line, seen, county, "county")
        vals = {k: _num(path, line, row, k) for k in ("A", "B", "C", "D")}
        try:
            curve = LogisticCurveParams(**vals)
        except ValueError as e:
            raise ValidationError(path, line, None, str(e)) from None
        has_loc = all((row.get(k) or "").strip() for k in ("lat", "lon"))
        loc = _point(path, line, row) if has_loc else None
        init = None
        if (row.get("initial_level") or "").strip():
            init = _num(path, line, row, "initial_level", lo=0, hi=1)
        out.append({"county": county, "location": loc, "curve": curve, "initial_level": init})
    return out


def load_inputs(homes, pois, physical) -> Inputs:
    """Read and cross-validate the three node tables."""
    phys_rows = read_physical(physical)
    counties = [r["county"] for r in phys_rows]
    humans, h0 = read_homes(homes, set(counties))
    socials, s0 = read_pois(pois, set(counties))
    physicals = []
    for i, r in enumerate(phys_rows):
        loc = r["location"]
        if loc is None:
            pts = [n.location for n in humans if n.county == r["county"]]
            pts += [n.location for n in socials if n.county == r["county"]]
            if not pts:
                raise ValidationError(physical, i + 2, "lat", "no location and no nodes to take a centroid of")
            loc = county_centroid(pts)
        physicals.append(PhysicalNode(NodeId(Layer.PHYSICAL, i), r["county"], loc))
    p0 = None
    if all(r["initial_level"] is not None for r in phys_rows):
        p0 = np.array([r["initial_level"] for r in phys_rows], dtype=np.float64)
    return Inputs(humans, socials, physicals, InitialLevels(h0, s0, p0), {r["county"]: r["curve"] for r in phys_rows})


# --- writing -----------------------------------------------------------------

def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    data = _csv_text(header, rows).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as raw:
            if path.suffix == ".gz":
                # mtime=0 keeps the compressed bytes identical across runs.
                with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
                    gz.write(data)
            else:
                raw.write(data)
    except OSError as e:
        raise OSError(e.errno, f"cannot write {path}: {e.strerror}") from e
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_inputs(inputs: Inputs, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    homes = write_csv(out / "homes.csv", HOMES_COLUMNS, (
        (h.key if h.key is not None else str(i), h.location.latitude, h.location.longitude, h.county,
         float(h.income_usd), int(h.owns_house), int(inputs.initial.human[i]))
        for i, h in enumerate(inputs.humans)
    ))
    pois = write_csv(out / "pois.csv", POIS_COLUMNS, (
        (s.key if s.key is not None else str(i), s.location.latitude, s.location.longitude, s.county,
         float(s.baseline_daily_visits), float(inputs.initial.social[i]))
        for i, s in enumerate(inputs.socials)
    ))
    p0 = inputs.initial.physical
    phys = write_csv(out / "physical.csv", PHYSICAL_COLUMNS, (
        (p.county, p.location.latitude, p.location.longitude,
         inputs.curves[p.county].A, inputs.curves[p.county].B,
         inputs.curves[p.county].C, inputs.curves[p.county].D,
         "" if p0 is None else float(p0[i]))
        for i, p in enumerate(inputs.physicals)
    ))
    return {"homes": homes, "pois": pois, "physical": phys}


# --- synthetic generator -------------------------------------------------------

@dataclass(frozen=True)
class CountySpec:
    name: str
    bbox: tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max
    n_homes: int
    n_pois: int
    urban_fraction: float
    curve: LogisticCurveParams
    urban_center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_homes < 0 or self.n_pois < 0:
            raise ValueError("node counts must be >= 0")
        if not 0 <= self.urban_fraction <= 1:
            raise ValueError("urban_fraction must lie in [0, 1]")
        lat0, lat1, lon0, lon1 = self.bbox
        if not (lat0 < lat1 and lon0 < lon1):
            raise ValueError(f"bad bounding box {self.bbox}")


@dataclass(frozen=True)
class SyntheticSpec:
    counties: tuple[CountySpec, ...]
    income_band_probs: tuple[float, ...] = (0.11, 0.13, 0.13, 0.12, 0.11, 0.1, 0.08, 0.07, 0.15)
    ownership_rate: float = 0.62
    evacuation_fraction: float = 0.6
    # POI day-0 level ~ social_level_max * Beta(mean, concentration)
    social_level_mean: float = 0.45
    social_level_concentration: float = 60.0
    social_level_max: float = 1.1
    baseline_visits_median: float = 40.0
    baseline_visits_sigma: float = 0.8
    urban_sigma_km: float = 2.5
    top_income_max: float = 250_000.0

    def __post_init__(self):
        probs = self.income_band_probs
        if len(probs) != len(INCOME_BANDS) or any(p < 0 for p in probs) or abs(sum(probs) - 1) > 1e-9:
            raise ValueError("income_band_probs must be nine non-negative values summing to 1")
        for name in ("ownership_rate", "evacuation_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 < self.social_level_mean < self.social_level_max:
            raise ValueError("social_level_mean must lie in (0, social_level_max)")
        names = [c.name for c in self.counties]
        if len(set(names)) != len(names):
            raise ValueError("county names must be unique")


def default_counties(scale: float = 1.0) -> tuple[CountySpec, ...]:
    """Five Texas Gulf counties; Harris is the large, densely clustered one.

    The water/sewer curves sit low and flatten within a few days, which keeps
    POI levels between K_s/2 and K_s over a 60-day run.  In that range a larger
    social rate multiplier always helps, so scenario comparisons are readable.
    """
    def n(x):
        return int(round(x * scale))

    return (
        CountySpec("Harris", (29.50, 30.17, -95.96, -94.91), n(6000), n(3000), 0.85,
                   LogisticCurveParams(A=0.012, B=0.006, C=2.0, D=0.0), (29.76, -95.37)),
        CountySpec("Fort Bend", (29.25, 29.79, -96.09, -95.42), n(1000), n(600), 0.4,
                   LogisticCurveParams(A=0.010, B=0.005, C=1.6, D=-0.5), (29.60, -95.63)),
        CountySpec("Brazoria", (28.80, 29.60, -95.85, -95.05), n(1000), n(600), 0.35,
                   LogisticCurveParams(A=0.010, B=0.004, C=1.8, D=0.0), (29.17, -95.43)),
        CountySpec("Galveston", (29.10, 29.60, -95.20, -94.40), n(1000), n(600), 0.45,
                   LogisticCurveParams(A=0.008, B=0.004, C=2.2, D=-1.0), (29.30, -94.80)),
        CountySpec("Jefferson", (29.60, 30.20, -94.50, -93.85), n(1000), n(600), 0.4,
                   LogisticCurveParams(A=0.010, B=0.005, C=1.5, D=0.0), (30.08, -94.13)),
    )


DEFAULT_SPEC = SyntheticSpec(counties=default_counties())


def _scatter(rng: np.random.Generator, c: CountySpec, n: int, sigma_km: float) -> tuple[np.ndarray, np.ndarray]:
    lat0, lat1, lon0, lon1 = c.bbox
    urban = rng.random(n) < c.urban_fraction
    lat = rng.uniform(lat0, lat1, n)
    lon = rng.uniform(lon0, lon1, n)
    clat, clon = c.urban_center or (0.5 * (lat0 + lat1), 0.5 * (lon0 + lon1))
    k = int(urban.sum())
    dlat = sigma_km / KM_PER_DEG_LAT
    dlon = dlat / math.cos(math.radians(clat))
    lat[urban] = np.clip(clat + dlat * rng.standard_normal(k), lat0, lat1)
    lon[urban] = np.clip(clon + dlon * rng.standard_normal(k), lon0, lon1)
    return lat, lon


def generate_synthetic(spec: SyntheticSpec = DEFAULT_SPEC, seed: int = 0) -> Inputs:
    """Random homes/POIs per county, deterministic in ``seed``.

    A county's ``urban_fraction`` of nodes is drawn from a Gaussian cluster of
    ``urban_sigma_km`` around its urban centre, the rest uniformly over its
    bounding box, so urban counties get denser neighbourhoods.
    """
    rng = np.random.default_rng(seed)
    humans, socials, physicals = [], [], []
    h0, s0 = [], []
    probs = np.array(spec.income_band_probs)
    a = spec.social_level_mean / spec.social_level_max * spec.social_level_concentration
    b = spec.social_level_concentration - a
    for ci, c in enumerate(spec.counties):
        lat, lon = _scatter(rng, c, c.n_homes, spec.urban_sigma_km)
        bands = rng.choice(len(INCOME_BANDS), size=c.n_homes, p=probs)
        u = rng.random(c.n_homes)
        owns = rng.random(c.n_homes) < spec.ownership_rate
        home = rng.random(c.n_homes) >= spec.evacuation_fraction
        for k in range(c.n_homes):
            _, lo, hi, _ = INCOME_BANDS[bands[k]]
            hi = spec.top_income_max if math.isinf(hi) else hi
            income = round(lo + u[k] * (hi - lo), 2)
            idx = len(humans)
            humans.append(HumanNode(NodeId(Layer.HUMAN, idx), GeoPoint(lat[k], lon[k]), c.name,
                                    income, bool(owns[k]), f"h{idx}"))
            h0.append(1.0 if home[k] else 0.0)

        lat, lon = _scatter(rng, c, c.n_pois, spec.urban_sigma_km)
        base = np.maximum(1.0, np.round(spec.baseline_visits_median
                                        * np.exp(spec.baseline_visits_sigma * rng.standard_normal(c.n_pois)), 1))
        level = spec.social_level_max * rng.beta(a, b, c.n_pois)
        visits = np.round(level * base)
        for k in range(c.n_pois):
            idx = len(socials)
            socials.append(SocialNode(NodeId(Layer.SOCIAL, idx), GeoPoint(lat[k], lon[k]), c.name,
                                      float(base[k]), f"s{idx}"))
            s0.append(float(visits[k] / base[k]))

        pts = [GeoPoint(*(c.urban_center or ((c.bbox[0] + c.bbox[1]) / 2, (c.bbox[2] + c.bbox[3]) / 2)))]
        physicals.append(PhysicalNode(NodeId(Layer.PHYSICAL, ci), c.name, pts[0]))
    curves = {c.name: c.curve for c in spec.counties}
    return Inputs(humans, socials, physicals,
                  InitialLevels(np.array(h0), np.array(s0), None), curves)


# --- result export -------------------------------------------------------------

def comparison_rows(result: SimulationResult, days: Sequence[int]):
    s = result.summary
    sid = result.scenario.id
    for day in days:
        if day >= len(s["days"]):
            continue
        yield (sid, "ALL", day, s["layer_means"]["social"][day])
        for county, series in s["county_means"]["social"].items():
            yield (sid, county, day, series[day])


def export_results(result: SimulationResult, out_dir, formats: Sequence[str] = ("csv",),
                   compare_days: Sequence[int] = COMPARISON_DAYS, history: bool = True,
                   compress: bool = False) -> dict[str, Path]:
    """Write curves, strata, scenario comparison, per-node history and summary JSON."""
    out = Path(out_dir)
    s = result.summary
    written: dict[str, Path] = {}
    curve_rows = []
    for layer, series in s["layer_means"].items():
        curve_rows += [(d, layer, "ALL", v) for d, v in enumerate(series)]
        for county, cs in s["county_means"][layer].items():
            curve_rows += [(d, layer, county, v) for d, v in enumerate(cs)]
    curve_rows.sort(key=lambda r: (r[1], r[2] != "ALL", r[2], r[0]))
    strata_rows = [
        (d, kind, stratum, v)
        for kind, table in s["human_strata"].items()
        for stratum, series in table.items()
        for d, v in enumerate(series)
    ]
    comparison = list(comparison_rows(result, compare_days))

    if "csv" in formats:
        written["curves"] = write_csv(out / "curves.csv", ("day", "layer", "county", "mean"), curve_rows)
        written["strata"] = write_csv(out / "strata.csv", ("day", "stratum_type", "stratum", "mean"), strata_rows)
        written["comparison"] = write_csv(out / "comparison.csv", ("scenario", "county", "day", "social_mean"),
                                           comparison)
    if "json" in formats:
        written["curves_json"] = _write_json(out / "curves.json", [
            {"day": d, "layer": l, "county": c, "mean": v} for d, l, c, v in curve_rows
        ])
        written["comparison_json"] = _write_json(out / "comparison.json", [
            {"scenario": sc, "county": c, "day": d, "social_mean": v} for sc, c, d, v in comparison
        ])
    if history:
        name = "history.csv.gz" if compress else "history.csv"
        written["history"] = write_csv(out / name, ("day", "layer", "node", "level"), _history_rows(result))
    written["summary"] = _write_json(out / "summary.json", s)
    return written


def _history_rows(result: SimulationResult):
    st = result.state
    for layer in (Layer.HUMAN, Layer.SOCIAL, Layer.PHYSICAL):
        mat = st.matrix(layer)
        for d in range(mat.shape[0]):
            for i in range(mat.shape[1]):
                yield (d, layer.value, i, float(mat[d, i]))


def _write_json(path: Path, obj) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(e.errno, f"cannot write {path}: {e.strerror}") from e
    return path
