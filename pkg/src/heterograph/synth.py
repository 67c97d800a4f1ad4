"""Deterministic synthetic-city generator with known ground truth.

Nodes of three transport modes sit on a jittered lattice partitioned into
spatial clusters, each node draws a daily-inflow archetype from its
cluster's mixture, and POIs are planted around nodes at rates that add an
archetype term and a mode term for the node AND its graph neighbors.
Catchment labels therefore carry three separable signals: local density
(readable from feature magnitudes), archetype composition (readable from
feature shapes), and mode composition (readable only from node types).
That layering is what makes the comparative model benchmarks on this data
meaningful.

All randomness flows through one seeded generator in a fixed order, so a
given CitySpec always reproduces byte-identical CSV output.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import (
    EDGE_TYPE_ORDINALS,
    LAND_USE_CATEGORIES,
    EdgeRecord,
    HeteroGraph,
    NodeRecord,
    _haversine_matrix,
    write_graph,
)

ARCHETYPE_NAMES = ("work-like", "residential-like", "leisure-like")

# 64 quarter-hour bins starting 06:00; commute windows used by the
# archetype shape invariants
MORNING_BINS = slice(4, 16)    # 07:00 - 10:00
EVENING_BINS = slice(40, 52)   # 16:00 - 19:00

METERS_PER_DEG_LAT = 111320.0

ROAD_TYPE_BY_ORDINAL = {v: k for k, v in EDGE_TYPE_ORDINALS.items() if v < 5}

# Per-category POI intensity splits into an archetype term and a mode term.
# Categories follow LAND_USE_CATEGORIES order. The mode term is the
# deliberate cross-type dependence: tube stops anchor office towers and
# transport hubs, bus stops pull shopping streets, bike docks sit by homes
# and parks. Since mode never shows up in the features, this share of the
# label variance is reachable only through type-aware message passing.
ARCHETYPE_CONTRIBUTIONS = {
    "work-like":        (3.0, 1.0, 1.0, 1.0, 0.0, 0.0),
    "residential-like": (0.0, 0.0, 0.0, 0.5, 0.5, 2.5),
    "leisure-like":     (0.5, 3.0, 0.25, 2.5, 3.0, 0.5),
}

TYPE_CONTRIBUTIONS = {
    "tube": (3.0, 0.0, 4.0, 0.5, 0.0, 0.5),
    "bus":  (0.0, 0.5, 0.5, 1.5, 0.0, 0.5),
    "bike": (0.5, 2.5, 0.0, 1.0, 2.5, 2.5),
}

CONTRIBUTION_MAPS = {
    arch: {
        mode: tuple(a + t for a, t in zip(arch_row, type_row))
        for mode, type_row in TYPE_CONTRIBUTIONS.items()
    }
    for arch, arch_row in ARCHETYPE_CONTRIBUTIONS.items()
}

# Radius for the station-density feature gain; matches the catchment scale
# so busy districts read as busy stations.
DENSITY_RADIUS_M = 1000.0

DEFAULT_MIXTURES = (
    (0.80, 0.10, 0.10),
    (0.10, 0.80, 0.10),
    (0.10, 0.10, 0.80),
    (0.60, 0.30, 0.10),
    (0.20, 0.60, 0.20),
    (0.34, 0.33, 0.33),
)


def _bump(center, width):
    t = np.arange(64, dtype=np.float64)
    return np.exp(-0.5 * ((t - center) / width) ** 2)


@dataclass(frozen=True)
class Archetype:
    """Named 64-bin inflow template plus its noise level."""

    name: str
    template: tuple
    noise_level: float

    def __post_init__(self):
        if self.name not in ARCHETYPE_NAMES:
            raise ConfigError(f"unknown archetype name {self.name!r}")
        if len(self.template) != 64:
            raise ConfigError(
                f"archetype template needs 64 bins, got {len(self.template)}")
        tpl = np.asarray(self.template, dtype=np.float64)
        if not np.all(np.isfinite(tpl)) or np.any(tpl < 0):
            raise ConfigError("archetype template must be finite and non-negative")
        if self.noise_level < 0:
            raise ConfigError("noise level must be non-negative")
        morning = float(tpl[MORNING_BINS].sum())
        evening = float(tpl[EVENING_BINS].sum())
        if self.name == "work-like" and not evening > morning:
            raise ConfigError("work-like template must peak in the evening")
        if self.name == "residential-like" and not morning > evening:
            raise ConfigError("residential-like template must peak in the morning")
        if self.name == "leisure-like":
            if abs(morning - evening) > 0.25 * max(morning, evening):
                raise ConfigError("leisure-like template must stay flat at peaks")

    def masses(self):
        tpl = np.asarray(self.template)
        return float(tpl[MORNING_BINS].sum()), float(tpl[EVENING_BINS].sum())


def default_archetypes(noise_level=0.02):
    work = 0.15 + 0.25 * _bump(10, 5) + 1.0 * _bump(46, 6)
    residential = 0.15 + 1.0 * _bump(10, 5) + 0.25 * _bump(46, 6)
    leisure = 0.45 + 0.5 * _bump(28, 14)
    return (
        Archetype("work-like", tuple(float(v) for v in work), noise_level),
        Archetype("residential-like", tuple(float(v) for v in residential), noise_level),
        Archetype("leisure-like", tuple(float(v) for v in leisure), noise_level),
    )


@dataclass(frozen=True)
class CitySpec:
    """Generator configuration; defaults give a 1/16-scale desk-size city."""

    tube_count: int = 20
    bus_count: int = 300
    bike_count: int = 80
    center: tuple = (-0.12, 51.5)
    extent: tuple = (0.16, 0.08)          # degrees lon x lat
    cluster_grid: tuple = (3, 2)
    placement_jitter: float = 0.35        # fraction of a lattice cell
    mixtures: tuple = DEFAULT_MIXTURES
    archetypes: tuple = field(default_factory=default_archetypes)
    cluster_poi_bias: tuple = None        # per cluster per category multipliers
    poi_rate: float = 5.0
    poi_base: float = 0.3
    neighbor_weight: float = 0.3
    scatter_m: float = 120.0
    knn_k: int = 6
    seed: int = 42

    def __post_init__(self):
        for label, count in (("tube", self.tube_count), ("bus", self.bus_count),
                             ("bike", self.bike_count)):
            if count < 1:
                raise ConfigError(f"{label} count must be >= 1, got {count}")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ConfigError(f"extent must be positive, got {self.extent}")
        if self.cluster_grid[0] < 1 or self.cluster_grid[1] < 1:
            raise ConfigError("cluster grid must be at least 1x1")
        if not 0.0 <= self.placement_jitter <= 0.5:
            raise ConfigError(
                f"placement_jitter must lie in [0, 0.5], got {self.placement_jitter}")
        if len(self.mixtures) != self.num_clusters:
            raise ConfigError(
                f"{self.num_clusters} clusters need {self.num_clusters} archetype "
                f"mixtures, got {len(self.mixtures)}")
        for mix in self.mixtures:
            if len(mix) != len(self.archetypes) or any(p < 0 for p in mix):
                raise ConfigError(f"bad archetype mixture {mix}")
            if abs(sum(mix) - 1.0) > 1e-9:
                raise ConfigError(f"mixture {mix} does not sum to 1")
        names = [a.name for a in self.archetypes]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate archetype names")
        if self.cluster_poi_bias is not None:
            if len(self.cluster_poi_bias) != self.num_clusters:
                raise ConfigError("cluster_poi_bias needs one row per cluster")
            for row in self.cluster_poi_bias:
                if len(row) != len(LAND_USE_CATEGORIES) or any(b < 0 for b in row):
                    raise ConfigError(f"bad POI bias row {row}")
        if self.poi_rate <= 0 or self.poi_base < 0:
            raise ConfigError("poi_rate must be positive and poi_base non-negative")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.scatter_m < 0:
            raise ConfigError("scatter_m must be non-negative")

    @property
    def num_clusters(self):
        return self.cluster_grid[0] * self.cluster_grid[1]

    @property
    def total_nodes(self):
        return self.tube_count + self.bus_count + self.bike_count

    def cluster_centers(self):
        """Grid of cluster centers spanning the extent, row-major."""
        nx, ny = self.cluster_grid
        lon0, lat0 = self.center
        w, h = self.extent
        lons = [lon0 - w / 2 + w * (k + 0.5) / nx for k in range(nx)]
        lats = [lat0 - h / 2 + h * (k + 0.5) / ny for k in range(ny)]
        return tuple((lon, lat) for lat in lats for lon in lons)


@dataclass(frozen=True)
class GeneratedCity:
    """Paths of the emitted artifacts plus the parsed manifest."""

    nodes_path: str
    edges_path: str
    pois_path: str
    manifest_path: str
    manifest: dict
    graph: HeteroGraph


def _place_nodes(spec, rng):
    """Draw position, cluster, archetype, and density gain for every node.

    Nodes land on a jittered lattice over the extent, one per cell, so the
    network covers the whole city at a roughly even spacing while every
    location still looks organic. Each node belongs to the cluster whose
    center is nearest, which partitions the city into contiguous districts.
    The gain is the node's local station density relative to the city mean:
    stations in busy areas carry proportionally more riders, which leaves
    the density of a neighborhood visible in its feature magnitudes.
    """
    n = spec.total_nodes
    lon0, lat0 = spec.center
    w, h = spec.extent
    cols = int(math.ceil(math.sqrt(n * w / h)))
    rows = int(math.ceil(n / cols))
    slots = rng.permutation(cols * rows)[:n]

    roster = []
    for type_name, count in (("tube", spec.tube_count), ("bus", spec.bus_count),
                             ("bike", spec.bike_count)):
        roster.extend((type_name, k) for k in range(count))

    centers = spec.cluster_centers()
    # local equirectangular metric for the nearest-center test
    lon_weight = math.cos(math.radians(lat0)) ** 2
    clon = np.array([c[0] for c in centers])
    clat = np.array([c[1] for c in centers])

    placed = []
    for slot, (type_name, k) in zip(slots, roster):
        ci, cj = int(slot) % cols, int(slot) // cols
        j = spec.placement_jitter
        lon = lon0 - w / 2 + w * (ci + 0.5 + float(rng.uniform(-j, j))) / cols
        lat = lat0 - h / 2 + h * (cj + 0.5 + float(rng.uniform(-j, j))) / rows
        cluster = int(np.argmin((clon - lon) ** 2 * lon_weight + (clat - lat) ** 2))
        arch = int(rng.choice(len(spec.archetypes),
                              p=np.asarray(spec.mixtures[cluster])))
        placed.append({
            "id": f"{type_name}_{k:03d}",
            "type": type_name,
            "cluster": cluster,
            "lon": lon,
            "lat": lat,
            "archetype": spec.archetypes[arch].name,
            "archetype_index": arch,
            "gain": 1.0,
        })

    lon = np.array([p["lon"] for p in placed])
    lat = np.array([p["lat"] for p in placed])
    dist = _haversine_matrix(lon, lat, lon, lat)
    local = (dist <= DENSITY_RADIUS_M).sum(axis=1).astype(np.float64)
    for node, density in zip(placed, local / local.mean()):
        node["gain"] = float(density)
    return placed


def _features(spec, placed, rng):
    """Archetype template scaled by the density gain, plus truncated noise.

    Mode deliberately leaves no trace here; all modes ride the same
    magnitude scale, so a model can only learn mode effects from types.
    """
    out = []
    for node in placed:
        arch = spec.archetypes[node["archetype_index"]]
        clean = node["gain"] * np.asarray(arch.template)
        noisy = clean + rng.normal(0.0, arch.noise_level * node["gain"], size=64)
        out.append(np.maximum(noisy, 0.0))
    return out


def _knn_pairs(spec, placed):
    """Undirected k-nearest-neighbor pairs by great-circle distance."""
    lon = np.array([n["lon"] for n in placed])
    lat = np.array([n["lat"] for n in placed])
    dist = _haversine_matrix(lon, lat, lon, lat)
    np.fill_diagonal(dist, np.inf)
    pairs = set()
    for i in range(len(placed)):
        order = np.argsort(dist[i], kind="stable")[:spec.knn_k]
        for j in order:
            if not np.isfinite(dist[i, int(j)]):   # fewer than k neighbors exist
                continue
            a, b = sorted((placed[i]["id"], placed[int(j)]["id"]))
            pairs.add((a, b))
    return sorted(pairs)


def _edges(spec, placed):
    """Bidirectional road k-NN links plus a tube-line chain along longitude."""
    cluster_of = {n["id"]: n["cluster"] for n in placed}
    edges = []
    for a, b in _knn_pairs(spec, placed):
        ordinal = (cluster_of[a] + cluster_of[b]) % 5
        road = ROAD_TYPE_BY_ORDINAL[ordinal]
        edges.append(EdgeRecord(a, b, road, ordinal))
        edges.append(EdgeRecord(b, a, road, ordinal))
    lon_of = {n["id"]: n["lon"] for n in placed}
    tube_ids = [n["id"] for n in placed if n["type"] == "tube"]
    tube_ids.sort(key=lambda nid: (lon_of[nid], nid))
    line_ord = EDGE_TYPE_ORDINALS["tube-line"]
    for a, b in zip(tube_ids, tube_ids[1:]):
        edges.append(EdgeRecord(a, b, "tube-line", line_ord))
        edges.append(EdgeRecord(b, a, "tube-line", line_ord))
    return edges


def _poi_intensities(spec, placed, edges):
    """Per-node per-category Poisson rates with typed neighbor coupling."""
    neighbor_ids = {n["id"]: set() for n in placed}
    for e in edges:
        neighbor_ids[e.src].add(e.dst)
        neighbor_ids[e.dst].add(e.src)
    contributions = {
        n["id"]: np.asarray(CONTRIBUTION_MAPS[n["archetype"]][n["type"]])
        for n in placed
    }
    lam = {}
    for node in placed:
        total = np.full(len(LAND_USE_CATEGORIES), spec.poi_base)
        total = total + contributions[node["id"]]
        for nid in sorted(neighbor_ids[node["id"]] - {node["id"]}):
            total = total + spec.neighbor_weight * contributions[nid]
        if spec.cluster_poi_bias is not None:
            total = total * np.asarray(spec.cluster_poi_bias[node["cluster"]])
        lam[node["id"]] = spec.poi_rate * total
    return lam


def _scatter_pois(spec, placed, lam, rng):
    """Poisson counts per (node, category), scattered in a small disc."""
    rows = []
    parents = []
    for node in placed:
        rates = lam[node["id"]]
        lat_scale = METERS_PER_DEG_LAT
        lon_scale = METERS_PER_DEG_LAT * math.cos(math.radians(node["lat"]))
        for c, category in enumerate(LAND_USE_CATEGORIES):
            count = int(rng.poisson(rates[c]))
            for _ in range(count):
                radius = spec.scatter_m * math.sqrt(float(rng.uniform()))
                angle = float(rng.uniform(0.0, 2.0 * math.pi))
                lon = node["lon"] + radius * math.cos(angle) / lon_scale
                lat = node["lat"] + radius * math.sin(angle) / lat_scale
                rows.append((lon, lat, category))
                parents.append(node["id"])
    return rows, parents


def _write_pois(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lon", "lat", "category"])
        for lon, lat, category in rows:
            writer.writerow([repr(lon), repr(lat), category])


def generate(spec, out_dir):
    """Emit nodes.csv, edges.csv, pois.csv, and manifest.json under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    placed = _place_nodes(spec, rng)
    features = _features(spec, placed, rng)
    edges = _edges(spec, placed)
    lam = _poi_intensities(spec, placed, edges)
    poi_rows, poi_parents = _scatter_pois(spec, placed, lam, rng)

    nodes = [
        NodeRecord(n["id"], n["type"], n["lon"], n["lat"],
                   tuple(float(v) for v in x))
        for n, x in zip(placed, features)
    ]
    graph = HeteroGraph(nodes, edges)

    nodes_path = os.path.join(out_dir, "nodes.csv")
    edges_path = os.path.join(out_dir, "edges.csv")
    pois_path = os.path.join(out_dir, "pois.csv")
    manifest_path = os.path.join(out_dir, "manifest.json")

    write_graph(graph, nodes_path, edges_path)
    _write_pois(poi_rows, pois_path)

    expected = {}
    for cluster in range(spec.num_clusters):
        member_lam = [lam[n["id"]] for n in placed if n["cluster"] == cluster]
        totals = np.sum(member_lam, axis=0) if member_lam else np.zeros(6)
        expected[str(cluster)] = {
            cat: float(v) for cat, v in zip(LAND_USE_CATEGORIES, totals)
        }

    manifest = {
        "seed": spec.seed,
        "counts": {"tube": spec.tube_count, "bus": spec.bus_count,
                   "bike": spec.bike_count},
        "extent": list(spec.extent),
        "center": list(spec.center),
        "cluster_centers": [list(c) for c in spec.cluster_centers()],
        "mixtures": [list(m) for m in spec.mixtures],
        "archetype_names": [a.name for a in spec.archetypes],
        "templates": {a.name: list(a.template) for a in spec.archetypes},
        "noise_levels": {a.name: a.noise_level for a in spec.archetypes},
        "archetype_contributions": {
            arch: list(v) for arch, v in ARCHETYPE_CONTRIBUTIONS.items()
        },
        "type_contributions": {
            t: list(v) for t, v in TYPE_CONTRIBUTIONS.items()
        },
        "contribution_maps": {
            arch: {t: list(v) for t, v in modes.items()}
            for arch, modes in CONTRIBUTION_MAPS.items()
        },
        "placement_jitter": spec.placement_jitter,
        "density_radius_m": DENSITY_RADIUS_M,
        "poi_rate": spec.poi_rate,
        "poi_base": spec.poi_base,
        "neighbor_weight": spec.neighbor_weight,
        "scatter_m": spec.scatter_m,
        "knn_k": spec.knn_k,
        "nodes": {
            n["id"]: {
                "cluster": n["cluster"],
                "archetype": n["archetype"],
                "gain": n["gain"],
                "lambda": [float(v) for v in lam[n["id"]]],
            }
            for n in placed
        },
        "poi_parents": poi_parents,
        "expected_cluster_poi_counts": expected,
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "num_pois": len(poi_rows),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return GeneratedCity(
        nodes_path=nodes_path, edges_path=edges_path, pois_path=pois_path,
        manifest_path=manifest_path, manifest=manifest, graph=graph)
