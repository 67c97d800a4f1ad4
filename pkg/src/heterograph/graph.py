"""Heterogeneous graph data model, CSV ingestion, catchment labeling, splits.

The graph is the single source of structural truth: typed nodes carrying a
fixed-arity ridership feature vector and typed directed edges.  Instances are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, IngestionError, LabelingError

# Ordinal codes consumed by the edge-type dissimilarity; fixed here because
# downstream similarity scores depend on the numeric values.
EDGE_TYPE_ORDINALS = {
    "primary": 0,
    "secondary": 1,
    "tertiary": 2,
    "residential": 3,
    "unclassified": 4,
    "tube-line": 5,
}

DEFAULT_NODE_TYPES = ("bike", "bus", "tube")

DEFAULT_EDGE_TYPES = tuple(sorted(EDGE_TYPE_ORDINALS, key=EDGE_TYPE_ORDINALS.get))

LAND_USE_CATEGORIES = ("office", "sustenance", "transport", "retail", "leisure", "residence")

FEATURE_COUNT = 64

EARTH_RADIUS_M = 6371000.0


@dataclass(frozen=True)
class GraphSchema:
    """Configurable vocabularies and feature arity for CSV ingestion."""

    node_types: tuple[str, ...] = DEFAULT_NODE_TYPES
    edge_ordinals: dict[str, int] = field(default_factory=lambda: dict(EDGE_TYPE_ORDINALS))
    feature_count: int = FEATURE_COUNT


@dataclass(frozen=True)
class NodeRecord:
    id: str
    node_type: str
    lon: float
    lat: float
    features: tuple[float, ...]

    def feature_array(self):
        return np.asarray(self.features, dtype=np.float64)


@dataclass(frozen=True)
class EdgeRecord:
    src: str
    dst: str
    edge_type: str
    ordinal: int


class GraphIndex:
    """Dense array views of a graph, built once per immutable instance.

    Positions follow node insertion order; edge arrays follow edge list
    order.  Models and explainers consume these instead of walking records.
    """

    def __init__(self, graph):
        self.ids = tuple(graph.nodes)
        self.pos = {nid: k for k, nid in enumerate(self.ids)}
        nodes = list(graph.nodes.values())
        self.node_type_names = graph.node_types
        type_pos = {t: k for k, t in enumerate(graph.node_types)}
        self.node_type = np.array([type_pos[n.node_type] for n in nodes], dtype=np.intp)
        self.features = np.array([n.features for n in nodes], dtype=np.float64)
        self.lon = np.array([n.lon for n in nodes], dtype=np.float64)
        self.lat = np.array([n.lat for n in nodes], dtype=np.float64)
        self.src = np.array([self.pos[e.src] for e in graph.edges], dtype=np.intp)
        self.dst = np.array([self.pos[e.dst] for e in graph.edges], dtype=np.intp)
        self.edge_ordinal = np.array([e.ordinal for e in graph.edges], dtype=np.float64)
        edge_type_pos = {t: k for k, t in enumerate(graph.edge_types)}
        self.edge_type = np.array(
            [edge_type_pos[e.edge_type] for e in graph.edges], dtype=np.intp
        )


class HeteroGraph:
    """Typed nodes plus typed directed edges.

    Parameters
    ----------
    nodes : iterable of NodeRecord
    edges : iterable of EdgeRecord
    node_type_vocab : tuple of str, optional
        The node-type vocabulary.  Defaults to the sorted set of types
        present.  Passing the full vocabulary keeps parameter layouts stable
        for filtered graphs.
    edge_type_vocab : tuple of str, optional
        Edge-type vocabulary ordered by ordinal code; defaults to the
        configured encoding table.
    feature_scaling : (ndarray, ndarray), optional
        Per-column (min, max) retained by :func:`normalize_features`.
    """

    def __init__(self, nodes, edges, node_type_vocab=None, edge_type_vocab=None,
                 feature_scaling=None):
        self.nodes = {}
        arity = None
        for n in nodes:
            if n.id in self.nodes:
                raise IngestionError(f"duplicate node id {n.id!r}")
            if arity is None:
                arity = len(n.features)
            elif len(n.features) != arity:
                raise IngestionError(
                    f"node {n.id!r} has {len(n.features)} features, expected {arity}"
                )
            self.nodes[n.id] = n
        self.edges = tuple(edges)
        for e in self.edges:
            if e.src not in self.nodes:
                raise IngestionError(f"edge references absent node id {e.src!r}")
            if e.dst not in self.nodes:
                raise IngestionError(f"edge references absent node id {e.dst!r}")
        if node_type_vocab is None:
            node_type_vocab = tuple(sorted({n.node_type for n in self.nodes.values()}))
        self.node_types = tuple(node_type_vocab)
        missing = {n.node_type for n in self.nodes.values()} - set(self.node_types)
        if missing:
            raise IngestionError(f"node types outside vocabulary: {sorted(missing)}")
        if edge_type_vocab is None:
            edge_type_vocab = DEFAULT_EDGE_TYPES
        self.edge_types = tuple(edge_type_vocab)
        missing_edge = {e.edge_type for e in self.edges} - set(self.edge_types)
        if missing_edge:
            raise IngestionError(f"edge types outside vocabulary: {sorted(missing_edge)}")
        self.feature_scaling = feature_scaling
        self.feature_count = arity if arity is not None else 0
        self._index = None

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def index(self):
        if self._index is None:
            self._index = GraphIndex(self)
        return self._index

    def is_heterogeneous(self):
        """True when the declared type vocabularies allow more than two kinds.

        Declared, not observed: a filtered or toy graph that keeps the full
        vocabulary still counts, since parameter layouts follow the vocab.
        """
        return len(self.node_types) + len(self.edge_types) > 2

    def neighbors(self, node_id):
        """Ids adjacent to ``node_id`` by in- or out-edges (the node excluded)."""
        if node_id not in self.nodes:
            raise ContractError(f"unknown node id {node_id!r}")
        out = set()
        for e in self.edges:
            if e.src == node_id:
                out.add(e.dst)
            elif e.dst == node_id:
                out.add(e.src)
        out.discard(node_id)
        return out

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.node_types == other.node_types
            and self.edge_types == other.edge_types
        )

    def __repr__(self):
        return (
            f"HeteroGraph(|V|={self.num_nodes}, |E|={self.num_edges}, "
            f"types={self.node_types}/{self.edge_types})"
        )


@dataclass(frozen=True)
class LandUseTargets:
    """Per-node land-use intensities over the six indicator categories."""

    ids: tuple[str, ...]
    values: np.ndarray          # (N, |categories|), min-max normalized to [0, 1]
    raw: np.ndarray             # un-normalized POI counts
    categories: tuple[str, ...]
    norm_min: np.ndarray
    norm_max: np.ndarray
    skipped_pois: int = 0

    def row(self, node_id):
        return self.values[self.ids.index(node_id)]

    def subset(self, keep_ids):
        keep = [k for k, nid in enumerate(self.ids) if nid in keep_ids]
        idx = np.asarray(keep, dtype=np.intp)
        return LandUseTargets(
            ids=tuple(self.ids[k] for k in keep),
            values=self.values[idx],
            raw=self.raw[idx],
            categories=self.categories,
            norm_min=self.norm_min,
            norm_max=self.norm_max,
            skipped_pois=self.skipped_pois,
        )


@dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/validation/test node-id sets plus the seed used."""

    train: frozenset
    val: frozenset
    test: frozenset
    seed: int

    def positions(self, graph, which):
        ids = getattr(self, which)
        return np.array([k for k, nid in enumerate(graph.index.ids) if nid in ids],
                        dtype=np.intp)


def _parse_float(value, path, row_num, column):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise IngestionError(
            f"{path}, row {row_num}: column {column!r} is not a number: {value!r}"
        ) from None


def load_graph(nodes_file, edges_file, schema=None):
    """Read node and edge CSVs into a validated :class:`HeteroGraph`.

    Node rows: ``id,type,lon,lat,f000..fNNN``; edge rows: ``src,dst,edge_type``.
    Errors carry the offending file and row number.
    """
    schema = schema or GraphSchema()
    nodes = []
    with open(nodes_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["id", "type", "lon", "lat"]:
            raise IngestionError(f"{nodes_file}: header must start with id,type,lon,lat")
        n_feat_cols = len(header) - 4
        if n_feat_cols != schema.feature_count:
            raise IngestionError(
                f"{nodes_file}: {n_feat_cols} feature columns, expected {schema.feature_count}"
            )
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{nodes_file}, row {row_num}: {len(row)} columns, expected {len(header)}"
                )
            node_id, node_type = row[0], row[1]
            if node_type not in schema.node_types:
                raise IngestionError(
                    f"{nodes_file}, row {row_num}: unknown node type {node_type!r}"
                )
            feats = tuple(
                _parse_float(v, nodes_file, row_num, header[4 + k])
                for k, v in enumerate(row[4:])
            )
            nodes.append(NodeRecord(
                id=node_id,
                node_type=node_type,
                lon=_parse_float(row[2], nodes_file, row_num, "lon"),
                lat=_parse_float(row[3], nodes_file, row_num, "lat"),
                features=feats,
            ))

    node_ids = {n.id for n in nodes}
    edges = []
    with open(edges_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst", "edge_type"]:
            raise IngestionError(f"{edges_file}: header must be src,dst,edge_type")
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(
                    f"{edges_file}, row {row_num}: expected 3 columns, got {len(row)}"
                )
            src, dst, edge_type = row
            if edge_type not in schema.edge_ordinals:
                raise IngestionError(
                    f"{edges_file}, row {row_num}: unknown edge type {edge_type!r}"
                )
            if src not in node_ids:
                raise IngestionError(f"{edges_file}, row {row_num}: absent node id {src!r}")
            if dst not in node_ids:
                raise IngestionError(f"{edges_file}, row {row_num}: absent node id {dst!r}")
            edges.append(EdgeRecord(src, dst, edge_type, schema.edge_ordinals[edge_type]))

    observed = len({n.node_type for n in nodes}) + len({e.edge_type for e in edges})
    if observed <= 2:
        raise IngestionError(
            "graph is not heterogeneous: need more than two observed node plus edge types"
        )
    return HeteroGraph(
        nodes,
        edges,
        node_type_vocab=schema.node_types,
        edge_type_vocab=tuple(sorted(schema.edge_ordinals, key=schema.edge_ordinals.get)),
    )


def write_graph(graph, nodes_file, edges_file):
    """Serialize a graph back to the ingestion CSV schemas (round-trip exact)."""
    with open(nodes_file, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "type", "lon", "lat"]
                        + [f"f{k:03d}" for k in range(graph.feature_count)])
        for n in graph.nodes.values():
            writer.writerow([n.id, n.node_type, repr(n.lon), repr(n.lat)]
                            + [repr(v) for v in n.features])
    with open(edges_file, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "edge_type"])
        for e in graph.edges:
            writer.writerow([e.src, e.dst, e.edge_type])


def haversine_m(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters between two lon/lat points."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))


def _haversine_matrix(lon, lat, plon, plat):
    """(nodes x POIs) great-circle distances, vectorized."""
    lat1 = np.radians(lat)[:, None]
    lat2 = np.radians(plat)[None, :]
    dp = lat2 - lat1
    dl = np.radians(plon)[None, :] - np.radians(lon)[:, None]
    a = np.sin(dp / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arctan2(np.sqrt(a), np.sqrt(1.0 - a))


def load_pois(poi_file, categories=LAND_USE_CATEGORIES):
    """Read ``lon,lat,category`` rows; unknown categories are counted and skipped."""
    pois = []
    skipped = 0
    with open(poi_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["lon", "lat", "category"]:
            raise IngestionError(f"{poi_file}: header must be lon,lat,category")
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(
                    f"{poi_file}, row {row_num}: expected 3 columns, got {len(row)}"
                )
            lon = _parse_float(row[0], poi_file, row_num, "lon")
            lat = _parse_float(row[1], poi_file, row_num, "lat")
            if row[2] not in categories:
                skipped += 1
                continue
            pois.append((lon, lat, row[2]))
    return pois, skipped


def label_by_catchment(graph, poi_file, radius_m=1000.0, categories=LAND_USE_CATEGORIES):
    """Count POIs within each node's circular catchment, then min-max normalize.

    A POI belongs to a node's catchment when the great-circle distance is at
    most ``radius_m`` (boundary inclusive).  Counts are normalized per
    category to [0, 1]; the scaling constants are retained on the result.
    """
    if radius_m <= 0:
        raise ConfigError(f"catchment radius must be positive, got {radius_m}")
    pois, skipped = load_pois(poi_file, categories)
    if skipped:
        warnings.warn(f"skipped {skipped} POIs with unknown categories", stacklevel=2)
    if not pois:
        raise LabelingError(f"{poi_file}: no POIs with known categories")

    idx = graph.index
    plon = np.array([p[0] for p in pois])
    plat = np.array([p[1] for p in pois])
    cat_pos = {c: k for k, c in enumerate(categories)}
    pcat = np.array([cat_pos[p[2]] for p in pois], dtype=np.intp)

    raw = np.zeros((graph.num_nodes, len(categories)))
    # Chunk over nodes to bound the distance-matrix size.
    chunk = max(1, int(4e6) // max(1, len(pois)))
    for start in range(0, graph.num_nodes, chunk):
        stop = min(start + chunk, graph.num_nodes)
        dists = _haversine_matrix(idx.lon[start:stop], idx.lat[start:stop], plon, plat)
        within = dists <= radius_m
        for c in range(len(categories)):
            raw[start:stop, c] = within[:, pcat == c].sum(axis=1)

    norm_min = raw.min(axis=0)
    norm_max = raw.max(axis=0)
    span = norm_max - norm_min
    values = np.zeros_like(raw)
    nonconst = span > 0
    values[:, nonconst] = (raw[:, nonconst] - norm_min[nonconst]) / span[nonconst]
    return LandUseTargets(
        ids=idx.ids,
        values=values,
        raw=raw,
        categories=tuple(categories),
        norm_min=norm_min,
        norm_max=norm_max,
        skipped_pois=skipped,
    )


def split(graph, ratios=(0.70, 0.15, 0.15), seed=0):
    """Deterministic shuffled partition of the graph's nodes.

    Set sizes follow cumulative rounding of the ratios, so each set is
    within one node of its exact proportion.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    ids = list(graph.nodes)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    cut1 = int(round(len(ids) * ratios[0]))
    cut2 = int(round(len(ids) * (ratios[0] + ratios[1])))
    shuffled = [ids[k] for k in order]
    return SplitMasks(
        train=frozenset(shuffled[:cut1]),
        val=frozenset(shuffled[cut1:cut2]),
        test=frozenset(shuffled[cut2:]),
        seed=seed,
    )


def normalize_features(graph, mode="min-max"):
    """Return a graph with features scaled per column to [0, 1].

    Constant columns map to 0.  The per-column (min, max) pair is retained
    on the returned graph so attributions stay interpretable in raw units.
    Applying the operation twice is a no-op.
    """
    if mode == "none":
        return graph
    if mode != "min-max":
        raise ConfigError(f"unknown normalization mode {mode!r}")
    feats = graph.index.features
    col_min = feats.min(axis=0)
    col_max = feats.max(axis=0)
    span = col_max - col_min
    scaled = np.zeros_like(feats)
    nonconst = span > 0
    scaled[:, nonconst] = (feats[:, nonconst] - col_min[nonconst]) / span[nonconst]
    nodes = [
        NodeRecord(n.id, n.node_type, n.lon, n.lat, tuple(scaled[k]))
        for k, n in enumerate(graph.nodes.values())
    ]
    return HeteroGraph(
        nodes,
        graph.edges,
        node_type_vocab=graph.node_types,
        edge_type_vocab=graph.edge_types,
        feature_scaling=(col_min, col_max),
    )


def filter_graph(graph, keep_types):
    """Induced subgraph on the nodes whose type is in ``keep_types``.

    Vocabularies are preserved so parameter layouts stay comparable across
    ablation scenarios.
    """
    keep_types = set(keep_types)
    unknown = keep_types - set(graph.node_types)
    if unknown:
        raise ConfigError(f"unknown node types in filter: {sorted(unknown)}")
    nodes = [n for n in graph.nodes.values() if n.node_type in keep_types]
    kept_ids = {n.id for n in nodes}
    edges = [e for e in graph.edges if e.src in kept_ids and e.dst in kept_ids]
    return HeteroGraph(
        nodes,
        edges,
        node_type_vocab=graph.node_types,
        edge_type_vocab=graph.edge_types,
        feature_scaling=graph.feature_scaling,
    )


def sample_neighbors(graph, seed_ids, budget_per_type, seed=0):
    """One-hop uniform neighbor sampling with a per-type budget.

    Stand-in for a typed mini-batch loader: keeps the seed nodes plus, per
    node type, at most ``budget_per_type`` of their 1-hop neighbors, sampled
    uniformly without replacement, then returns the induced subgraph.
    """
    seed_ids = [nid for nid in graph.nodes if nid in set(seed_ids)]
    if not seed_ids:
        raise ContractError("sample_neighbors needs at least one seed node")
    rng = np.random.default_rng(seed)
    neighbor_pool = {}
    for nid in seed_ids:
        for other in sorted(graph.neighbors(nid)):
            neighbor_pool.setdefault(other, graph.nodes[other].node_type)
    chosen = set(seed_ids)
    for ntype in graph.node_types:
        candidates = [nid for nid, t in neighbor_pool.items() if t == ntype and nid not in chosen]
        if len(candidates) > budget_per_type:
            picks = rng.choice(len(candidates), size=budget_per_type, replace=False)
            candidates = [candidates[k] for k in sorted(picks)]
        chosen.update(candidates)
    nodes = [n for n in graph.nodes.values() if n.id in chosen]
    edges = [e for e in graph.edges if e.src in chosen and e.dst in chosen]
    return HeteroGraph(
        nodes,
        edges,
        node_type_vocab=graph.node_types,
        edge_type_vocab=graph.edge_types,
        feature_scaling=graph.feature_scaling,
    )
