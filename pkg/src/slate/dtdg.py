"""Discrete-time dynamic graphs: data model, loaders, generators, splits, windows.

A dynamic graph is a fixed node set observed over T snapshots. Snapshots are
undirected, unweighted, simple (no self-loops). All types are immutable after
construction and safe to share across threads for reading.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EdgeListParseError, NodeBoundsError

Edge = tuple[int, int]


def _canonical(u: int, v: int) -> Edge:
    u, v = int(u), int(v)
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Snapshot:
    """One static graph observed at a single time step."""

    num_nodes: int
    edges: frozenset[Edge]
    degree: np.ndarray = field(compare=False)

    @staticmethod
    def from_edges(num_nodes: int, edges) -> "Snapshot":
        canon = frozenset(_canonical(u, v) for u, v in edges)
        deg = np.zeros(num_nodes, dtype=np.int64)
        for u, v in canon:
            if u == v:
                raise ValueError(f"self-loop ({u},{v}) not allowed in a snapshot")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise NodeBoundsError(f"edge ({u},{v}) outside [0,{num_nodes})")
            deg[u] += 1
            deg[v] += 1
        deg.flags.writeable = False
        return Snapshot(num_nodes, canon, deg)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def isolation_mask(self) -> np.ndarray:
        """Boolean vector, true where the node has no incident edge here."""
        return self.degree == 0

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self.num_nodes == other.num_nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.num_nodes, self.edges))


@dataclass(frozen=True)
class DynamicGraph:
    """Ordered snapshots over a fixed node set."""

    num_nodes: int
    snapshots: tuple[Snapshot, ...]

    def __post_init__(self):
        if self.num_snapshots < 1:
            raise ConfigError("a dynamic graph needs at least one snapshot")
        for snap in self.snapshots:
            if snap.num_nodes != self.num_nodes:
                raise ConfigError("snapshot node count differs from graph node count")

    @property
    def num_snapshots(self) -> int:
        return len(self.snapshots)

    def edge_union(self, stop: int | None = None) -> frozenset[Edge]:
        """Union of edge sets over snapshots [0, stop); all snapshots if stop is None."""
        stop = self.num_snapshots if stop is None else stop
        out: set[Edge] = set()
        for snap in self.snapshots[:stop]:
            out |= snap.edges
        return frozenset(out)

    def __eq__(self, other):
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        return self.num_nodes == other.num_nodes and self.snapshots == other.snapshots

    def __hash__(self):
        return hash((self.num_nodes, self.snapshots))


@dataclass(frozen=True)
class Window:
    """The last `size` snapshot indices ending at `end`, clipped at the origin."""

    end: int
    size: int
    members: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)


def window_of(g: DynamicGraph, t: int, w: int) -> Window:
    """Window of the w most recent snapshots ending at t: members [max(0, t-w+1), t]."""
    if not 0 <= t < g.num_snapshots:
        raise ConfigError(f"snapshot index {t} outside [0,{g.num_snapshots})")
    if w < 1:
        raise ConfigError("window size must be >= 1")
    return Window(end=t, size=w, members=tuple(range(max(0, t - w + 1), t + 1)))


# ---------------------------------------------------------------------------
# Edge-list I/O
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeListFormat:
    """Declares how to interpret `u v t` lines.

    one_based shifts node ids and snapshot indices down by one. When num_nodes
    is given, ids are bounds-checked and kept as-is (missing ids are isolated
    nodes); otherwise distinct ids are remapped to a dense 0..N-1 range and the
    remapping is reported. num_snapshots, when given, pads trailing empty
    snapshots up to that count.
    """

    one_based: bool = False
    num_nodes: int | None = None
    num_snapshots: int | None = None


@dataclass
class LoadReport:
    self_loops_dropped: int = 0
    duplicates_dropped: int = 0
    remapping: dict[int, int] | None = None  # original id -> dense id, when remapped


def read_edge_list(source, fmt: EdgeListFormat = EdgeListFormat()) -> tuple[DynamicGraph, LoadReport]:
    """Parse `u v t` lines into a DynamicGraph plus a load report.

    Accepts a text stream, a byte stream, or a path. An optional first line that
    is not three integers is treated as a header and skipped. Duplicate edges
    (in either orientation) are merged; self-loops are dropped and counted.
    """
    if isinstance(source, (str, bytes, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_edge_list(fh, fmt)
    if isinstance(source, io.BufferedIOBase) or (hasattr(source, "read") and "b" in getattr(source, "mode", "")):
        source = io.TextIOWrapper(source, encoding="utf-8")

    report = LoadReport()
    triples: list[tuple[int, int, int]] = []
    t_max = -1  # counts every parsed line, including dropped self-loops
    shift = 1 if fmt.one_based else 0
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise EdgeListParseError(line_no, f"expected 'u v t', got {line!r}")
        try:
            u, v, t = (int(p) for p in parts)
        except ValueError:
            if line_no == 1:
                continue  # header line
            raise EdgeListParseError(line_no, f"non-integer field in {line!r}")
        u, v, t = u - shift, v - shift, t - shift
        if t < 0:
            raise EdgeListParseError(line_no, f"negative snapshot index {t}")
        if u < 0 or v < 0:
            raise EdgeListParseError(line_no, f"negative node id in {line!r}")
        if fmt.num_nodes is not None and (u >= fmt.num_nodes or v >= fmt.num_nodes):
            raise NodeBoundsError(
                f"line {line_no}: node id {max(u, v)} >= declared num_nodes {fmt.num_nodes}"
            )
        t_max = max(t_max, t)
        if u == v:
            report.self_loops_dropped += 1
            continue
        triples.append((u, v, t))

    if fmt.num_nodes is None:
        ids = sorted({u for u, _, _ in triples} | {v for _, v, _ in triples})
        remap = {orig: dense for dense, orig in enumerate(ids)}
        if any(orig != dense for orig, dense in remap.items()):
            report.remapping = remap
        triples = [(remap[u], remap[v], t) for u, v, t in triples]
        n = len(ids)
        if n == 0:
            raise ConfigError("edge list declares no nodes and no num_nodes was given")
    else:
        n = fmt.num_nodes

    num_snaps = t_max + 1
    if fmt.num_snapshots is not None:
        if fmt.num_snapshots < num_snaps:
            raise ConfigError(
                f"declared num_snapshots {fmt.num_snapshots} < max snapshot index {t_max} + 1"
            )
        num_snaps = fmt.num_snapshots
    if num_snaps == 0:
        raise ConfigError("edge list is empty and no num_snapshots was given")

    per_t: list[set[Edge]] = [set() for _ in range(num_snaps)]
    for u, v, t in triples:
        e = _canonical(u, v)
        if e in per_t[t]:
            report.duplicates_dropped += 1
        else:
            per_t[t].add(e)

    snaps = tuple(Snapshot.from_edges(n, edges) for edges in per_t)
    return DynamicGraph(n, snaps), report


def load_edge_list(source, fmt: EdgeListFormat = EdgeListFormat()) -> DynamicGraph:
    """Like read_edge_list, but returns the graph alone and warns about drops."""
    g, report = read_edge_list(source, fmt)
    if report.self_loops_dropped:
        warnings.warn(f"dropped {report.self_loops_dropped} self-loop line(s)", stacklevel=2)
    return g


def write_edge_list(g: DynamicGraph, sink) -> None:
    """Write `u v t` lines (canonical u<v order, snapshots ascending)."""
    if isinstance(sink, (str, bytes, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_edge_list(g, fh)
            return
    for t, snap in enumerate(g.snapshots):
        for u, v in snap.sorted_edges():
            sink.write(f"{u} {v} {t}\n")


def write_metadata(g: DynamicGraph, sink, name: str = "") -> None:
    """Flat key-value sidecar carrying what an edge list alone cannot."""
    if isinstance(sink, (str, bytes, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_metadata(g, fh, name)
            return
    sink.write(f"name = {name}\n")
    sink.write(f"num_nodes = {g.num_nodes}\n")
    sink.write(f"num_snapshots = {g.num_snapshots}\n")


def read_metadata(source) -> dict[str, str]:
    if isinstance(source, (str, bytes, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_metadata(fh)
    out = {}
    for line in source:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def _pairs(n: int) -> np.ndarray:
    """All unordered node pairs of [0,n), lexicographic, shape (n*(n-1)/2, 2)."""
    iu, ju = np.triu_indices(n, k=1)
    return np.stack([iu, ju], axis=1)


def generate_erdos_renyi(n: int, p: float, t: int, seed: int) -> DynamicGraph:
    """Each unordered pair wired independently with probability p, per snapshot."""
    if n < 1 or t < 1:
        raise ConfigError("need n >= 1 and t >= 1")
    if not 0.0 <= p <= 1.0:
        raise ConfigError("p must be in [0,1]")
    rng = np.random.default_rng(seed)
    pairs = _pairs(n)
    snaps = []
    for _ in range(t):
        keep = rng.random(len(pairs)) < p
        snaps.append(Snapshot.from_edges(n, map(tuple, pairs[keep])))
    return DynamicGraph(n, tuple(snaps))


def generate_sbm(
    n: int,
    num_blocks: int,
    p_in: float,
    p_out: float,
    t: int,
    seed: int,
) -> DynamicGraph:
    """Stochastic block model with a block assignment fixed across snapshots.

    Blocks are contiguous id ranges of equal size; intra-block pairs are wired
    with p_in and inter-block pairs with p_out, independently per snapshot.
    """
    if n < 1 or t < 1 or num_blocks < 1:
        raise ConfigError("need n >= 1, t >= 1, num_blocks >= 1")
    if n % num_blocks != 0:
        raise ConfigError(f"n={n} not divisible by num_blocks={num_blocks}")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ConfigError("probabilities must be in [0,1]")
    rng = np.random.default_rng(seed)
    block = np.arange(n) // (n // num_blocks)
    pairs = _pairs(n)
    prob = np.where(block[pairs[:, 0]] == block[pairs[:, 1]], p_in, p_out)
    snaps = []
    for _ in range(t):
        keep = rng.random(len(pairs)) < prob
        snaps.append(Snapshot.from_edges(n, map(tuple, pairs[keep])))
    return DynamicGraph(n, tuple(snaps))


def generate_sbm_churn(
    n: int,
    num_blocks: int,
    p_in: float,
    p_out: float,
    t: int,
    seed: int,
    active_prob: float = 0.6,
    flip_prob: float = 0.15,
    drift_prob: float = 0.0,
    edge_persist: float = 0.0,
) -> DynamicGraph:
    """Block-model variant with node churn, optional block drift, and optional
    edge persistence.

    Each node carries a two-state Markov activity chain (stationary activity
    rate active_prob, per-step flip rate scaled by flip_prob); edges are drawn
    per the block model but only between nodes active at that snapshot, so a
    tunable fraction of nodes is isolated at every step. With drift_prob > 0,
    each node additionally moves to a uniformly random other block with that
    probability per step. With edge_persist > 0, an edge whose endpoints stay
    active carries over with that probability, and fresh draws are thinned by
    (1 - edge_persist), so recent pair structure predicts the next snapshot.
    """
    if not 0.0 < active_prob < 1.0:
        raise ConfigError("active_prob must be in (0,1)")
    for name, value in (("flip_prob", flip_prob), ("drift_prob", drift_prob),
                        ("edge_persist", edge_persist)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0,1]")
    if n % num_blocks != 0:
        raise ConfigError(f"n={n} not divisible by num_blocks={num_blocks}")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ConfigError("probabilities must be in [0,1]")
    rng = np.random.default_rng(seed)
    block = np.arange(n) // (n // num_blocks)
    pairs = _pairs(n)
    # Transition rates keeping active_prob stationary: P(off->on) and P(on->off).
    p_on = flip_prob * active_prob
    p_off = flip_prob * (1.0 - active_prob)
    active = rng.random(n) < active_prob
    prev_keep = np.zeros(len(pairs), dtype=bool)
    snaps = []
    for _ in range(t):
        prob = np.where(block[pairs[:, 0]] == block[pairs[:, 1]], p_in, p_out)
        both_active = active[pairs[:, 0]] & active[pairs[:, 1]]
        carried = prev_keep & (rng.random(len(pairs)) < edge_persist)
        fresh = rng.random(len(pairs)) < prob * (1.0 - edge_persist)
        keep = (carried | fresh) & both_active
        snaps.append(Snapshot.from_edges(n, map(tuple, pairs[keep])))
        prev_keep = keep
        flips = rng.random(n)
        active = np.where(active, flips >= p_off, flips < p_on)
        if drift_prob > 0.0:
            moving = rng.random(n) < drift_prob
            shifts = rng.integers(1, num_blocks, size=n)
            block = np.where(moving, (block + shifts) % num_blocks, block)
    return DynamicGraph(n, tuple(snaps))


# ---------------------------------------------------------------------------
# Chronological splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Either fractional boundaries or a fixed test-snapshot count."""

    mode: str  # "ratio" | "last"
    fractions: tuple[float, float, float] | None = None
    test_l: int | None = None
    val_l: int | None = None

    @staticmethod
    def ratio(train: float, val: float, test: float) -> "SplitSpec":
        if min(train, val, test) < 0 or abs(train + val + test - 1.0) > 1e-9:
            raise ConfigError("split fractions must be nonnegative and sum to 1")
        return SplitSpec(mode="ratio", fractions=(train, val, test))

    @staticmethod
    def last(test_l: int, val_l: int | None = None) -> "SplitSpec":
        if test_l < 1:
            raise ConfigError("test snapshot count must be >= 1")
        return SplitSpec(mode="last", test_l=test_l, val_l=test_l if val_l is None else val_l)


def split_chronological(g: DynamicGraph, spec: SplitSpec) -> tuple[range, range, range]:
    """Partition snapshot indices [0,T) into train/val/test ranges.

    Ratio mode floors the train and val boundaries; test absorbs the remainder.
    Last mode assigns the final test_l snapshots to test and the preceding
    val_l to validation.
    """
    T = g.num_snapshots
    if spec.mode == "ratio":
        tr, va, _ = spec.fractions
        n_train = int(T * tr)
        n_val = int(T * va)
    elif spec.mode == "last":
        n_val = spec.val_l
        n_train = T - spec.test_l - n_val
    else:
        raise ConfigError(f"unknown split mode {spec.mode!r}")
    n_test = T - n_train - n_val
    if n_train < 1:
        raise ConfigError(f"split leaves an empty train range for T={T}")
    if n_val < 0 or n_test < 0:
        raise ConfigError(f"split does not fit T={T}")
    return (
        range(0, n_train),
        range(n_train, n_train + n_val),
        range(n_train + n_val, T),
    )
