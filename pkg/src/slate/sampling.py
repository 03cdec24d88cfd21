"""Positive/negative pair sampling for training and evaluation.

For every positive edge (u, v_pos) at the prediction snapshot, one negative
partner v_neg is drawn for the same u. Strategies differ in the candidate
pool: anything that is not an edge now (random), former edges that are gone
now (historical), or pairs never seen during training (inductive). A sampled
negative is never a positive edge at the prediction snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dtdg import DynamicGraph, Edge
from .errors import ConfigError

STRATEGIES = ("random", "historical", "inductive")


@dataclass
class NegativeSampler:
    """Strategy plus the edge sets it needs; fallback_count tallies pairs whose
    strategy pool was empty and fell back to a random negative."""

    strategy: str
    train_edges: frozenset[Edge] = frozenset()
    fallback_count: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown negative sampling strategy {self.strategy!r}")

    @staticmethod
    def for_graph(g: DynamicGraph, strategy: str, train_range: range | None = None) -> "NegativeSampler":
        train_edges = g.edge_union(train_range.stop) if train_range is not None else frozenset()
        if strategy == "inductive" and train_range is None:
            raise ConfigError("inductive sampling needs the training split")
        return NegativeSampler(strategy=strategy, train_edges=train_edges)

    def pool_for(self, u: int, positives: frozenset[Edge], history: frozenset[Edge],
                 num_nodes: int) -> np.ndarray:
        """Candidate v for (u, v) under this strategy; excludes u itself and
        every positive at the prediction snapshot."""
        def is_pos(v):
            return (min(u, v), max(u, v)) in positives

        if self.strategy == "random":
            cands = [v for v in range(num_nodes) if v != u and not is_pos(v)]
        elif self.strategy == "historical":
            cands = sorted({x if y == u else y for x, y in history if u in (x, y)})
            cands = [v for v in cands if v != u and not is_pos(v)]
        else:  # inductive
            cands = [
                v for v in range(num_nodes)
                if v != u and not is_pos(v) and (min(u, v), max(u, v)) not in self.train_edges
            ]
        return np.asarray(cands, dtype=np.int64)


def sample_pairs(
    sampler: NegativeSampler,
    g: DynamicGraph,
    t_pred: int,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """One (u, v_pos, v_neg) triple per positive edge at snapshot t_pred.

    The history pool is every edge strictly before t_pred. Empty strategy pools
    fall back to a random negative (counted on the sampler); a u with no valid
    negative at all is skipped. Returns [] when the snapshot has no edges or no
    triple can be formed, signalling the caller to skip the snapshot.
    """
    positives = g.snapshots[t_pred].edges
    if not positives:
        return []
    history = g.edge_union(t_pred)
    random_fallback = NegativeSampler(strategy="random")
    triples = []
    for u, v_pos in sorted(positives):
        pool = sampler.pool_for(u, positives, history, g.num_nodes)
        if len(pool) == 0 and sampler.strategy != "random":
            sampler.fallback_count += 1
            pool = random_fallback.pool_for(u, positives, history, g.num_nodes)
        if len(pool) == 0:
            continue  # u saturates the snapshot; no valid negative exists
        v_neg = int(pool[rng.integers(len(pool))])
        triples.append((u, v_pos, v_neg))
    return triples
