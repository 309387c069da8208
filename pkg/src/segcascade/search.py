"""Scoring a lattice under a segmental model, and decoding with it.

Most templates score an edge on its own.  The bigram LM feature also needs
the label of the preceding segment, so for such models the lattice is
expanded into (vertex, previous label) states before searching; each
expanded edge remembers the lattice edge it copies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import Aux, EdgeFeatures, Model, featurize_segments
from .inference import best_path
from .lattice import Fst, SegmentPath


@dataclass
class ScoredLattice:
    lattice: Fst          # the lattice as given
    search: Fst           # what decoding runs on; weights are model scores
    origin: np.ndarray    # search edge -> lattice edge
    prev_labels: np.ndarray | None
    features: EdgeFeatures

    @property
    def weights(self) -> np.ndarray:
        return self.search.weights

    def rescored(self, theta) -> "ScoredLattice":
        """Same features, search weights recomputed for new weights."""
        return ScoredLattice(self.lattice, self.search.with_weights(self.features.scores(theta)),
                             self.origin, self.prev_labels, self.features)

    def lattice_scores(self) -> np.ndarray:
        """Per lattice edge: best model score over its expanded copies."""
        if self.search is self.lattice or len(self.origin) == self.lattice.num_edges \
                and np.array_equal(self.origin, np.arange(self.lattice.num_edges)):
            return self.search.weights.copy()
        out = np.full(self.lattice.num_edges, -np.inf)
        np.maximum.at(out, self.origin, self.search.weights)
        return out

    def project_mask(self, search_mask: np.ndarray) -> np.ndarray:
        """Lattice edges with at least one surviving expanded copy."""
        out = np.zeros(self.lattice.num_edges, dtype=bool)
        out[self.origin[search_mask]] = True
        return out

    def to_lattice_path(self, path: SegmentPath) -> SegmentPath:
        return self.lattice.path_segments([int(self.origin[e]) for e in path.edges])


def expand_bigram(fst: Fst):
    """Split each vertex by the label of the edge entering it.

    Returns ``(expanded, origin, prev_labels)`` where ``prev_labels[e]`` is
    the label preceding expanded edge ``e`` (-1 at a start vertex).
    """
    order = fst.topological_order()
    contexts: list[set] = [set() for _ in range(fst.num_vertices)]
    for v in fst.starts.tolist():
        contexts[v].add(-1)
    out_edges, out_ptr = fst.outgoing()
    for p, v in enumerate(order.tolist()):
        if not contexts[v]:
            continue
        for e in out_edges[out_ptr[p]:out_ptr[p + 1]].tolist():
            contexts[int(fst.heads[e])].add(int(fst.labels[e]))
    state = {}
    times = []
    for v in order.tolist():
        for c in sorted(contexts[v]):
            state[v, c] = len(times)
            times.append(int(fst.times[v]))
    tails, heads, origin, prev = [], [], [], []
    for e in range(fst.num_edges):
        t, h, l = int(fst.tails[e]), int(fst.heads[e]), int(fst.labels[e])
        for c in sorted(contexts[t]):
            tails.append(state[t, c])
            heads.append(state[h, l])
            origin.append(e)
            prev.append(c)
    origin = np.array(origin, dtype=np.int64)
    starts = [state[v, -1] for v in fst.starts.tolist()]
    finals = [state[v, c] for v in fst.finals.tolist() for c in sorted(contexts[v])]
    ex = Fst(times, tails, heads, fst.labels[origin] if len(origin) else [],
             fst.weights[origin] if len(origin) else [], starts, finals,
             num_frames=fst.num_frames)
    return ex, origin, np.array(prev, dtype=np.int64)


def score_lattice(model: Model, post, fst: Fst) -> ScoredLattice:
    """Featurize every lattice edge and set search weights to model scores.

    The incoming edge weights are the previous pass's scores and feed the
    lattice_score template.
    """
    ts = model.templates
    if ts.uses("bigram_lm"):
        search, origin, prev = expand_bigram(fst)
    else:
        search, origin, prev = fst, np.arange(fst.num_edges), None
    s, t, l = search.segment_arrays()
    final_vertex = np.zeros(search.num_vertices, dtype=bool)
    final_vertex[search.finals] = True
    aux = Aux(lattice_scores=search.weights if ts.uses("lattice_score") else None,
              prev_labels=prev, ends_utterance=final_vertex[search.heads], lm=model.lm)
    feats = featurize_segments(ts, post, s, t, l, aux)
    weights = feats.scores(model.theta)
    return ScoredLattice(fst, search.with_weights(weights), origin, prev, feats)


def path_features(model: Model, post, fst: Fst, path: SegmentPath) -> np.ndarray:
    """phi(x, path) for a path whose ``edges`` index into ``fst``."""
    edges = np.asarray(path.edges, dtype=np.int64)
    s, t, l = fst.times[fst.tails[edges]], fst.times[fst.heads[edges]], fst.labels[edges]
    prev = np.concatenate([[-1], l[:-1]]) if len(l) else np.zeros(0, dtype=np.int64)
    final_vertex = np.zeros(fst.num_vertices, dtype=bool)
    final_vertex[fst.finals] = True
    aux = Aux(lattice_scores=fst.weights[edges] if model.templates.uses("lattice_score") else None,
              prev_labels=prev, ends_utterance=final_vertex[fst.heads[edges]], lm=model.lm)
    return featurize_segments(model.templates, post, s, t, l, aux).sum()


def decode(model: Model, post, fst: Fst) -> tuple[SegmentPath, float]:
    """Best path under the model; edge ids refer to ``fst``."""
    sl = score_lattice(model, post, fst)
    path, total = best_path(sl.search)
    return sl.to_lattice_path(path), total
