"""Decoding, max-marginals and evaluation metrics over segment lattices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .lattice import Fst, LatticeError, NoPathError, SegmentPath

NEG_INF = -np.inf


def forward_scores(fst: Fst, weights=None):
    """Best prefix score ``d(v)`` for every vertex, with back-pointers.

    ``back[v]`` is the incoming edge on the best prefix (lowest edge id among
    ties), or -1 where the best prefix starts at ``v`` or ``v`` is
    unreachable.
    """
    w = fst.weights if weights is None else weights
    order = fst.topological_order()
    edges, ptr = fst.incoming()
    tails = fst.tails
    d = np.full(fst.num_vertices, NEG_INF)
    d[fst.starts] = 0.0
    back = np.full(fst.num_vertices, -1, dtype=np.int64)
    for p in range(len(order)):
        lo, hi = ptr[p], ptr[p + 1]
        if lo == hi:
            continue
        es = edges[lo:hi]
        cand = d[tails[es]] + w[es]
        k = int(cand.argmax())
        v = order[p]
        if cand[k] > d[v]:
            d[v] = cand[k]
            back[v] = es[k]
    return d, back


def backward_scores(fst: Fst, weights=None) -> np.ndarray:
    """Best suffix score from every vertex to any final vertex."""
    w = fst.weights if weights is None else weights
    order = fst.topological_order()
    edges, ptr = fst.outgoing()
    heads = fst.heads
    b = np.full(fst.num_vertices, NEG_INF)
    b[fst.finals] = 0.0
    for p in range(len(order) - 1, -1, -1):
        lo, hi = ptr[p], ptr[p + 1]
        if lo == hi:
            continue
        es = edges[lo:hi]
        best = (w[es] + b[heads[es]]).max()
        v = order[p]
        if best > b[v]:
            b[v] = best
    return b


def best_path(fst: Fst, weights=None) -> tuple[SegmentPath, float]:
    """Highest-scoring start-to-final path and its score.

    Raises :class:`NoPathError` when the lattice has no complete path.
    """
    d, back = forward_scores(fst, weights)
    if fst.finals.size == 0:
        raise NoPathError("lattice has no final vertex")
    fd = d[fst.finals]
    k = int(fd.argmax())
    if fd[k] == NEG_INF:
        raise NoPathError("no path from a start vertex to a final vertex")
    v = int(fst.finals[k])
    edges = []
    while back[v] >= 0:
        e = int(back[v])
        edges.append(e)
        v = int(fst.tails[e])
    edges.reverse()
    return fst.path_segments(edges), float(fd[k])


@dataclass
class MaxMarginals:
    edges: np.ndarray     # gamma(e); -inf for edges on no complete path
    vertices: np.ndarray  # gamma(v); -inf likewise
    best: float
    forward: np.ndarray
    backward: np.ndarray
    back: np.ndarray      # forward back-pointers
    finals: np.ndarray
    tails: np.ndarray
    heads: np.ndarray

    def best_edges(self) -> np.ndarray:
        """Edge ids of the Viterbi path (the one :func:`best_path` returns)."""
        fd = self.forward[self.finals]
        v = int(self.finals[int(fd.argmax())])
        out = []
        while self.back[v] >= 0:
            out.append(int(self.back[v]))
            v = int(self.tails[self.back[v]])
        return np.array(out[::-1], dtype=np.int64)

    def best_vertices(self) -> np.ndarray:
        es = self.best_edges()
        if es.size == 0:
            return self.finals[[int(self.forward[self.finals].argmax())]]
        return np.concatenate([self.tails[es[:1]], self.heads[es]])

    def edge_mask(self) -> np.ndarray:
        return np.isfinite(self.edges)

    def vertex_mask(self) -> np.ndarray:
        return np.isfinite(self.vertices)


def max_marginals(fst: Fst, weights=None, strict: bool = False) -> MaxMarginals:
    """Edge and vertex max-marginals from one forward and one backward sweep.

    ``gamma(e) = d(tail e) + w(e) + b(head e)``.  Edges and vertices on no
    complete path get ``-inf``; with ``strict`` they raise instead.
    """
    w = fst.weights if weights is None else weights
    d, back = forward_scores(fst, w)
    b = backward_scores(fst, w)
    ge = d[fst.tails] + w + b[fst.heads]
    gv = d + b
    if strict and (not np.all(np.isfinite(ge)) or not np.all(np.isfinite(gv))):
        n = int((~np.isfinite(ge)).sum())
        raise LatticeError(f"{n} dangling edges; trim the lattice first")
    if not np.isfinite(gv).any():
        raise NoPathError("no path from a start vertex to a final vertex")
    ge = np.where(np.isfinite(ge), ge, NEG_INF)
    gv = np.where(np.isfinite(gv), gv, NEG_INF)
    return MaxMarginals(ge, gv, float(gv.max()), d, b, back, fst.finals, fst.tails,
                        fst.heads)


class EditStats(NamedTuple):
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(hyp: Sequence, ref: Sequence) -> EditStats:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Insertions are extra hypothesis tokens, deletions missing reference
    tokens.  Among equal-cost alignments, substitutions/matches are
    preferred, then deletions, then insertions.
    """
    n, m = len(hyp), len(ref)
    # cost, subs, ins, dels per cell of the current row
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        h = hyp[i - 1]
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            diag = prev[j - 1]
            miss = h != ref[j - 1]
            best = (diag[0] + miss, diag[1] + miss, diag[2], diag[3])
            left = cur[j - 1]
            if left[0] + 1 < best[0]:
                best = (left[0] + 1, left[1], left[2], left[3] + 1)
            up = prev[j]
            if up[0] + 1 < best[0]:
                best = (up[0] + 1, up[1], up[2] + 1, up[3])
            cur.append(best)
        prev = cur
    return EditStats(*prev[m])


def error_rate(hyp: Sequence, ref: Sequence) -> float:
    if len(ref) == 0:
        raise ValueError("error rate undefined for an empty reference")
    return edit_distance(hyp, ref).distance / len(ref)


def oracle_error_rate(fst: Fst, ref: Sequence[int], edge_costs=None) -> tuple[float, SegmentPath]:
    """Lowest error rate of any lattice path against ``ref``, with a witness.

    Dynamic programming over (vertex, reference position) states, which is
    the lattice composed with a Levenshtein transducer.  ``edge_costs``
    (each in ``[0, 1]``) break ties between equally good paths: the witness
    minimizes the summed cost among minimum-edit paths.
    """
    R = len(ref)
    if R == 0:
        raise ValueError("oracle error rate undefined for an empty reference")
    if fst.num_edges == 0 or not fst.has_path():
        raise NoPathError("lattice has no complete path")
    ref_arr = np.asarray(ref, dtype=np.int64)
    tie = 0.0
    if edge_costs is not None:
        tie = np.asarray(edge_costs, dtype=np.float64) / (fst.num_frames + 1.0)
    V = fst.num_vertices
    order = fst.topological_order()
    edges, ptr = fst.incoming()
    cost = np.full((V, R + 1), np.inf)
    # back-pointers: edge id (-1: deletion within a vertex, -2: path start)
    bp_edge = np.full((V, R + 1), -1, dtype=np.int64)
    bp_pos = np.full((V, R + 1), -1, dtype=np.int64)
    cols = np.arange(R + 1)
    for p in range(V):
        v = order[p]
        row = np.full(R + 1, np.inf)
        row_e = np.full(R + 1, -1, dtype=np.int64)
        row_j = np.full(R + 1, -1, dtype=np.int64)
        if v in fst.starts:
            row[0] = 0.0
            row_e[0] = -2
        lo, hi = ptr[p], ptr[p + 1]
        if hi > lo:
            es = edges[lo:hi]
            extra = tie[es] if edge_costs is not None else np.zeros(len(es))
            C = cost[fst.tails[es]]
            ins = C + 1.0 + extra[:, None]
            sub = np.full_like(C, np.inf)
            sub[:, 1:] = C[:, :-1] + (fst.labels[es][:, None] != ref_arr[None, :]) + extra[:, None]
            use_sub = sub <= ins
            cand = np.where(use_sub, sub, ins)
            k = cand.argmin(axis=0)
            val = cand[k, cols]
            better = val < row
            row = np.where(better, val, row)
            row_e = np.where(better, es[k], row_e)
            row_j = np.where(better, np.where(use_sub[k, cols], cols - 1, cols), row_j)
        # deletions: consume reference tokens without an edge
        for j in range(1, R + 1):
            if row[j - 1] + 1.0 < row[j]:
                row[j] = row[j - 1] + 1.0
                row_e[j] = -1
                row_j[j] = j - 1
        cost[v], bp_edge[v], bp_pos[v] = row, row_e, row_j
    fc = cost[fst.finals, R]
    k = int(fc.argmin())
    if not np.isfinite(fc[k]):
        raise NoPathError("no path from a start vertex to a final vertex")
    v, j = int(fst.finals[k]), R
    path = []
    while True:
        e = int(bp_edge[v, j])
        if e == -2:
            break
        nj = int(bp_pos[v, j])
        if e >= 0:
            path.append(e)
            v = int(fst.tails[e])
        j = nj
    path.reverse()
    witness = fst.path_segments(path)
    errors = edit_distance(witness.labels, list(ref)).distance
    return errors / R, witness


def density(fst: Fst, ref: Sequence) -> float:
    """Edges per reference label."""
    if len(ref) == 0:
        raise ValueError("density undefined for an empty reference")
    return fst.num_edges / len(ref)


def real_time_factor(processing_seconds, audio_seconds) -> float:
    """Processing time over audio duration; sequences are aggregated as totals."""
    proc = float(np.sum(processing_seconds))
    audio = float(np.sum(audio_seconds))
    if audio <= 0:
        raise ValueError("audio duration must be positive")
    return proc / audio


@dataclass
class CorpusErrors:
    """Running edit statistics across utterances."""

    errors: int = 0
    ref_len: int = 0
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0

    def add(self, hyp, ref) -> EditStats:
        st = edit_distance(hyp, ref)
        self.errors += st.distance
        self.ref_len += len(ref)
        self.substitutions += st.substitutions
        self.insertions += st.insertions
        self.deletions += st.deletions
        return st

    @property
    def rate(self) -> float:
        return self.errors / self.ref_len if self.ref_len else float("nan")
