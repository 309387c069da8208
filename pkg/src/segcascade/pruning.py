"""Beam pruning and max-marginal edge/vertex pruning of segment lattices.

Each ``*_mask`` function returns a boolean keep-mask over the input edges;
the corresponding pruning function applies it and trims the result.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .inference import max_marginals
from .lattice import Fst

log = logging.getLogger(__name__)

METHODS = ("beam", "edge", "vertex")


@dataclass(frozen=True)
class PruneParams:
    method: str
    alpha: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown pruning method {self.method!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def interpolate(alpha: float, high: float, low: float) -> float:
    """``alpha * high + (1 - alpha) * low``, kept inside ``[low, high]``.

    Written as ``low + alpha * (high - low)`` so it is monotone in alpha under
    rounding, and clamped so that equal scores always meet the threshold.
    """
    low = min(low, high)
    return min(low + alpha * (high - low), high)


def beam_prune_mask(fst: Fst, alpha: float) -> np.ndarray:
    """Edges surviving local beam pruning in a topological sweep.

    At each explored vertex ``v`` the threshold interpolates between the best
    and worst one-edge extensions ``d(v) + w(e)``; only extensions strictly
    above it survive, and their heads become explorable.  The mask is
    restricted to survivors that lie on a complete surviving path.
    """
    w = fst.weights
    V = fst.num_vertices
    d = np.full(V, -np.inf)
    d[fst.starts] = 0.0
    explore = np.zeros(V, dtype=bool)
    explore[fst.starts] = True
    keep = np.zeros(fst.num_edges, dtype=bool)
    edges, ptr = fst.outgoing()
    heads = fst.heads
    order = fst.topological_order()
    for p in range(V):
        v = order[p]
        if not explore[v]:
            continue
        lo, hi = ptr[p], ptr[p + 1]
        if lo == hi:
            continue
        es = edges[lo:hi]
        ext = d[v] + w[es]
        t = interpolate(alpha, ext.max(), ext.min())
        surv = es[ext > t]
        keep[surv] = True
        for e, s in zip(surv.tolist(), ext[ext > t].tolist()):
            h = heads[e]
            if s > d[h]:
                d[h] = s
            explore[h] = True
    return _connected(fst, keep)


def beam_prune(fst: Fst, alpha: float) -> Fst:
    out = fst.subgraph(beam_prune_mask(fst, alpha)).trim()
    if out.num_edges == 0:
        log.warning("beam pruning at alpha=%g removed every path", alpha)
    return out


def edge_threshold(gamma: np.ndarray, alpha: float, on_best=None) -> float:
    """Interpolate between the mean and the maximum of the finite ``gamma``.

    ``on_best`` indexes the Viterbi path.  Every entry there equals the
    maximum in exact arithmetic, but each is rounded differently, so the
    smallest of them stands in for the maximum and the best path always meets
    the threshold.
    """
    g = gamma[np.isfinite(gamma)]
    high = g.max() if on_best is None or len(on_best) == 0 else gamma[on_best].min()
    return interpolate(alpha, high, g.mean())


def edge_prune_mask(fst: Fst, alpha: float, mm=None) -> np.ndarray:
    """Keep edges whose max-marginal reaches the interpolated threshold.

    The threshold sits between the mean and the maximum of the edge
    max-marginals of the trimmed lattice; edges on no complete path are
    dropped.
    """
    if fst.num_edges == 0:
        return np.zeros(0, dtype=bool)
    mm = max_marginals(fst) if mm is None else mm
    t = edge_threshold(mm.edges, alpha, mm.best_edges())
    return np.isfinite(mm.edges) & (mm.edges >= t)


def edge_prune(fst: Fst, alpha: float) -> Fst:
    return fst.subgraph(edge_prune_mask(fst, alpha)).trim()


def vertex_prune_masks(fst: Fst, alpha: float, mm=None):
    """(vertex mask, edge mask) after max-marginal vertex pruning."""
    if fst.num_edges == 0:
        return np.zeros(fst.num_vertices, dtype=bool), np.zeros(0, dtype=bool)
    mm = max_marginals(fst) if mm is None else mm
    t = edge_threshold(mm.vertices, alpha, mm.best_vertices())
    vkeep = np.isfinite(mm.vertices) & (mm.vertices >= t)
    ekeep = vkeep[fst.tails] & vkeep[fst.heads] & np.isfinite(mm.edges)
    return vkeep, _connected(fst, ekeep)


def vertex_prune_mask(fst: Fst, alpha: float, mm=None) -> np.ndarray:
    return vertex_prune_masks(fst, alpha, mm)[1]


def vertex_prune(fst: Fst, alpha: float) -> Fst:
    vkeep, ekeep = vertex_prune_masks(fst, alpha)
    return fst.subgraph(ekeep, vkeep).trim()


def prune_mask(fst: Fst, params: PruneParams) -> np.ndarray:
    if params.method == "beam":
        return beam_prune_mask(fst, params.alpha)
    if params.method == "edge":
        return edge_prune_mask(fst, params.alpha)
    return vertex_prune_mask(fst, params.alpha)


def prune(fst: Fst, params: PruneParams) -> Fst:
    return fst.subgraph(prune_mask(fst, params)).trim()


def _connected(fst: Fst, keep: np.ndarray) -> np.ndarray:
    """Restrict an edge mask to edges on a complete path of the kept subgraph."""
    if not keep.any():
        return keep
    sub = fst.subgraph(keep)
    _, emask = sub.connected_mask()
    out = np.zeros_like(keep)
    out[np.flatnonzero(keep)[emask]] = True
    return out
