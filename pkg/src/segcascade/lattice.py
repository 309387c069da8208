"""Segment lattices encoded as acyclic weighted transducers.

Vertices carry a time stamp (a frame boundary in ``0..T``).  An edge from a
vertex at time ``u`` to one at time ``v`` is the segment covering frames
``u+1..v`` (1-based), so consecutive edges tile the utterance without
overlap.  Input and output symbols are both the segment label.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class LatticeError(ValueError):
    """Malformed lattice or lattice file."""


class CycleError(LatticeError):
    pass


class NoPathError(LatticeError):
    """The lattice has no path from a start vertex to a final vertex."""


class Alphabet:
    """Interned label names; labels are small integers everywhere else."""

    def __init__(self, names: Iterable[str]):
        self.names = tuple(str(n) for n in names)
        self._index = {n: i for i, n in enumerate(self.names)}
        if len(self._index) != len(self.names):
            raise ValueError("duplicate label names")
        for n in self.names:
            if not n or any(c.isspace() for c in n):
                raise ValueError(f"invalid label name {n!r}")

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i: int) -> str:
        return self.names[i]

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"Alphabet({list(self.names)!r})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown label {name!r}") from None

    def encode(self, names: Iterable[str]) -> list[int]:
        return [self.index(n) for n in names]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.names[i] for i in ids]


class Segment(NamedTuple):
    start: int
    end: int
    label: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentPath:
    """Connected segments; ``edges`` holds lattice edge ids when known."""

    segments: tuple[Segment, ...]
    edges: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(Segment(*s) for s in self.segments))
        for s in self.segments:
            if s.end <= s.start:
                raise ValueError(f"segment {s} has non-positive duration")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.end != b.start:
                raise ValueError(f"segments {a} and {b} are not connected")

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.segments]

    @property
    def start(self) -> int:
        return self.segments[0].start if self.segments else 0

    @property
    def end(self) -> int:
        return self.segments[-1].end if self.segments else 0

    def covers(self, num_frames: int) -> bool:
        return bool(self.segments) and self.start == 0 and self.end == num_frames


class Fst:
    """Immutable acyclic segment lattice.

    Edge attributes live in parallel numpy arrays indexed by edge id; vertex
    time stamps in ``times``.  Structural caches (topological order,
    adjacency) are shared between an Fst and copies made by
    :meth:`with_weights`.
    """

    def __init__(self, times, tails, heads, labels, weights, starts, finals,
                 num_frames: int | None = None, check: bool = True):
        self.times = np.asarray(times, dtype=np.int64).reshape(-1)
        self.tails = np.asarray(tails, dtype=np.int64).reshape(-1)
        self.heads = np.asarray(heads, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        self.starts = np.unique(np.asarray(starts, dtype=np.int64).reshape(-1))
        self.finals = np.unique(np.asarray(finals, dtype=np.int64).reshape(-1))
        if num_frames is None:
            num_frames = int(self.times.max()) if self.times.size else 0
        self.num_frames = int(num_frames)
        self._monotone = False
        self._cache: dict = {}
        for a in (self.times, self.tails, self.heads, self.labels, self.weights):
            a.setflags(write=False)
        if check:
            self.validate()

    def validate(self):
        V, E = self.num_vertices, self.num_edges
        if not (len(self.heads) == len(self.labels) == len(self.weights) == E):
            raise LatticeError("edge arrays differ in length")
        for name, arr in (("tail", self.tails), ("head", self.heads)):
            if E and (arr.min() < 0 or arr.max() >= V):
                raise LatticeError(f"edge {name} refers to a missing vertex")
        for name, arr in (("start", self.starts), ("final", self.finals)):
            if arr.size and (arr.min() < 0 or arr.max() >= V):
                raise LatticeError(f"{name} marker refers to a missing vertex")
        if E and self.labels.min() < 0:
            raise LatticeError("negative edge label")
        if not np.all(np.isfinite(self.weights)):
            raise LatticeError("non-finite edge weight")
        if V and (self.times.min() < 0 or self.times.max() > self.num_frames):
            raise LatticeError("vertex time outside 0..num_frames")
        if E and np.any(self.times[self.heads] <= self.times[self.tails]):
            bad = int(np.flatnonzero(self.times[self.heads] <= self.times[self.tails])[0])
            raise LatticeError(f"edge {bad} does not advance in time")
        self._monotone = True

    @property
    def num_vertices(self) -> int:
        return len(self.times)

    @property
    def num_edges(self) -> int:
        return len(self.tails)

    def __repr__(self):
        return (f"Fst(T={self.num_frames}, |V|={self.num_vertices}, "
                f"|E|={self.num_edges})")

    def edge_segment(self, e: int) -> Segment:
        return Segment(int(self.times[self.tails[e]]), int(self.times[self.heads[e]]),
                       int(self.labels[e]))

    def segment_arrays(self):
        """(starts, ends, labels) of every edge as frame boundaries."""
        return self.times[self.tails], self.times[self.heads], self.labels

    def with_weights(self, weights) -> "Fst":
        """Same structure, new edge weights."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.num_edges,):
            raise ValueError("weight vector does not match edge count")
        if not np.all(np.isfinite(weights)):
            raise LatticeError("non-finite edge weight")
        new = Fst.__new__(Fst)
        new.__dict__.update(self.__dict__)
        new.weights = weights.copy()
        new.weights.setflags(write=False)
        return new

    # structure caches

    def topological_order(self) -> np.ndarray:
        return topological_order(self)

    def rank(self) -> np.ndarray:
        """Position of each vertex in the topological order."""
        if "rank" not in self._cache:
            order = self.topological_order()
            rank = np.empty(self.num_vertices, dtype=np.int64)
            rank[order] = np.arange(self.num_vertices)
            self._cache["rank"] = rank
        return self._cache["rank"]

    def incoming(self):
        """CSR over topological positions: ``edges[ptr[p]:ptr[p+1]]`` enter order[p].

        Within a vertex, edges are sorted by ascending edge id.
        """
        if "in" not in self._cache:
            self._cache["in"] = self._csr(self.heads)
        return self._cache["in"]

    def outgoing(self):
        if "out" not in self._cache:
            self._cache["out"] = self._csr(self.tails)
        return self._cache["out"]

    def _csr(self, ends):
        rank = self.rank()
        edges = np.lexsort((np.arange(self.num_edges), rank[ends]))
        ptr = np.searchsorted(rank[ends][edges], np.arange(self.num_vertices + 1))
        return edges, ptr

    def adjacency(self, v: int) -> np.ndarray:
        """Outgoing edge ids of vertex ``v`` in ascending order."""
        edges, ptr = self.outgoing()
        p = self.rank()[v]
        return edges[ptr[p]:ptr[p + 1]]

    # subgraphs

    def subgraph(self, keep_edges, keep_vertices=None) -> "Fst":
        """Restrict to the given edges (and vertices), renumbering compactly.

        Relative order of surviving vertices and edges is preserved.  Edges
        touching a dropped vertex are dropped too.
        """
        keep_edges = np.asarray(keep_edges, dtype=bool).copy()
        if keep_vertices is None:
            keep_vertices = np.ones(self.num_vertices, dtype=bool)
        keep_vertices = np.asarray(keep_vertices, dtype=bool)
        keep_edges &= keep_vertices[self.tails] & keep_vertices[self.heads]
        vmap = np.cumsum(keep_vertices) - 1
        sub = Fst(self.times[keep_vertices], vmap[self.tails[keep_edges]],
                  vmap[self.heads[keep_edges]], self.labels[keep_edges],
                  self.weights[keep_edges],
                  vmap[self.starts[keep_vertices[self.starts]]],
                  vmap[self.finals[keep_vertices[self.finals]]],
                  num_frames=self.num_frames, check=False)
        sub._monotone = self._monotone
        return sub

    def connected_mask(self):
        """Masks of (vertices, edges) lying on at least one start-to-final path."""
        V = self.num_vertices
        order = self.topological_order()
        fwd = np.zeros(V, dtype=bool)
        fwd[self.starts] = True
        in_edges, in_ptr = self.incoming()
        for p, v in enumerate(order):
            es = in_edges[in_ptr[p]:in_ptr[p + 1]]
            if es.size and fwd[self.tails[es]].any():
                fwd[v] = True
        bwd = np.zeros(V, dtype=bool)
        bwd[self.finals] = True
        out_edges, out_ptr = self.outgoing()
        for p in range(V - 1, -1, -1):
            es = out_edges[out_ptr[p]:out_ptr[p + 1]]
            if es.size and bwd[self.heads[es]].any():
                bwd[order[p]] = True
        vmask = fwd & bwd
        emask = vmask[self.tails] & vmask[self.heads]
        return vmask, emask

    def trim(self) -> "Fst":
        """Drop vertices and edges not on any start-to-final path."""
        vmask, emask = self.connected_mask()
        if vmask.all() and emask.all():
            return self
        return self.subgraph(emask, vmask)

    def is_trimmed(self) -> bool:
        vmask, emask = self.connected_mask()
        return bool(vmask.all() and emask.all())

    def has_path(self) -> bool:
        vmask, _ = self.connected_mask()
        return bool(vmask.any())

    def edge_keys(self) -> list[tuple[int, int, int, float]]:
        """Hashable (start time, end time, label, weight) per edge."""
        s, t, l = self.segment_arrays()
        return list(zip(s.tolist(), t.tolist(), l.tolist(), self.weights.tolist()))

    def path_segments(self, edges: Sequence[int]) -> SegmentPath:
        return SegmentPath(tuple(self.edge_segment(int(e)) for e in edges),
                           tuple(int(e) for e in edges))

    def find_path(self, path: SegmentPath) -> list[int] | None:
        """Edge ids realizing ``path`` from a start to a final vertex, if any.

        Among parallel matches the lowest edge id is taken.
        """
        if not path.segments:
            return None
        finals = set(self.finals.tolist())
        s, t, l = self.segment_arrays()
        # frontier: vertex -> edge ids so far
        frontier = {int(v): [] for v in self.starts if self.times[v] == path.start}
        for seg in path.segments:
            nxt = {}
            for v, so_far in frontier.items():
                for e in self.adjacency(v):
                    e = int(e)
                    if t[e] == seg.end and l[e] == seg.label:
                        h = int(self.heads[e])
                        if h not in nxt:
                            nxt[h] = so_far + [e]
            frontier = nxt
            if not frontier:
                return None
        for v in sorted(frontier):
            if v in finals:
                return frontier[v]
        return None


def topological_order(fst: Fst) -> np.ndarray:
    """Vertex ids such that every edge's tail precedes its head.

    Ties are broken by ascending time stamp, then ascending vertex id.
    Raises :class:`CycleError` if the graph has a cycle.
    """
    if "order" in fst._cache:
        return fst._cache["order"]
    V = fst.num_vertices
    if fst._monotone:
        order = np.lexsort((np.arange(V), fst.times))
    else:
        indeg = np.bincount(fst.heads, minlength=V)
        succ: list[list[int]] = [[] for _ in range(V)]
        for t, h in zip(fst.tails.tolist(), fst.heads.tolist()):
            succ[t].append(h)
        heap = [(int(fst.times[v]), v) for v in range(V) if indeg[v] == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            _, v = heapq.heappop(heap)
            out.append(v)
            for h in succ[v]:
                indeg[h] -= 1
                if indeg[h] == 0:
                    heapq.heappush(heap, (int(fst.times[h]), h))
        if len(out) != V:
            raise CycleError("lattice contains a cycle")
        order = np.array(out, dtype=np.int64)
    order.setflags(write=False)
    fst._cache["order"] = order
    return order


@lru_cache(maxsize=64)
def _dense_structure(T: int, L: int, D: int):
    ends, durs = [], []
    for t in range(1, T + 1):
        d = np.arange(1, min(t, D) + 1)
        ends.append(np.full(len(d), t))
        durs.append(d)
    end = np.repeat(np.concatenate(ends), L)
    dur = np.repeat(np.concatenate(durs), L)
    lab = np.tile(np.arange(L), len(end) // L if L else 0)
    return Fst(np.arange(T + 1), end - dur, end, lab, np.zeros(len(end)), [0], [T],
               num_frames=T)


def build_hypothesis_space(num_frames: int, labels, max_duration: int) -> Fst:
    """Dense segment space: one edge per ``(s, t, label)`` with ``t - s <= D``.

    ``labels`` is an :class:`Alphabet`, a sequence of labels, or a label
    count.  Edges are ordered by end time, then duration, then label.
    """
    L = labels if isinstance(labels, int) else len(labels)
    if num_frames < 1:
        raise ValueError("num_frames must be positive")
    if L < 1:
        raise ValueError("label set is empty")
    if max_duration < 1:
        raise ValueError("max_duration must be positive")
    return _dense_structure(int(num_frames), int(L), int(max_duration))


def dense_edge_count(num_frames: int, num_labels: int, max_duration: int) -> int:
    return num_labels * sum(min(t, max_duration) for t in range(1, num_frames + 1))


# lattice text format


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_lattice(fst: Fst, alphabet: Alphabet | None = None) -> str:
    lines = [f"#frames {fst.num_frames}"]
    lines += [f"v {v} {t}" for v, t in enumerate(fst.times.tolist())]
    for e in range(fst.num_edges):
        lab = int(fst.labels[e])
        name = alphabet[lab] if alphabet is not None else str(lab)
        lines.append(f"e {e} {fst.tails[e]} {fst.heads[e]} {name} {_fmt(fst.weights[e])}")
    lines += [f"i {v}" for v in fst.starts.tolist()]
    lines += [f"f {v}" for v in fst.finals.tolist()]
    return "\n".join(lines) + "\n"


def write_lattice(fst: Fst, destination, alphabet: Alphabet | None = None):
    Path(destination).write_text(format_lattice(fst, alphabet), encoding="utf-8")


def parse_lattice(text: str, alphabet: Alphabet | None = None, source: str = "<string>") -> Fst:
    def fail(lineno, msg):
        raise LatticeError(f"{source}:{lineno}: {msg}")

    num_frames = None
    vertices: dict[int, int] = {}
    edges: dict[int, tuple] = {}
    starts, finals = [], []
    refs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        f = line.split()
        try:
            if f[0] == "#frames":
                if len(f) != 2 or num_frames is not None:
                    fail(lineno, "bad #frames header")
                num_frames = int(f[1])
            elif f[0] == "v":
                if len(f) != 3:
                    fail(lineno, "vertex line needs: v <id> <time>")
                vid, t = int(f[1]), int(f[2])
                if vid in vertices:
                    fail(lineno, f"duplicate vertex {vid}")
                vertices[vid] = t
            elif f[0] == "e":
                if len(f) != 6:
                    fail(lineno, "edge line needs: e <id> <tail> <head> <label> <weight>")
                eid, tail, head = int(f[1]), int(f[2]), int(f[3])
                if alphabet is not None:
                    if f[4] not in alphabet:
                        fail(lineno, f"unknown label {f[4]!r}")
                    lab = alphabet.index(f[4])
                else:
                    lab = int(f[4])
                w = float(f[5])
                if not math.isfinite(w):
                    fail(lineno, f"non-finite weight {f[5]}")
                if eid in edges:
                    fail(lineno, f"duplicate edge {eid}")
                edges[eid] = (tail, head, lab, w)
                refs.append((lineno, tail))
                refs.append((lineno, head))
            elif f[0] in ("i", "f"):
                if len(f) != 2:
                    fail(lineno, "marker line needs one vertex id")
                (starts if f[0] == "i" else finals).append(int(f[1]))
                refs.append((lineno, int(f[1])))
            else:
                fail(lineno, f"unknown record type {f[0]!r}")
        except ValueError as exc:
            if isinstance(exc, LatticeError):
                raise
            fail(lineno, f"malformed line: {exc}")
    if num_frames is None:
        raise LatticeError(f"{source}: missing #frames header")
    for lineno, v in refs:
        if v not in vertices:
            fail(lineno, f"reference to undeclared vertex {v}")
    if sorted(vertices) != list(range(len(vertices))):
        raise LatticeError(f"{source}: vertex ids must be 0..n-1")
    if sorted(edges) != list(range(len(edges))):
        raise LatticeError(f"{source}: edge ids must be 0..m-1")
    ed = [edges[i] for i in range(len(edges))]
    cols = list(zip(*ed)) if ed else [(), (), (), ()]
    try:
        return Fst([vertices[i] for i in range(len(vertices))], cols[0], cols[1], cols[2],
                   cols[3], starts, finals, num_frames=num_frames)
    except LatticeError as exc:
        raise LatticeError(f"{source}: {exc}") from None


def read_lattice(source, alphabet: Alphabet | None = None) -> Fst:
    path = Path(source)
    return parse_lattice(path.read_text(encoding="utf-8"), alphabet, source=str(path))


def read_lattice_interned(source) -> tuple[Fst, Alphabet | None]:
    """Read a lattice whose alphabet is unknown.

    Symbolic labels are interned in order of first appearance; the returned
    alphabet writes them back unchanged.  Purely numeric labels give None.
    """
    path = Path(source)
    text = path.read_text(encoding="utf-8")
    names: dict[str, None] = {}
    for line in text.splitlines():
        f = line.split()
        if len(f) == 6 and f[0] == "e":
            names.setdefault(f[4])
    if all(n.lstrip("-").isdigit() for n in names):
        return parse_lattice(text, None, str(path)), None
    alphabet = Alphabet(names)
    return parse_lattice(text, alphabet, str(path)), alphabet
