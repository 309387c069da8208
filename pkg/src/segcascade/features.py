"""Segment feature templates, linear segment scoring, and the bigram LM feature.

Features are computed for whole batches of segments at once.  Each template
produces a block of raw values per segment; a lexicalized template places
its block at the slot of the segment's label, so the weight vector holds one
copy of the block per label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lattice import Alphabet, Segment, SegmentPath

TEMPLATES = (
    "label_posterior_sum",
    "posterior_average",
    "posterior_samples",
    "boundary_posteriors",
    "length_indicator",
    "bias",
    "lattice_score",
    "bigram_lm",
)

DEFAULT_SAMPLE_POSITIONS = (0.0, 0.5, 1.0)


class FeatureError(ValueError):
    pass


class _Counter:
    """Instrumentation: number of segments featurized since the last reset."""

    def __init__(self):
        self.segments = 0

    def reset(self):
        self.segments = 0


featurize_counter = _Counter()


def _values(post) -> np.ndarray:
    return post.values if hasattr(post, "values") else np.asarray(post, dtype=np.float64)


def _cumulative(post) -> np.ndarray:
    if hasattr(post, "cumulative"):
        return post.cumulative()
    v = _values(post)
    c = np.zeros((v.shape[0] + 1, v.shape[1]))
    np.cumsum(v, axis=0, out=c[1:])
    return c


def phi_label_posterior(post, seg: Segment) -> float:
    """Sum of the label's log posterior over frames ``start+1 .. end``."""
    v = _values(post)
    if not 0 <= seg.label < v.shape[1]:
        raise FeatureError(f"label {seg.label} outside the posterior alphabet")
    if not 0 <= seg.start < seg.end <= v.shape[0]:
        raise FeatureError(f"segment {tuple(seg)} outside frames 1..{v.shape[0]}")
    return float(v[seg.start:seg.end, seg.label].sum())


@dataclass(frozen=True)
class FeatureTemplateSet:
    """Ordered templates with per-template lexicalization flags."""

    templates: tuple[str, ...]
    lexicalized: tuple[bool, ...]
    num_labels: int
    max_duration: int
    sample_positions: tuple[float, ...] = DEFAULT_SAMPLE_POSITIONS

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        object.__setattr__(self, "lexicalized", tuple(bool(x) for x in self.lexicalized))
        object.__setattr__(self, "sample_positions", tuple(float(p) for p in self.sample_positions))
        if not self.templates:
            raise FeatureError("template list is empty")
        if len(set(self.templates)) != len(self.templates):
            raise FeatureError("duplicate templates")
        for t in self.templates:
            if t not in TEMPLATES:
                raise FeatureError(f"unknown template {t!r}")
        if len(self.lexicalized) != len(self.templates):
            raise FeatureError("one lexicalization flag per template")
        if self.num_labels < 1 or self.max_duration < 1:
            raise FeatureError("need at least one label and max_duration >= 1")
        if not self.sample_positions or not all(0 <= p <= 1 for p in self.sample_positions):
            raise FeatureError("sample positions must lie in [0, 1]")

    @classmethod
    def build(cls, spec, num_labels: int, max_duration: int, lexicalize=False, **kw):
        """From names (optionally ``name:lex`` / ``name:0``) or (name, flag) pairs."""
        names, flags = [], []
        for item in spec:
            if isinstance(item, str):
                name, _, flag = item.partition(":")
                lex = lexicalize if not flag else flag.lower() in ("1", "lex", "true", "yes")
            else:
                name, lex = item
            names.append(name.strip())
            flags.append(bool(lex))
        return cls(tuple(names), tuple(flags), num_labels, max_duration, **kw)

    def base_width(self, template: str) -> int:
        L = self.num_labels
        return {
            "label_posterior_sum": 1,
            "posterior_average": L,
            "posterior_samples": len(self.sample_positions) * L,
            "boundary_posteriors": 3 * L,
            "length_indicator": self.max_duration,
            "bias": 1,
            "lattice_score": 1,
            "bigram_lm": 1,
        }[template]

    def layout(self) -> list[tuple[str, int, int, bool]]:
        """(template, offset, base width, lexicalized) per template."""
        out, off = [], 0
        for t, lex in zip(self.templates, self.lexicalized):
            k = self.base_width(t)
            out.append((t, off, k, lex))
            off += k * (self.num_labels if lex else 1)
        return out

    @property
    def dimension(self) -> int:
        t, off, k, lex = self.layout()[-1]
        return off + k * (self.num_labels if lex else 1)

    def uses(self, template: str) -> bool:
        return template in self.templates

    def describe(self) -> str:
        return " ".join(f"{t}:{int(l)}" for t, l in zip(self.templates, self.lexicalized))


def two_feature_templates(num_labels: int, max_duration: int) -> FeatureTemplateSet:
    return FeatureTemplateSet(("label_posterior_sum", "bias"), (False, False),
                              num_labels, max_duration)


@dataclass
class Aux:
    """Inputs beyond the posteriors, one entry per segment in a batch.

    ``prev_labels`` uses -1 for the sentence start; ``ends_utterance`` marks
    segments whose end closes the utterance (adds the end-of-sentence LM
    term).
    """

    lattice_scores: np.ndarray | None = None
    prev_labels: np.ndarray | None = None
    ends_utterance: np.ndarray | None = None
    lm: "BigramLM | None" = None


@dataclass
class EdgeFeatures:
    """Feature blocks for a batch of segments.

    ``blocks`` holds ``(offset, width, lexicalized, values, index)``; dense
    blocks carry ``values`` of shape (n, width), one-hot blocks carry the
    hot position per segment in ``index``.
    """

    templates: FeatureTemplateSet
    labels: np.ndarray
    blocks: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def size(self) -> int:
        """Number of stored floats (for cache budgeting)."""
        return len(self.labels) + sum(len(self.labels) if v is None else v.size
                                      for _, _, _, v, _ in self.blocks)

    def _base(self, off, k, lex, rows=None):
        labels = self.labels if rows is None else self.labels[rows]
        return off + labels * k if lex else np.full(len(labels), off)

    def scores(self, theta: np.ndarray) -> np.ndarray:
        """theta . phi(e) for every segment."""
        out = np.zeros(len(self.labels))
        for off, k, lex, vals, idx in self.blocks:
            base = self._base(off, k, lex)
            if vals is None:
                out += theta[base + idx]
            elif k == 1:
                out += theta[base] * vals[:, 0]
            else:
                W = theta[base[:, None] + np.arange(k)]
                out += np.einsum("ij,ij->i", W, vals)
        return out

    def accumulate(self, target: np.ndarray, rows, scale: float = 1.0):
        """Add ``scale * sum_{r in rows} phi(r)`` into the dense ``target``."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            return target
        for off, k, lex, vals, idx in self.blocks:
            base = self._base(off, k, lex, rows)
            if vals is None:
                np.add.at(target, base + idx[rows], scale)
            else:
                np.add.at(target, base[:, None] + np.arange(k), scale * vals[rows])
        return target

    def sum(self, rows=None) -> np.ndarray:
        rows = np.arange(len(self)) if rows is None else rows
        return self.accumulate(np.zeros(self.templates.dimension), rows)

    def sparse(self, row: int) -> dict[int, float]:
        """Nonzero features of one segment as ``{index: value}``."""
        out: dict[int, float] = {}
        for off, k, lex, vals, idx in self.blocks:
            base = int(self._base(off, k, lex, [row])[0])
            if vals is None:
                out[base + int(idx[row])] = 1.0
            else:
                for j, v in enumerate(vals[row]):
                    if v != 0.0:
                        out[base + j] = float(v)
        return out

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self), self.templates.dimension))
        for r in range(len(self)):
            for i, v in self.sparse(r).items():
                out[r, i] = v
        return out


def featurize_segments(templates: FeatureTemplateSet, post, starts, ends, labels,
                       aux: Aux | None = None) -> EdgeFeatures:
    """Feature blocks for segments ``(starts[i], ends[i], labels[i])``."""
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    aux = aux or Aux()
    vals = _values(post)
    T, L = vals.shape
    if L != templates.num_labels:
        raise FeatureError(f"posteriors have {L} labels, templates expect {templates.num_labels}")
    n = len(labels)
    if n and (labels.min() < 0 or labels.max() >= L):
        raise FeatureError("segment label outside the posterior alphabet")
    if n and (starts.min() < 0 or ends.max() > T or np.any(ends <= starts)):
        raise FeatureError(f"segment outside frames 1..{T}")
    featurize_counter.segments += n
    dur = ends - starts
    feats = EdgeFeatures(templates, labels)
    C = None
    for name, off, k, lex in templates.layout():
        values = index = None
        if name == "label_posterior_sum":
            C = _cumulative(post) if C is None else C
            values = (C[ends, labels] - C[starts, labels])[:, None]
        elif name == "posterior_average":
            C = _cumulative(post) if C is None else C
            values = (C[ends] - C[starts]) / dur[:, None]
        elif name == "posterior_samples":
            cols = []
            for p in templates.sample_positions:
                rows = starts + np.floor(p * (dur - 1) + 0.5).astype(np.int64)
                cols.append(vals[rows])
            values = np.concatenate(cols, axis=1) if n else np.zeros((0, k))
        elif name == "boundary_posteriors":
            before = np.where(starts > 0, starts - 1, 0)
            prev = vals[before] * (starts > 0)[:, None]
            values = np.concatenate([vals[starts], vals[ends - 1], prev], axis=1) if n \
                else np.zeros((0, k))
        elif name == "length_indicator":
            index = np.minimum(dur, templates.max_duration) - 1
        elif name == "bias":
            values = np.ones((n, 1))
        elif name == "lattice_score":
            if aux.lattice_scores is None:
                raise FeatureError("lattice_score needs the previous pass's edge scores")
            values = np.asarray(aux.lattice_scores, dtype=np.float64).reshape(n, 1)
        elif name == "bigram_lm":
            if aux.prev_labels is None or aux.lm is None:
                raise FeatureError("bigram_lm needs previous labels and a bigram table")
            ends_utt = (ends == T) if aux.ends_utterance is None else np.asarray(aux.ends_utterance)
            values = aux.lm.edge_scores(aux.prev_labels, labels, ends_utt)[:, None]
        feats.blocks.append((off, k, lex, values, index))
    return feats


def featurize(templates: FeatureTemplateSet, post, seg: Segment, aux: dict | None = None) -> dict[int, float]:
    """Sparse feature vector of one segment.

    ``aux`` may hold ``lattice_score``, ``prev_label``, ``ends_utterance`` and
    ``lm``.
    """
    aux = aux or {}
    batch = Aux(
        lattice_scores=None if "lattice_score" not in aux else np.array([aux["lattice_score"]]),
        prev_labels=None if "prev_label" not in aux else np.array([aux["prev_label"]]),
        ends_utterance=None if "ends_utterance" not in aux else np.array([aux["ends_utterance"]]),
        lm=aux.get("lm"),
    )
    return featurize_segments(templates, post, [seg.start], [seg.end], [seg.label], batch).sparse(0)


@dataclass
class Model:
    """Weight vector over a template set; ``lm`` is required by ``bigram_lm``."""

    templates: FeatureTemplateSet
    theta: np.ndarray | None = None
    alphabet: Alphabet | None = None
    lm: "BigramLM | None" = None

    def __post_init__(self):
        if self.theta is None:
            self.theta = np.zeros(self.templates.dimension)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.templates.dimension,):
            raise FeatureError(f"theta has dimension {self.theta.shape}, "
                               f"templates need {self.templates.dimension}")
        if not np.all(np.isfinite(self.theta)):
            raise FeatureError("non-finite weights")
        if self.alphabet is not None and len(self.alphabet) != self.templates.num_labels:
            raise FeatureError("alphabet does not match template label count")
        if self.templates.uses("bigram_lm") and self.lm is not None \
                and self.lm.num_labels != self.templates.num_labels:
            raise FeatureError("bigram table label count mismatch")

    @property
    def dimension(self) -> int:
        return self.templates.dimension

    def copy(self) -> "Model":
        return Model(self.templates, self.theta.copy(), self.alphabet, self.lm)

    def template_index(self, template: str, label: int | None = None) -> int:
        """First weight index of a template (of the label's block if lexicalized)."""
        for name, off, k, lex in self.templates.layout():
            if name == template:
                return off + (label * k if lex and label is not None else 0)
        raise KeyError(template)

    def aux(self, **kw) -> Aux:
        return Aux(lm=self.lm, **kw)


def score(model: Model, post, seg: Segment, aux: dict | None = None) -> float:
    """theta . phi(x, seg)."""
    aux = dict(aux or {})
    aux.setdefault("lm", model.lm)
    return float(sum(model.theta[i] * v for i, v in featurize(model.templates, post, seg, aux).items()))


def path_score(model: Model, post, path: SegmentPath, lattice_scores=None) -> float:
    """Sum of segment scores along a path; previous labels come from the path."""
    total = 0.0
    prev = -1
    T = _values(post).shape[0]
    for i, seg in enumerate(path.segments):
        aux = {"prev_label": prev, "ends_utterance": seg.end == T}
        if lattice_scores is not None:
            aux["lattice_score"] = lattice_scores[i]
        total += score(model, post, seg, aux)
        prev = seg.label
    return total


class BigramLM:
    """Add-one smoothed label bigram log probabilities.

    Rows are histories (labels, then the sentence start); columns are
    outcomes (labels, then the sentence end).
    """

    def __init__(self, logprob: np.ndarray):
        self.logprob = np.asarray(logprob, dtype=np.float64)
        L1 = self.logprob.shape[0]
        if self.logprob.shape != (L1, L1) or L1 < 2:
            raise ValueError("bigram table must be (L+1) x (L+1)")

    @property
    def num_labels(self) -> int:
        return self.logprob.shape[0] - 1

    @property
    def bos(self) -> int:
        return self.num_labels

    eos = bos

    def logp(self, prev: int, label: int) -> float:
        """log p(label | prev); ``prev=-1`` is the sentence start, ``label=-1`` the end."""
        h = self.bos if prev < 0 else prev
        o = self.eos if label < 0 else label
        return float(self.logprob[h, o])

    def edge_scores(self, prev_labels, labels, ends_utterance) -> np.ndarray:
        prev = np.asarray(prev_labels, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        h = np.where(prev < 0, self.bos, prev)
        out = self.logprob[h, labels]
        ends = np.asarray(ends_utterance, dtype=bool)
        return out + np.where(ends, self.logprob[labels, self.eos], 0.0)

    def sequence_logprob(self, labels: Sequence[int]) -> float:
        prev, total = -1, 0.0
        for l in labels:
            total += self.logp(prev, l)
            prev = l
        return total + self.logp(prev, -1)

    def save(self, path, alphabet: Alphabet | None = None):
        L = self.num_labels
        names = list(alphabet) if alphabet is not None else [str(i) for i in range(L)]
        lines = [f"#bigram {L} " + " ".join(names)]
        for h in range(L + 1):
            hname = "<s>" if h == L else names[h]
            lines.append(hname + " " + " ".join(format(v, ".17g") for v in self.logprob[h]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BigramLM":
        lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        head = lines[0].split()
        if head[0] != "#bigram":
            raise ValueError(f"{path}:1: expected '#bigram <n> <names...>'")
        L = int(head[1])
        if len(lines) != L + 2:
            raise ValueError(f"{path}: expected {L + 1} history rows")
        rows = []
        for lineno, line in enumerate(lines[1:], 2):
            f = line.split()
            if len(f) != L + 2:
                raise ValueError(f"{path}:{lineno}: expected history name and {L + 1} values")
            rows.append([float(v) for v in f[1:]])
        return cls(np.array(rows))


def estimate_bigram_lm(paths: Iterable, num_labels: int) -> BigramLM:
    """Add-one smoothed bigram table from gold label sequences (or paths)."""
    L = num_labels
    counts = np.zeros((L + 1, L + 1))
    n = 0
    for p in paths:
        labels = p.labels if hasattr(p, "labels") else list(p)
        hist = [L] + list(labels)
        outs = list(labels) + [L]
        np.add.at(counts, (hist, outs), 1.0)
        n += 1
    if n == 0:
        raise ValueError("empty corpus")
    # the end symbol is never a history; its row stays uniform
    counts += 1.0
    return BigramLM(np.log(counts / counts.sum(axis=1, keepdims=True)))


# model files


def save_model(model: Model, path):
    ts = model.templates
    names = list(model.alphabet) if model.alphabet is not None else \
        [str(i) for i in range(ts.num_labels)]
    lines = [
        "#templates " + ts.describe(),
        f"#labels {len(names)} " + " ".join(names),
        f"#max_duration {ts.max_duration}",
        "#samples " + " ".join(format(p, ".17g") for p in ts.sample_positions),
        f"#dim {ts.dimension}",
    ]
    lines += [format(v, ".17g") for v in model.theta]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path, lm: BigramLM | None = None) -> Model:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = {}
    body = []
    for lineno, line in enumerate(lines, 1):
        if line.startswith("#"):
            key, _, rest = line[1:].partition(" ")
            header[key] = rest.split()
        elif line.strip():
            try:
                body.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed weight") from None
    for key in ("templates", "labels", "max_duration", "dim"):
        if key not in header:
            raise ValueError(f"{path}: missing #{key} header")
    alphabet = Alphabet(header["labels"][1:])
    ts = FeatureTemplateSet.build(header["templates"], len(alphabet),
                                  int(header["max_duration"][0]),
                                  sample_positions=tuple(float(p) for p in
                                                         header.get("samples", DEFAULT_SAMPLE_POSITIONS)))
    if len(body) != int(header["dim"][0]) or len(body) != ts.dimension:
        raise ValueError(f"{path}: expected {ts.dimension} weights, found {len(body)}")
    return Model(ts, np.array(body), alphabet, lm)
