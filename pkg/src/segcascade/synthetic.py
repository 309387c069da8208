"""Synthetic segmental corpora with known ground truth.

Label sequences come from a bigram table with start and end symbols,
durations from a bounded distribution, and each frame is the one-hot vector
of its label plus isotropic Gaussian noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Alphabet, Segment, SegmentPath


def random_bigram_table(num_labels: int, rng=None, concentration: float = 0.3,
                        mean_segments: float = 10.0, allow_repeats: bool = False) -> np.ndarray:
    """(L+1) x (L+1) transition table; row L is the start, column L the end.

    Rows are Dirichlet draws (sparse for small ``concentration``); the end
    probability after a label is ``1 / mean_segments``.
    """
    rng = np.random.default_rng(rng)
    L = num_labels
    table = np.zeros((L + 1, L + 1))
    p_end = 1.0 / mean_segments
    for h in range(L + 1):
        probs = rng.dirichlet(np.full(L, concentration))
        if h < L and not allow_repeats and L > 1:
            probs[h] = 0.0
            probs /= probs.sum()
        if h < L:
            table[h, :L] = (1 - p_end) * probs
            table[h, L] = p_end
        else:
            table[h, :L] = probs
    return table


@dataclass
class GeneratorSpec:
    num_labels: int = 10
    min_duration: int = 3
    max_duration: int = 12
    duration_shape: str = "uniform"   # or "peaked": binomial around the midpoint
    transitions: np.ndarray | None = None
    noise: float = 0.5
    segment_noise: float = 0.0  # std of an offset shared by all frames of a segment
    num_utterances: int = 100
    seed: int = 0
    max_segments: int = 120
    mean_segments: float = 10.0  # only used to draw a default transition table
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_labels < 1:
            raise ValueError("empty label alphabet")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("need 1 <= min_duration <= max_duration")
        if self.noise < 0 or self.segment_noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.duration_shape not in ("uniform", "peaked"):
            raise ValueError(f"unknown duration shape {self.duration_shape!r}")
        if self.transitions is None:
            self.transitions = random_bigram_table(
                self.num_labels, np.random.default_rng([self.seed, 7919]),
                mean_segments=self.mean_segments)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        L1 = self.num_labels + 1
        if self.transitions.shape != (L1, L1):
            raise ValueError("transition table must be (L+1) x (L+1)")
        if np.any(self.transitions < 0) or not np.allclose(self.transitions.sum(axis=1), 1.0):
            raise ValueError("transition rows must be probability distributions")

    @property
    def alphabet(self) -> Alphabet:
        names = self.label_names or tuple(f"p{i}" for i in range(self.num_labels))
        return Alphabet(names)


@dataclass
class SyntheticUtterance:
    uid: str
    frames: np.ndarray
    gold: SegmentPath

    @property
    def frame_labels(self) -> np.ndarray:
        return frame_labels(self.gold)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def frame_labels(path: SegmentPath) -> np.ndarray:
    return np.concatenate([np.full(s.duration, s.label) for s in path.segments])


def _durations(spec: GeneratorSpec, rng, n: int) -> np.ndarray:
    lo, hi = spec.min_duration, spec.max_duration
    if spec.duration_shape == "uniform":
        return rng.integers(lo, hi + 1, size=n)
    return lo + rng.binomial(hi - lo, 0.5, size=n)


def sample_labels(table: np.ndarray, rng, max_segments: int) -> list[int]:
    L = table.shape[0] - 1
    labels = []
    h = L
    while len(labels) < max_segments:
        o = int(rng.choice(L + 1, p=table[h]))
        if o == L:
            if labels:
                break
            continue
        labels.append(o)
        h = o
    return labels


def generate_utterance(spec: GeneratorSpec, rng, uid: str) -> SyntheticUtterance:
    labels = sample_labels(spec.transitions, rng, spec.max_segments)
    durs = _durations(spec, rng, len(labels))
    bounds = np.concatenate([[0], np.cumsum(durs)])
    gold = SegmentPath(tuple(Segment(int(bounds[i]), int(bounds[i + 1]), l)
                             for i, l in enumerate(labels)))
    y = frame_labels(gold)
    frames = np.eye(spec.num_labels)[y] + spec.noise * rng.standard_normal((len(y), spec.num_labels))
    if spec.segment_noise > 0:
        offsets = spec.segment_noise * rng.standard_normal((len(labels), spec.num_labels))
        frames += np.repeat(offsets, durs, axis=0)
    return SyntheticUtterance(uid, frames, gold)


def generate(spec: GeneratorSpec, prefix: str = "utt") -> list[SyntheticUtterance]:
    """Seeded corpus; each utterance draws from its own child seed."""
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_utterances)
    width = len(str(max(spec.num_utterances - 1, 0)))
    return [generate_utterance(spec, np.random.default_rng(s), f"{prefix}{i:0{width}d}")
            for i, s in enumerate(seeds)]


def bigram_frequencies(corpus, num_labels: int) -> np.ndarray:
    """Empirical transition table (rows with no counts stay zero)."""
    L = num_labels
    counts = np.zeros((L + 1, L + 1))
    for utt in corpus:
        labels = utt.gold.labels
        np.add.at(counts, ([L] + labels, labels + [L]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def save_spec(spec: GeneratorSpec, path):
    lines = [
        f"num_labels = {spec.num_labels}",
        f"min_duration = {spec.min_duration}",
        f"max_duration = {spec.max_duration}",
        f"duration_shape = {spec.duration_shape}",
        f"noise = {spec.noise!r}",
        f"segment_noise = {spec.segment_noise!r}",
        f"num_utterances = {spec.num_utterances}",
        f"seed = {spec.seed}",
        f"max_segments = {spec.max_segments}",
        f"mean_segments = {spec.mean_segments!r}",
    ]
    for h, row in enumerate(spec.transitions):
        lines.append(f"transitions.{h} = " + " ".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_spec(path) -> GeneratorSpec:
    """Read a flat ``key = value`` generator spec; missing keys take defaults."""
    kv = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        kv[key.strip()] = value.strip()
    kw = {}
    for key, conv in (("num_labels", int), ("min_duration", int), ("max_duration", int),
                      ("duration_shape", str), ("noise", float),
                      ("segment_noise", float), ("num_utterances", int),
                      ("seed", int), ("max_segments", int),
                      ("mean_segments", float)):
        if key in kv:
            kw[key] = conv(kv.pop(key))
    rows = sorted((int(k.split(".")[1]), v) for k, v in kv.items() if k.startswith("transitions."))
    if rows:
        kw["transitions"] = np.array([[float(x) for x in v.split()] for _, v in rows])
    extra = [k for k in kv if not k.startswith("transitions.")]
    if extra:
        raise ValueError(f"{path}: unknown keys {extra}")
    return GeneratorSpec(**kw)
