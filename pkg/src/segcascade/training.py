"""Structured hinge-loss training of one cascade pass with AdaGrad."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .features import Model
from .inference import CorpusErrors, best_path, oracle_error_rate
from .lattice import Fst, NoPathError, Segment, SegmentPath, build_hypothesis_space
from .search import decode, path_features, score_lattice

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8


@dataclass
class TrainConfig:
    step_size: float = 0.1
    epochs: int = 1
    cost_scale: float = 1.0
    early_stopping: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step_size must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.cost_scale < 0:
            raise ValueError("cost_scale must be nonnegative")


@dataclass
class Utterance:
    """One training or evaluation item of a cascade pass.

    ``lattice`` is None for a dense first-pass hypothesis space.
    """

    uid: str
    post: object
    gold: SegmentPath | None = None
    lattice: Fst | None = None
    frames: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return self.post.num_frames

    def space(self, max_duration: int) -> Fst:
        if self.lattice is not None:
            return self.lattice
        return build_hypothesis_space(self.num_frames, self.post.num_labels, max_duration)


def overlap_costs(starts, ends, labels, gold: SegmentPath) -> np.ndarray:
    """Overlap cost of each segment against a gold segmentation.

    The matched gold segment is the one with the largest frame overlap
    (earliest on ties); the cost is ``1 - overlap / max(len_e, len_g)`` when
    the labels agree and 1 otherwise.
    """
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    gs = np.array([g.start for g in gold.segments])
    ge = np.array([g.end for g in gold.segments])
    gl = np.array([g.label for g in gold.segments])
    if len(starts) and (starts.min() < gold.start or ends.max() > gold.end):
        raise ValueError("segment outside the gold utterance span")
    ov = np.minimum(ends[:, None], ge[None, :]) - np.maximum(starts[:, None], gs[None, :])
    ov = np.maximum(ov, 0)
    g = ov.argmax(axis=1)
    best = ov[np.arange(len(starts)), g]
    denom = np.maximum(ends - starts, ge[g] - gs[g])
    cost = 1.0 - best / denom
    return np.where(labels == gl[g], cost, 1.0)


def overlap_cost(seg: Segment, gold: SegmentPath) -> float:
    return float(overlap_costs([seg.start], [seg.end], [seg.label], gold)[0])


def cost_augmented_decode(model: Model, post, fst: Fst, gold: SegmentPath,
                          cost_scale: float = 1.0, scored=None):
    """argmax over paths of score + cost_scale * overlap cost.

    Returns (path with lattice edge ids, augmented score).
    """
    sl = scored if scored is not None else score_lattice(model, post, fst)
    w = sl.weights
    if cost_scale != 0:
        s, t, l = sl.search.segment_arrays()
        w = w + cost_scale * overlap_costs(s, t, l, gold)
    path, total = best_path(sl.search, w)
    return sl.to_lattice_path(path), total


@dataclass
class HingeResult:
    loss: float
    gradient: np.ndarray
    prediction: SegmentPath
    target: SegmentPath
    substituted: bool = False


def training_target(fst: Fst, gold: SegmentPath):
    """(target path, substituted flag): gold if the lattice contains it.

    Otherwise the lattice path with the fewest label errors against gold,
    preferring lower overlap cost among ties.
    """
    edges = fst.find_path(gold)
    if edges is not None:
        return fst.path_segments(edges), False
    s, t, l = fst.segment_arrays()
    _, witness = oracle_error_rate(fst, gold.labels, edge_costs=overlap_costs(s, t, l, gold))
    return witness, True


def hinge_subgradient(model: Model, post, fst: Fst, gold: SegmentPath,
                      cost_scale: float = 1.0, scored=None, target=None) -> HingeResult:
    """Hinge loss with overlap cost and one subgradient.

    ``loss = max(0, max_y [score(y) + cost(y)] - score(target))``.  The target
    is gold, or the lattice's oracle path when gold is not in the lattice;
    costs are measured against the target.
    """
    if target is None:
        target, substituted = training_target(fst, gold)
    else:
        substituted = target.segments != gold.segments
    sl = scored if scored is not None else score_lattice(model, post, fst)
    yhat, aug = cost_augmented_decode(model, post, fst, target, cost_scale, scored=sl)
    if yhat.segments == target.segments:
        return HingeResult(0.0, np.zeros(model.dimension), yhat, target, substituted)
    phi_hat = path_features(model, post, fst, yhat)
    phi_gold = path_features(model, post, fst, target)
    loss = aug - float(model.theta @ phi_gold)
    if loss <= 0:
        return HingeResult(0.0, np.zeros(model.dimension), yhat, target, substituted)
    return HingeResult(loss, phi_hat - phi_gold, yhat, target, substituted)


def adagrad_update(theta: np.ndarray, sq_grad: np.ndarray, grad: np.ndarray,
                   step_size: float):
    """In-place AdaGrad step; coordinates with zero gradient do not move."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or sq_grad.shape != theta.shape:
        raise ValueError("dimension mismatch")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    sq_grad += grad * grad
    theta -= step_size * grad / (np.sqrt(sq_grad) + ADAGRAD_EPS)
    return theta, sq_grad


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_per: float
    seconds: float
    substituted: int = 0


def evaluate(model: Model, corpus, max_duration: int) -> CorpusErrors:
    """Corpus PER of the model's best paths."""
    errs = CorpusErrors()
    for utt in corpus:
        path, _ = decode(model, utt.post, utt.space(max_duration))
        errs.add(path.labels, utt.gold.labels)
    return errs


@dataclass
class PassTrainer:
    """Hinge-loss training state for one pass; caches per-utterance lattice features."""

    model: Model
    config: TrainConfig
    max_duration: int
    cache_floats: int = 20_000_000
    sq_grad: np.ndarray = field(init=False)
    _targets: dict = field(default_factory=dict, init=False)
    _scored: dict = field(default_factory=dict, init=False)
    _cached: int = field(default=0, init=False)

    def __post_init__(self):
        self.sq_grad = np.zeros(self.model.dimension)

    def step(self, utt: Utterance) -> HingeResult:
        fst = utt.space(self.max_duration)
        if utt.uid not in self._targets:
            self._targets[utt.uid] = training_target(fst, utt.gold)
        target, _ = self._targets[utt.uid]
        sl = self._scored.get(utt.uid)
        if sl is None:
            sl = score_lattice(self.model, utt.post, fst)
            size = sl.features.size()
            if self._cached + size <= self.cache_floats:
                self._scored[utt.uid] = sl
                self._cached += size
        else:
            sl = sl.rescored(self.model.theta)
        res = hinge_subgradient(self.model, utt.post, fst, utt.gold, self.config.cost_scale,
                                scored=sl, target=target)
        res.substituted = self._targets[utt.uid][1]
        if res.loss > 0 and self.config.step_size > 0:
            adagrad_update(self.model.theta, self.sq_grad, res.gradient, self.config.step_size)
        return res


def train_pass(model: Model, corpus, config: TrainConfig, dev=None,
               max_duration: int = 30, on_epoch=None):
    """Train one pass; returns (best model, per-epoch metrics).

    Utterances are visited one at a time in a seeded shuffled order each
    epoch.  After every epoch the dev PER is measured and the snapshot with
    the lowest dev PER is returned (the last one without dev data or early
    stopping).
    """
    corpus = [u for u in corpus]
    if not corpus:
        raise ValueError("empty corpus")
    model = model.copy()
    trainer = PassTrainer(model, config, max_duration)
    rng = np.random.default_rng(config.seed)
    metrics = []
    best, best_per = model.copy(), np.inf
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, n_sub = 0.0, 0
        usable = 0
        for i in rng.permutation(len(corpus)):
            utt = corpus[i]
            try:
                res = trainer.step(utt)
            except NoPathError:
                continue
            usable += 1
            total += res.loss
            n_sub += res.substituted
        if usable == 0:
            raise ValueError("no utterance has a usable lattice")
        if n_sub == usable:
            raise ValueError("gold path is absent from every training lattice")
        seconds = time.perf_counter() - t0
        dev_per = evaluate(model, dev, max_duration).rate if dev else float("nan")
        metrics.append(EpochMetrics(epoch, total / usable, dev_per, seconds, n_sub))
        log.info("epoch %d: loss %.4f dev PER %.4f (%.1fs, %d substituted targets)",
                 epoch, total / usable, dev_per, seconds, n_sub)
        if on_epoch is not None:
            on_epoch(metrics[-1], model)
        if not dev or not config.early_stopping:
            best = model.copy()
        elif dev_per < best_per:
            best, best_per = model.copy(), dev_per
    return best, metrics
