"""Multi-pass segmental cascades.

Pass ``i`` trains a model on hypothesis space ``Y_i`` (the dense space for
pass 1), scores ``Y_i`` with it and prunes, producing ``Y_{i+1}`` whose edge
weights are the pass-``i`` segment scores.  Later passes read those weights
through the lattice_score template.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import (BigramLM, FeatureTemplateSet, Model, estimate_bigram_lm,
                       load_model, save_model)
from .inference import CorpusErrors, NoPathError, best_path, oracle_error_rate, real_time_factor
from .lattice import Alphabet, Fst, SegmentPath, build_hypothesis_space, write_lattice
from .pruning import PruneParams, prune_mask
from .search import score_lattice
from .training import TrainConfig, Utterance, train_pass

log = logging.getLogger(__name__)


class CascadeError(RuntimeError):
    pass


RICH_TEMPLATES = ("posterior_average:1", "posterior_samples:1", "boundary_posteriors:1",
                  "length_indicator:1", "bias:1")


@dataclass
class PassConfig:
    templates: tuple[str, ...]
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneParams | None = None
    # initial weight of the lattice_score feature (warm start from the previous pass)
    init_lattice_weight: float = 1.0


@dataclass
class CascadeConfig:
    passes: list[PassConfig]
    alphabet: Alphabet | None = None
    max_duration: int = 30
    subsample: str = "even"
    frame_rate: float = 100.0
    max_empty_fraction: float = 0.05
    sample_positions: tuple[float, ...] = (0.0, 0.5, 1.0)

    def __post_init__(self):
        if not self.passes:
            raise ValueError("a cascade needs at least one pass")
        for i, p in enumerate(self.passes[:-1], 1):
            if p.prune is None:
                raise ValueError(f"pass {i} is not final and has no pruning parameters")
        if self.subsample not in ("none", "even", "odd"):
            raise ValueError("subsample must be none, even or odd")
        if self.max_duration < 1:
            raise ValueError("max_duration must be >= 1")

    def __len__(self):
        return len(self.passes)

    def template_set(self, i: int, num_labels: int) -> FeatureTemplateSet:
        return FeatureTemplateSet.build(self.passes[i].templates, num_labels, self.max_duration,
                                        sample_positions=self.sample_positions)

    @classmethod
    def default(cls, alphabet=None, max_duration: int = 30, alpha_pass1: float = 0.85,
                alpha_pass2: float = 0.3, epochs=(3, 20, 20), **kw) -> "CascadeConfig":
        """Three passes: two-feature model, rich lexicalized model, then LM rescoring."""
        return cls([
            PassConfig(("label_posterior_sum", "bias"),
                       TrainConfig(step_size=1.0, epochs=epochs[0], early_stopping=False),
                       PruneParams("edge", alpha_pass1)),
            PassConfig(("lattice_score",) + RICH_TEMPLATES,
                       TrainConfig(step_size=0.1, epochs=epochs[1]),
                       PruneParams("edge", alpha_pass2)),
            PassConfig(("lattice_score", "bigram_lm", "length_indicator", "bias"),
                       TrainConfig(step_size=0.01, epochs=epochs[2])),
        ], alphabet=alphabet, max_duration=max_duration, **kw)

    # flat key = value files

    def dumps(self) -> str:
        lines = []
        if self.alphabet is not None:
            lines.append("labels = " + " ".join(self.alphabet))
        lines += [f"max_duration = {self.max_duration}", f"subsample = {self.subsample}",
                  f"frame_rate = {self.frame_rate!r}",
                  f"max_empty_fraction = {self.max_empty_fraction!r}",
                  "sample_positions = " + " ".join(repr(p) for p in self.sample_positions),
                  f"passes = {len(self.passes)}"]
        for i, p in enumerate(self.passes, 1):
            t = p.train
            lines += [f"pass{i}.templates = " + " ".join(p.templates),
                      f"pass{i}.step_size = {t.step_size!r}", f"pass{i}.epochs = {t.epochs}",
                      f"pass{i}.cost_scale = {t.cost_scale!r}",
                      f"pass{i}.early_stopping = {int(t.early_stopping)}",
                      f"pass{i}.seed = {t.seed}",
                      f"pass{i}.init_lattice_weight = {p.init_lattice_weight!r}"]
            if p.prune is not None:
                lines.append(f"pass{i}.prune = {p.prune.method} {p.prune.alpha!r}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, source: str = "<config>") -> "CascadeConfig":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{source}:{lineno}: expected 'key = value'")
            kv[key.strip()] = value.strip()
        try:
            n = int(kv.pop("passes"))
        except KeyError:
            raise ValueError(f"{source}: missing 'passes'") from None
        passes = []
        for i in range(1, n + 1):
            g = lambda k, d=None: kv.pop(f"pass{i}.{k}", d)  # noqa: E731
            templates = g("templates")
            if templates is None:
                raise ValueError(f"{source}: missing pass{i}.templates")
            train = TrainConfig(step_size=float(g("step_size", 0.1)), epochs=int(g("epochs", 1)),
                                cost_scale=float(g("cost_scale", 1.0)),
                                early_stopping=bool(int(g("early_stopping", 1))),
                                seed=int(g("seed", 0)))
            prune = g("prune")
            if prune is not None:
                method, alpha = prune.split()
                prune = PruneParams(method, float(alpha))
            passes.append(PassConfig(tuple(templates.split()), train, prune,
                                     float(g("init_lattice_weight", 1.0))))
        labels = kv.pop("labels", None)
        cfg = cls(passes,
                  alphabet=Alphabet(labels.split()) if labels else None,
                  max_duration=int(kv.pop("max_duration", 30)),
                  subsample=kv.pop("subsample", "even"),
                  frame_rate=float(kv.pop("frame_rate", 100.0)),
                  max_empty_fraction=float(kv.pop("max_empty_fraction", 0.05)),
                  sample_positions=tuple(float(x) for x in
                                         kv.pop("sample_positions", "0 0.5 1").split()))
        if kv:
            raise ValueError(f"{source}: unknown keys {sorted(kv)}")
        return cfg

    @classmethod
    def load(cls, path) -> "CascadeConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"), str(path))


def init_model(config: CascadeConfig, i: int, num_labels: int, lm: BigramLM | None = None,
               alphabet: Alphabet | None = None) -> Model:
    ts = config.template_set(i, num_labels)
    model = Model(ts, alphabet=alphabet, lm=lm)
    if ts.uses("lattice_score"):
        model.theta[model.template_index("lattice_score")] = config.passes[i].init_lattice_weight
    return model


def single_path_lattice(path: SegmentPath, num_frames: int, weights=None) -> Fst:
    """Chain lattice holding exactly one path."""
    times = [path.start] + [s.end for s in path.segments]
    n = len(path.segments)
    w = np.zeros(n) if weights is None else weights
    return Fst(times, np.arange(n), np.arange(1, n + 1), path.labels, w, [0], [n],
               num_frames=num_frames)


@dataclass
class PruneOutcome:
    lattice: Fst
    empty: bool
    seconds: float


def prune_with_model(model: Model, post, space: Fst, params: PruneParams) -> PruneOutcome:
    """Score ``space`` with ``model``, prune, and stamp surviving edges with their scores.

    An empty result is replaced by the model's best path as a one-path
    lattice and flagged.
    """
    t0 = time.perf_counter()
    sl = score_lattice(model, post, space)
    mask = sl.project_mask(prune_mask(sl.search, params))
    stamped = space.with_weights(sl.lattice_scores())
    out = stamped.subgraph(mask).trim()
    empty = out.num_edges == 0
    if empty:
        path, _ = best_path(sl.search)
        path = sl.to_lattice_path(path)
        out = stamped.subgraph(np.isin(np.arange(space.num_edges), path.edges)).trim()
    return PruneOutcome(out, empty, time.perf_counter() - t0)


@dataclass
class PassReport:
    index: int
    metrics: list
    train_seconds: float
    dev_per: float
    prune_seconds: float = 0.0
    prune_rtf: float = float("nan")
    edges_before: int = 0
    edges_after: int = 0
    density: float = float("nan")
    oracle_error: float = float("nan")
    empty: int = 0

    @property
    def pruned_fraction(self) -> float:
        return 1.0 - self.edges_after / self.edges_before if self.edges_before else float("nan")


@dataclass
class CascadeTrainResult:
    models: list[Model]
    reports: list[PassReport]
    lattices: list[dict]  # lattices[i]: uid -> Fst of Y_{i+2} (output of pass i+1)


def lattice_stats(lattices: dict, utts) -> tuple[float, float, int]:
    """(density, oracle error rate, edges) aggregated over a corpus."""
    errs, ref, edges = 0, 0, 0
    for u in utts:
        fst = lattices[u.uid]
        rate, _ = oracle_error_rate(fst, u.gold.labels)
        errs += round(rate * len(u.gold))
        ref += len(u.gold)
        edges += fst.num_edges
    return edges / ref, errs / ref, edges


def run_cascade_train(config: CascadeConfig, train, dev, out_dir=None,
                      alphabet: Alphabet | None = None) -> CascadeTrainResult:
    """Train every pass in order; returns models, per-pass reports and lattices.

    ``train`` and ``dev`` are sequences of :class:`Utterance` with posteriors
    and gold paths.  With ``out_dir`` models and intermediate lattices are
    written there.
    """
    train, dev = list(train), list(dev)
    if not train:
        raise ValueError("empty training corpus")
    alphabet = alphabet or config.alphabet
    L = train[0].post.num_labels
    D = config.max_duration
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "cascade.conf")
    lm = None
    models, reports, all_lattices = [], [], []
    cur_train, cur_dev = train, dev
    for i, pcfg in enumerate(config.passes):
        ts = config.template_set(i, L)
        if ts.uses("bigram_lm") and lm is None:
            lm = estimate_bigram_lm([u.gold for u in train], L)
            if out is not None:
                lm.save(out / "bigram.lm", alphabet)
        model = init_model(config, i, L, lm if ts.uses("bigram_lm") else None, alphabet)
        t0 = time.perf_counter()
        model, metrics = train_pass(model, cur_train, pcfg.train, dev=cur_dev, max_duration=D)
        train_seconds = time.perf_counter() - t0
        dev_per = min((m.dev_per for m in metrics), default=float("nan")) \
            if pcfg.train.early_stopping else metrics[-1].dev_per
        report = PassReport(i + 1, metrics, train_seconds, dev_per)
        models.append(model)
        if out is not None:
            save_model(model, out / f"model{i + 1}.txt")
        log.info("pass %d trained in %.1fs, dev PER %.4f", i + 1, train_seconds, dev_per)
        if pcfg.prune is None:
            reports.append(report)
            break
        lattices = {}
        empty = 0
        dev_seconds, dev_audio = 0.0, 0.0
        before = 0
        dev_ids = {u.uid for u in cur_dev}
        for u in cur_train + cur_dev:
            space = u.space(D)
            res = prune_with_model(model, u.post, space, pcfg.prune)
            lattices[u.uid] = res.lattice
            empty += res.empty
            if u.uid in dev_ids:
                dev_seconds += res.seconds
                dev_audio += u.num_frames / config.frame_rate
                before += space.num_edges
        n = len(cur_train) + len(cur_dev)
        report.empty = empty
        if empty > config.max_empty_fraction * n:
            raise CascadeError(f"pass {i + 1} pruning emptied {empty}/{n} lattices "
                               f"(method {pcfg.prune.method}, alpha {pcfg.prune.alpha})")
        if cur_dev:
            report.density, report.oracle_error, report.edges_after = lattice_stats(lattices, cur_dev)
            report.edges_before = before
            report.prune_seconds = dev_seconds
            report.prune_rtf = real_time_factor(dev_seconds, dev_audio)
        reports.append(report)
        log.info("pass %d pruning: %.1f%% of dev edges removed, oracle error %.4f",
                 i + 1, 100 * report.pruned_fraction, report.oracle_error)
        if out is not None:
            d = out / f"lattices{i + 2}"
            d.mkdir(exist_ok=True)
            for uid, fst in lattices.items():
                write_lattice(fst, d / f"{uid}.lat", alphabet)
        all_lattices.append(lattices)
        cur_train = [Utterance(u.uid, u.post, u.gold, lattices[u.uid]) for u in cur_train]
        cur_dev = [Utterance(u.uid, u.post, u.gold, lattices[u.uid]) for u in cur_dev]
    return CascadeTrainResult(models, reports, all_lattices)


@dataclass
class DecodeResult:
    path: SegmentPath
    score: float
    pass_seconds: list[float]
    feed_forward_seconds: float
    total_seconds: float
    audio_seconds: float
    lattice_edges: list[int]
    flags: list[str] = field(default_factory=list)
    lattice: Fst | None = None  # what the final pass searched

    @property
    def pass_rtf(self) -> list[float]:
        return [s / self.audio_seconds for s in self.pass_seconds]

    @property
    def feed_forward_rtf(self) -> float:
        return self.feed_forward_seconds / self.audio_seconds

    @property
    def total_rtf(self) -> float:
        return self.total_seconds / self.audio_seconds


def run_cascade_decode(models, config: CascadeConfig, post=None, frames=None,
                       classifier=None, lattice: Fst | None = None) -> DecodeResult:
    """Decode one utterance through every pass.

    Either ``post`` (posteriors) or ``frames`` plus ``classifier`` must be
    given; in the latter case the feed-forward time is included.  Passes
    before the last score and prune; the last returns its best path.
    """
    t_start = time.perf_counter()
    ff = 0.0
    if post is None:
        if frames is None or classifier is None:
            raise ValueError("need posteriors, or frames and a classifier")
        t0 = time.perf_counter()
        post = classifier.posteriors(frames, config.subsample)
        ff = time.perf_counter() - t0
    D = config.max_duration
    seconds, edges, flags = [], [], []
    path, total = None, float("nan")
    space = lattice
    for i, (model, pcfg) in enumerate(zip(models, config.passes)):
        t0 = time.perf_counter()
        if space is None:
            # building the dense space is part of the first pass's work
            space = build_hypothesis_space(post.num_frames, post.num_labels, D)
        edges.append(space.num_edges)
        last = i == len(models) - 1
        if last or pcfg.prune is None:
            sl = score_lattice(model, post, space)
            p, total = best_path(sl.search)
            path = sl.to_lattice_path(p)
            seconds.append(time.perf_counter() - t0)
            break
        res = prune_with_model(model, post, space, pcfg.prune)
        if res.empty:
            flags.append(f"pass {i + 1}: empty lattice, kept best path")
        space = res.lattice
        seconds.append(time.perf_counter() - t0)
    total_seconds = time.perf_counter() - t_start
    return DecodeResult(path, total, seconds, ff, total_seconds,
                        post.num_frames / config.frame_rate, edges, flags, space)


def decode_corpus(models, config: CascadeConfig, utts, classifier=None):
    """Decode utterances; returns (results, corpus PER errors, timing summary).

    Utterances are decoded from frames when a classifier is given, else from
    their posteriors.
    """
    results, errs = [], CorpusErrors()
    for u in utts:
        if classifier is not None and u.frames is not None:
            r = run_cascade_decode(models, config, frames=u.frames, classifier=classifier)
        else:
            r = run_cascade_decode(models, config, post=u.post)
        results.append(r)
        if u.gold is not None:
            errs.add(r.path.labels, u.gold.labels)
    audio = sum(r.audio_seconds for r in results)
    n_pass = max(len(r.pass_seconds) for r in results)
    per_pass = [sum(r.pass_seconds[i] for r in results if i < len(r.pass_seconds)) / audio
                for i in range(n_pass)]
    timing = {
        "pass_rtf": per_pass,
        "decoding_rtf": sum(per_pass),
        "feed_forward_rtf": sum(r.feed_forward_seconds for r in results) / audio,
        "total_rtf": sum(r.total_seconds for r in results) / audio,
    }
    return results, errs, timing


def save_models(models, out_dir, alphabet=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(models, 1):
        save_model(m, out / f"model{i}.txt")
        if m.lm is not None and not (out / "bigram.lm").exists():
            m.lm.save(out / "bigram.lm", alphabet)


def load_models(model_dir, config: CascadeConfig) -> list[Model]:
    d = Path(model_dir)
    lm = BigramLM.load(d / "bigram.lm") if (d / "bigram.lm").exists() else None
    models = []
    for i in range(1, len(config.passes) + 1):
        m = load_model(d / f"model{i}.txt")
        if m.templates.uses("bigram_lm"):
            if lm is None:
                raise FileNotFoundError(f"{d}: model{i} needs bigram.lm")
            m.lm = lm
        models.append(m)
    return models
