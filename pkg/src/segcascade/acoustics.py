"""Frame posteriors, a context-window frame classifier, and frame subsampling.

The classifier is a multinomial log-linear model over a window of
``2 * radius + 1`` stacked frame vectors.  Under subsampling only every
other frame is fed forward (each still sees its full context window) and
each output is copied to the skipped neighbour; training then sums the loss
gradients of both frames into the shared output.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lattice import Alphabet

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8
PARITIES = ("even", "odd")


class PosteriorFormatError(ValueError):
    pass


class NormalizationWarning(UserWarning):
    pass


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def row_logsumexp(values: np.ndarray) -> np.ndarray:
    m = values.max(axis=1)
    return m + np.log(np.exp(values - m[:, None]).sum(axis=1))


@dataclass(eq=False)
class PosteriorMatrix:
    """Per-frame log posteriors, ``values[k, l] = log h(x)_{k, l}`` (0-based k)."""

    values: np.ndarray
    alphabet: Alphabet | None = None
    _cumsum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError("posterior matrix must be a non-empty T x L array")
        if self.alphabet is not None and len(self.alphabet) != self.values.shape[1]:
            raise ValueError("alphabet size does not match posterior width")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_labels(self) -> int:
        return self.values.shape[1]

    def normalization_error(self) -> float:
        return float(np.abs(row_logsumexp(self.values)).max())

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return bool(np.all(self.values <= tol) and self.normalization_error() <= tol)

    def cumulative(self) -> np.ndarray:
        """``C[t] = sum of rows 0..t-1``; shape (T+1, L)."""
        if self._cumsum is None:
            c = np.zeros((self.num_frames + 1, self.num_labels))
            np.cumsum(self.values, axis=0, out=c[1:])
            self._cumsum = c
        return self._cumsum

    def frame_error(self, gold: Sequence[int]) -> float:
        gold = np.asarray(gold)
        return float(np.mean(self.values.argmax(axis=1) != gold))


class FrameClassifier:
    """Softmax over a zero-padded context window of frame vectors."""

    def __init__(self, feature_dim: int, num_labels: int, context_radius: int = 0,
                 weights=None, bias=None):
        if feature_dim < 1 or num_labels < 1 or context_radius < 0:
            raise ValueError("invalid classifier shape")
        self.feature_dim = feature_dim
        self.num_labels = num_labels
        self.context_radius = context_radius
        n_in = (2 * context_radius + 1) * feature_dim
        self.weights = np.zeros((n_in, num_labels)) if weights is None else np.array(weights, dtype=float)
        self.bias = np.zeros(num_labels) if bias is None else np.array(bias, dtype=float)
        if self.weights.shape != (n_in, num_labels) or self.bias.shape != (num_labels,):
            raise ValueError("weight shapes do not match classifier dimensions")
        self.sq_weights = np.zeros_like(self.weights)
        self.sq_bias = np.zeros_like(self.bias)
        # instrumentation: number of frame outputs computed
        self.frames_evaluated = 0

    def copy(self) -> "FrameClassifier":
        new = FrameClassifier(self.feature_dim, self.num_labels, self.context_radius,
                              self.weights, self.bias)
        new.sq_weights = self.sq_weights.copy()
        new.sq_bias = self.sq_bias.copy()
        return new

    def _check(self, frames) -> np.ndarray:
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ValueError(f"expected frames of dimension {self.feature_dim}, "
                             f"got shape {x.shape}")
        if x.shape[0] < 1:
            raise ValueError("no frames")
        return x

    def window(self, x: np.ndarray, rows=None) -> np.ndarray:
        """Stacked context windows (zero-padded) for ``rows`` of ``x``, or all rows."""
        r = self.context_radius
        if rows is None:
            rows = np.arange(x.shape[0])
        if r == 0:
            return x[rows]
        T, d = x.shape
        padded = np.zeros((T + 2 * r, d))
        padded[r:r + T] = x
        return padded[rows[:, None] + np.arange(2 * r + 1)].reshape(len(rows), -1)

    def _log_probs(self, x: np.ndarray, rows=None):
        xw = self.window(x, rows)
        self.frames_evaluated += xw.shape[0]
        return xw, log_softmax(xw @ self.weights + self.bias)

    def classify(self, frames) -> PosteriorMatrix:
        x = self._check(frames)
        return PosteriorMatrix(self._log_probs(x)[1])

    def subsample_forward(self, frames, parity: str = "even") -> PosteriorMatrix:
        """Feed forward every other frame and copy outputs to the skipped ones."""
        x = self._check(frames)
        kept, src = subsample_plan(x.shape[0], parity)
        _, lp = self._log_probs(x, kept)
        return PosteriorMatrix(lp[src])

    def posteriors(self, frames, subsample: str | None = None) -> PosteriorMatrix:
        if subsample in (None, "none"):
            return self.classify(frames)
        return self.subsample_forward(frames, subsample)

    def loss_and_grad(self, frames, gold, parity: str | None = None):
        """Summed frame log loss and its gradient w.r.t. (weights, bias).

        With ``parity`` the outputs are subsampled; a computed output that is
        copied to a skipped frame receives both frames' gradients.
        """
        x = self._check(frames)
        gold = np.asarray(gold, dtype=np.int64)
        if gold.shape != (x.shape[0],):
            raise ValueError("need one gold label per frame")
        if gold.min() < 0 or gold.max() >= self.num_labels:
            raise ValueError("gold label outside the label set")
        if parity in (None, "none"):
            kept, src = np.arange(x.shape[0]), np.arange(x.shape[0])
        else:
            kept, src = subsample_plan(x.shape[0], parity)
        xw, lp = self._log_probs(x, kept)
        loss = -float(lp[src, gold].sum())
        K, L = lp.shape
        # a kept output copied to a skipped frame collects both frames' targets
        targets = np.bincount(src * L + gold, minlength=K * L).reshape(K, L).astype(np.float64)
        dz = targets.sum(axis=1, keepdims=True) * np.exp(lp) - targets
        return loss, xw.T @ dz, dz.sum(axis=0)

    def adagrad_step(self, grad_w, grad_b, step_size: float):
        self.sq_weights += grad_w * grad_w
        self.sq_bias += grad_b * grad_b
        self.weights -= step_size * grad_w / (np.sqrt(self.sq_weights) + ADAGRAD_EPS)
        self.bias -= step_size * grad_b / (np.sqrt(self.sq_bias) + ADAGRAD_EPS)

    def save(self, path):
        # through a file object so numpy does not append ".npz" to the name
        with open(path, "wb") as f:
            np.savez(f, weights=self.weights, bias=self.bias,
                     sq_weights=self.sq_weights, sq_bias=self.sq_bias,
                     shape=np.array([self.feature_dim, self.num_labels, self.context_radius]))

    @classmethod
    def load(cls, path) -> "FrameClassifier":
        with np.load(path) as z:
            d, L, r = (int(v) for v in z["shape"])
            clf = cls(d, L, r, z["weights"], z["bias"])
            clf.sq_weights = z["sq_weights"].copy()
            clf.sq_bias = z["sq_bias"].copy()
        return clf


def subsample_plan(num_frames: int, parity: str):
    """(evaluated frame rows, source row in the evaluated set for every frame).

    Rows are 0-based; parity refers to 1-based frame numbers.  With
    ``even`` the frames 2, 4, ... are evaluated and frame ``i - 1`` copies
    frame ``i``; a trailing odd frame is evaluated directly.  With ``odd``
    frames 1, 3, ... are evaluated and frame ``i + 1`` copies frame ``i``.
    """
    if parity not in PARITIES:
        raise ValueError(f"parity must be one of {PARITIES}")
    T = num_frames
    if T < 1:
        raise ValueError("no frames")
    idx = np.arange(T)
    if parity == "even":
        kept = idx[1::2]
        if T % 2:
            kept = np.append(kept, T - 1)
        src_row = np.minimum(idx | 1, T - 1)
    else:
        kept = idx[0::2]
        src_row = idx & ~1
    pos = np.full(T, -1)
    pos[kept] = np.arange(len(kept))
    return kept, pos[src_row]


@dataclass
class EpochStats:
    epoch: int
    loss: float          # mean per-frame log loss accumulated during the epoch
    seconds: float
    parity: str | None


def train_frame_classifier(clf: FrameClassifier, corpus, epochs: int = 1,
                           step_size: float = 0.01, subsample: bool = False,
                           seed: int = 0) -> list[EpochStats]:
    """AdaGrad on the summed frame log loss, one utterance per update.

    ``corpus`` is a sequence of ``(frames, gold_labels)`` pairs.  With
    ``subsample`` the kept parity alternates each epoch, starting with even.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    for _, gold in corpus:
        g = np.asarray(gold)
        if g.size and (g.min() < 0 or g.max() >= clf.num_labels):
            raise ValueError("gold label outside the label set")
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        parity = PARITIES[epoch % 2] if subsample else None
        order = rng.permutation(len(corpus))
        t0 = time.perf_counter()
        total, frames = 0.0, 0
        for i in order:
            x, y = corpus[i]
            loss, gw, gb = clf.loss_and_grad(x, y, parity)
            clf.adagrad_step(gw, gb, step_size)
            total += loss
            frames += len(y)
        history.append(EpochStats(epoch + 1, total / frames, time.perf_counter() - t0, parity))
        log.info("frame classifier epoch %d: loss %.4f (%.2fs)", epoch + 1,
                 history[-1].loss, history[-1].seconds)
    return history


def log_loss(clf: FrameClassifier, corpus) -> float:
    """Mean per-frame log loss over ``(frames, gold)`` pairs, full frame rate."""
    total, n = 0.0, 0
    for x, y in corpus:
        lp = clf.classify(x).values
        total -= lp[np.arange(len(y)), y].sum()
        n += len(y)
    return total / n


def frame_error_rate(clf: FrameClassifier, corpus, subsample: str | None = None) -> float:
    wrong, n = 0, 0
    for x, y in corpus:
        p = clf.posteriors(x, subsample).values
        wrong += int((p.argmax(axis=1) != np.asarray(y)).sum())
        n += len(y)
    return wrong / n


# file formats


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_posteriors(post: PosteriorMatrix, path, alphabet: Alphabet | None = None):
    alphabet = alphabet or post.alphabet or Alphabet(str(i) for i in range(post.num_labels))
    lines = [f"#frames {post.num_frames}",
             f"#labels {len(alphabet)} " + " ".join(alphabet)]
    lines += [" ".join(_fmt(v) for v in row) for row in post.values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_matrix(path, kind: str):
    text = Path(path).read_text(encoding="utf-8").splitlines()

    def fail(lineno, msg):
        raise PosteriorFormatError(f"{path}:{lineno}: {msg}")

    if len(text) < 2:
        fail(len(text) + 1, "missing header")
    head = text[0].split()
    if len(head) != 2 or head[0] != "#frames":
        fail(1, "expected '#frames <T>'")
    T = int(head[1])
    second = text[1].split()
    if kind == "labels":
        if len(second) < 2 or second[0] != "#labels":
            fail(2, "expected '#labels <n> <names...>'")
        n = int(second[1])
        names = second[2:]
        if len(names) != n:
            fail(2, f"declared {n} labels but listed {len(names)}")
        meta = Alphabet(names)
    else:
        if len(second) != 2 or second[0] != "#dim":
            fail(2, "expected '#dim <d>'")
        n = int(second[1])
        meta = n
    rows = []
    for lineno, line in enumerate(text[2:], 3):
        if not line.strip():
            continue
        f = line.split()
        if len(f) != n:
            fail(lineno, f"expected {n} values, found {len(f)}")
        try:
            rows.append([float(v) for v in f])
        except ValueError:
            fail(lineno, "non-numeric value")
        if not all(math.isfinite(v) or v == -math.inf for v in rows[-1]):
            fail(lineno, "invalid value")
    if len(rows) != T:
        fail(len(text) + 1, f"truncated: expected {T} frames, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(T, n), meta


def read_posteriors(path, tol: float = 1e-4) -> PosteriorMatrix:
    """Read a posterior file; rows off normalization by more than ``tol`` warn."""
    values, alphabet = _read_matrix(path, "labels")
    post = PosteriorMatrix(values, alphabet)
    err = post.normalization_error()
    if err > tol or np.any(values > tol):
        warnings.warn(f"{path}: rows not normalized (max |logsumexp| = {err:.3g})",
                      NormalizationWarning, stacklevel=2)
    return post


def write_frames(frames, path):
    x = np.asarray(frames, dtype=np.float64)
    lines = [f"#frames {x.shape[0]}", f"#dim {x.shape[1]}"]
    lines += [" ".join(_fmt(v) for v in row) for row in x]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_frames(path) -> np.ndarray:
    return _read_matrix(path, "dim")[0]
