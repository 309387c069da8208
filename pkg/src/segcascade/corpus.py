"""Transcription files and corpus directories.

A transcription file holds one block per utterance::

    #utt <id>
    <start-frame> <end-frame> <label>
    ...

Frames are boundary times, so a line ``0 5 aa`` covers frames 1..5.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .lattice import Alphabet, Segment, SegmentPath


class TranscriptionError(ValueError):
    pass


def format_transcriptions(items: Iterable[tuple[str, SegmentPath]], alphabet: Alphabet) -> str:
    lines = []
    for uid, path in items:
        lines.append(f"#utt {uid}")
        lines += [f"{s.start} {s.end} {alphabet[s.label]}" for s in path.segments]
    return "\n".join(lines) + "\n"


def write_transcriptions(items, path, alphabet: Alphabet):
    Path(path).write_text(format_transcriptions(items, alphabet), encoding="utf-8")


def read_transcriptions(path, alphabet: Alphabet | None = None) -> dict[str, list[tuple[int, int, str]]]:
    """Raw ``uid -> [(start, end, label name)]`` preserving file order.

    Lines before any ``#utt`` header belong to an utterance named after the
    file stem.
    """
    path = Path(path)
    out: dict[str, list] = {}
    current = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        f = line.split()
        if not f:
            continue
        if f[0] == "#utt":
            if len(f) != 2:
                raise TranscriptionError(f"{path}:{lineno}: expected '#utt <id>'")
            current = f[1]
            if current in out:
                raise TranscriptionError(f"{path}:{lineno}: duplicate utterance {current}")
            out[current] = []
            continue
        if current is None:
            current = path.stem
            out[current] = []
        if len(f) != 3:
            raise TranscriptionError(f"{path}:{lineno}: expected '<start> <end> <label>'")
        try:
            s, e = int(f[0]), int(f[1])
        except ValueError:
            raise TranscriptionError(f"{path}:{lineno}: non-integer frame") from None
        if e <= s or s < 0:
            raise TranscriptionError(f"{path}:{lineno}: empty or negative segment")
        if alphabet is not None and f[2] not in alphabet:
            raise TranscriptionError(f"{path}:{lineno}: unknown label {f[2]!r}")
        out[current].append((s, e, f[2]))
    return out


def load_gold(path, alphabet: Alphabet) -> dict[str, SegmentPath]:
    raw = read_transcriptions(path, alphabet)
    out = {}
    for uid, segs in raw.items():
        try:
            out[uid] = SegmentPath(tuple(Segment(s, e, alphabet.index(l)) for s, e, l in segs))
        except ValueError as exc:
            raise TranscriptionError(f"{path}: utterance {uid}: {exc}") from None
    return out


def alphabet_from_transcriptions(*paths) -> Alphabet:
    names = []
    seen = set()
    for p in paths:
        for segs in read_transcriptions(p).values():
            for _, _, l in segs:
                if l not in seen:
                    seen.add(l)
                    names.append(l)
    return Alphabet(sorted(names))


def read_timit_phn(path, sample_rate: int = 16000, frame_shift: float = 0.01,
                   fold: dict[str, str] | None = None) -> list[tuple[int, int, str]]:
    """TIMIT-style ``.phn`` alignment (sample offsets) as frame boundaries.

    Segments shorter than one frame after rounding are merged into their
    neighbour; ``fold`` optionally maps phone names (e.g. 61 to 39 set).
    """
    hop = sample_rate * frame_shift
    out: list[tuple[int, int, str]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        f = line.split()
        if not f:
            continue
        if len(f) != 3:
            raise TranscriptionError(f"{path}:{lineno}: expected '<begin> <end> <phone>'")
        b, e = round(int(f[0]) / hop), round(int(f[1]) / hop)
        phone = fold.get(f[2], f[2]) if fold else f[2]
        if out:
            b = out[-1][1]
        if e <= b:
            continue
        if out and out[-1][2] == phone and fold:
            out[-1] = (out[-1][0], e, phone)
        else:
            out.append((b, e, phone))
    if out and out[0][0] != 0:
        out[0] = (0, out[0][1], out[0][2])
    return out
