"""Deterministic synthetic L2 corpus.

Randomness comes from numpy's PCG64 bit generator seeded with the integer
``CorpusConfig.seed`` (``np.random.Generator(np.random.PCG64(seed))``); one
stream is consumed in a fixed order: phone prototypes first, then each
utterance in turn (length, canonical phones, error draws, durations, noise),
then the split permutation.

Each utterance is a canonical phone sequence, an annotation derived from it
by random substitutions and deletions, and frame features generated from the
*annotation*: every spoken phone emits ``duration`` frames of its prototype
vector plus Gaussian noise.

File format: JSON lines, one object per utterance with keys ``id``,
``canonical``, ``annotation`` (lists of phone ids, blank excluded) and
``frames`` (list of ``T`` lists of ``d_in`` floats). Floats are written with
``repr`` precision so a read-back is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

SPLITS = ("train", "dev", "test")
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class CorpusConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class CorpusFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}: record {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    n_phones: int = 12
    n_utterances: int = 1000
    min_len: int = 4
    max_len: int = 12
    p_sub: float = 0.15
    p_del: float = 0.02
    p_ins: float = 0.0
    min_frames: int = 2
    max_frames: int = 5
    d_in: int = 16
    noise: float = 0.3
    prototype_scale: float = 1.0

    def __post_init__(self):
        for name in ("p_sub", "p_del", "p_ins"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise CorpusConfigError(name, f"rate must lie in [0, 1], got {value}")
        if self.p_sub + self.p_del + self.p_ins > 1.0:
            raise CorpusConfigError("p_sub", "p_sub + p_del + p_ins must not exceed 1")
        if self.n_phones < 2:
            raise CorpusConfigError("n_phones", "need at least 2 phones for substitutions")
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusConfigError("min_len", "need 1 <= min_len <= max_len")
        if not 2 <= self.min_frames <= self.max_frames:
            raise CorpusConfigError("min_frames", "need 2 <= min_frames <= max_frames")
        if self.n_utterances < 0:
            raise CorpusConfigError("n_utterances", "must be non-negative")
        if self.d_in < 1:
            raise CorpusConfigError("d_in", "must be positive")
        if self.noise < 0:
            raise CorpusConfigError("noise", "must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise CorpusConfigError(sorted(unknown)[0], "unknown field")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Utterance:
    id: str
    canonical: list
    annotation: list
    frames: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.canonical == other.canonical
            and self.annotation == other.annotation
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def ctc_feasible(seq, n_frames: int) -> bool:
    repeats = sum(1 for a, b in zip(seq, seq[1:]) if a == b)
    return n_frames >= len(seq) + repeats


def _corrupt(canonical, cfg, rng):
    annotation = []
    for phone in canonical:
        u = rng.random()
        if u < cfg.p_sub:
            other = int(rng.integers(1, cfg.n_phones))
            annotation.append(other if other < phone else other + 1)
        elif u < cfg.p_sub + cfg.p_del:
            continue
        else:
            annotation.append(phone)
        if cfg.p_ins and rng.random() < cfg.p_ins:
            annotation.append(int(rng.integers(1, cfg.n_phones + 1)))
    return annotation


def _make_utterance(index, cfg, prototypes, rng):
    n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    canonical = [int(x) for x in rng.integers(1, cfg.n_phones + 1, size=n)]
    annotation = _corrupt(canonical, cfg, rng)
    while not annotation:
        annotation = _corrupt(canonical, cfg, rng)
    durations = rng.integers(cfg.min_frames, cfg.max_frames + 1, size=len(annotation))
    while not ctc_feasible(annotation, int(durations.sum())):
        durations = rng.integers(cfg.min_frames, cfg.max_frames + 1, size=len(annotation))
    rows = np.repeat(prototypes[np.asarray(annotation) - 1], durations, axis=0)
    frames = rows + cfg.noise * rng.standard_normal(rows.shape)
    return Utterance(f"utt{index:05d}", canonical, annotation, frames)


def generate(cfg: CorpusConfig) -> dict:
    """Build the corpus and split it 70/10/20 into train/dev/test."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    prototypes = cfg.prototype_scale * rng.standard_normal((cfg.n_phones, cfg.d_in))
    utts = [_make_utterance(i, cfg, prototypes, rng) for i in range(cfg.n_utterances)]
    order = rng.permutation(len(utts))
    n_train = int(round(SPLIT_FRACTIONS[0] * len(utts)))
    n_dev = int(round(SPLIT_FRACTIONS[1] * len(utts)))
    bounds = {"train": (0, n_train), "dev": (n_train, n_train + n_dev), "test": (n_train + n_dev, len(utts))}
    return {
        name: [utts[k] for k in sorted(order[lo:hi].tolist())] for name, (lo, hi) in bounds.items()
    }


def utterance_to_json(utt: Utterance) -> str:
    return json.dumps(
        {
            "id": utt.id,
            "canonical": list(map(int, utt.canonical)),
            "annotation": list(map(int, utt.annotation)),
            "frames": utt.frames.tolist(),
        },
        separators=(",", ":"),
    )


def write_corpus(utts: Iterable[Utterance], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utts:
            fh.write(utterance_to_json(utt) + "\n")
            n += 1
    return n


def _parse_ids(value, key, path, line):
    if not isinstance(value, list) or not all(isinstance(x, int) and x > 0 for x in value):
        raise CorpusFormatError(path, line, f"{key!r} must be a list of positive phone ids")
    return value


def read_corpus(path) -> list:
    utts = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusFormatError(path, line_no, "record is not an object")
            missing = {"id", "canonical", "annotation", "frames"} - set(rec)
            if missing:
                raise CorpusFormatError(path, line_no, f"missing field(s) {sorted(missing)}")
            try:
                frames = np.array(rec["frames"], dtype=float)
            except (TypeError, ValueError):
                raise CorpusFormatError(path, line_no, "frames are not a numeric matrix") from None
            if frames.ndim != 2 or frames.shape[0] == 0:
                raise CorpusFormatError(path, line_no, "frames must be a non-empty T x d matrix")
            utts.append(
                Utterance(
                    str(rec["id"]),
                    _parse_ids(rec["canonical"], "canonical", path, line_no),
                    _parse_ids(rec["annotation"], "annotation", path, line_no),
                    frames,
                )
            )
    return utts


def write_splits(splits: dict, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {name: write_corpus(splits[name], out_dir / f"{name}.jsonl") for name in SPLITS}


def read_splits(corpus_dir) -> dict:
    corpus_dir = Path(corpus_dir)
    return {name: read_corpus(corpus_dir / f"{name}.jsonl") for name in SPLITS}
