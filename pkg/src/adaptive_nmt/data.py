"""Corpus ingestion, vocabularies, batching and the synthetic insertion task."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import BOS, EOS, PAD, UNK
from .numerics import DomainError

log = logging.getLogger(__name__)

SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")


class IngestionError(ValueError):
    """Corpus files are unreadable or inconsistent."""


class Vocabulary:
    """Token/id map with ``PAD=0, UNK=1, BOS=2, EOS=3`` reserved."""

    def __init__(self, tokens: Iterable[str], coverage: float | None = None):
        self.itos = list(SPECIALS)
        self.stoi = {tok: i for i, tok in enumerate(SPECIALS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        self.coverage = coverage

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok.lower() in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def words(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return encode_sentence(self, tokens)

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        # specials are implicit: line k (1-based) holds id k - 1 + 4
        Path(path).write_text("".join(f"{w}\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.split("\n") if line])


def build_vocab(sentences: Sequence[Sequence[str]], k: int) -> Vocabulary:
    """Keep the ``k`` most frequent (lowercased) tokens; ties go to the earliest seen.

    The returned vocabulary's ``coverage`` is the fraction of corpus tokens it covers.
    """
    if k < 1:
        raise DomainError(f"vocabulary size must be >= 1, got {k}")
    counts: Counter[str] = Counter()
    first: dict[str, int] = {}
    for sent in sentences:
        for tok in sent:
            tok = tok.lower()
            counts[tok] += 1
            first.setdefault(tok, len(first))
    total = sum(counts.values())
    if total == 0:
        raise DomainError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    kept = [t for t in ranked if t not in SPECIALS][:k]
    return Vocabulary(kept, coverage=sum(counts[t] for t in kept) / total)


def encode_sentence(vocab: Vocabulary, tokens: Iterable[str]) -> list[int]:
    return [vocab.stoi.get(tok.lower(), UNK) for tok in tokens]


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]


def read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_parallel(src_path, tgt_path, max_len: int = 50) -> ParallelCorpus:
    """Read line-aligned files and drop pairs with an empty or over-long side."""
    src_lines, tgt_lines = read_lines(src_path), read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise IngestionError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}")
    pairs, dropped = [], 0
    for lineno, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        src, tgt = s.split(), t.split()
        if not src or not tgt:
            log.warning("line %d: empty sentence, pair dropped", lineno)
            dropped += 1
        elif len(src) > max_len or len(tgt) > max_len:
            dropped += 1
        else:
            pairs.append((src, tgt))
    if dropped:
        log.info("dropped %d of %d pairs", dropped, len(src_lines))
    return ParallelCorpus(pairs, dropped)


def write_lines(path, sentences: Iterable[Sequence[str]]) -> None:
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


@dataclass
class Batch:
    src: np.ndarray  # B x J ids, PAD-filled
    src_mask: np.ndarray
    tgt_in: np.ndarray  # B x (K+1), BOS-prefixed
    tgt_out: np.ndarray  # B x (K+1), EOS-terminated
    tgt_mask: np.ndarray
    index: np.ndarray  # positions of the rows in the input corpus

    def __len__(self) -> int:
        return self.src.shape[0]


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for row, s in enumerate(seqs):
        ids[row, : len(s)] = s
        mask[row, : len(s)] = True
    return ids, mask


def pad_batch(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], index=None) -> Batch:
    src, src_mask = _pad([s for s, _ in pairs])
    tgt_in, tgt_mask = _pad([[BOS, *t] for _, t in pairs])
    tgt_out, _ = _pad([[*t, EOS] for _, t in pairs])
    index = np.arange(len(pairs)) if index is None else np.asarray(index)
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, index)


def make_batches(
    pairs,
    batch_size: int,
    seed: int | None = 0,
    vocabs: tuple[Vocabulary, Vocabulary] | None = None,
) -> list[Batch]:
    """Shuffle (seeded; ``seed=None`` keeps order) and cut into padded batches.

    ``pairs`` is a :class:`ParallelCorpus` or a list of id pairs; token pairs
    are encoded with ``vocabs`` first.
    """
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    if isinstance(pairs, ParallelCorpus):
        pairs = pairs.pairs
    if vocabs is not None:
        sv, tv = vocabs
        pairs = [(encode_sentence(sv, s), encode_sentence(tv, t)) for s, t in pairs]
    order = np.arange(len(pairs))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(pairs))
    return [
        pad_batch([pairs[i] for i in chunk], chunk)
        for chunk in (order[k:k + batch_size] for k in range(0, len(pairs), batch_size))
    ]


# -- synthetic task ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """A toy translation task with target words that have no source counterpart.

    Every source symbol ``s{k}`` translates to ``t{k}``.  Some symbols are
    triggers: their translation is always followed by a fixed function word
    from ``insertion_tokens``, much like "states" following "united".  The
    triggers are chosen so that the share of source positions followed by an
    insertion is as close as possible to ``insertion_prob``.
    """

    alphabet_size: int = 26
    insertion_tokens: tuple[str, ...] = ("the", "to", "a")
    insertion_prob: float = 0.25
    seed: int = 0
    size: int = 2400
    min_len: int = 3
    max_len: int = 12
    zipf: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.insertion_prob <= 1.0:
            raise ValueError("insertion_prob must lie in [0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if set(self.insertion_tokens) & set(self.target_symbols()):
            raise ValueError("insertion tokens collide with symbol translations")
        if not self.insertion_tokens and self.insertion_prob > 0:
            raise ValueError("insertion_prob > 0 needs at least one insertion token")

    def source_symbols(self) -> list[str]:
        return [f"s{k}" for k in range(self.alphabet_size)]

    def target_symbols(self) -> list[str]:
        return [f"t{k}" for k in range(self.alphabet_size)]

    def frequencies(self) -> np.ndarray:
        w = 1.0 / np.arange(1, self.alphabet_size + 1) ** self.zipf
        return w / w.sum()


@dataclass
class ToyCorpus:
    corpus: ParallelCorpus
    labels: list[list[str]]  # per target token: "A" aligned, "I" inserted
    triggers: dict[str, str] = field(default_factory=dict)  # source symbol -> inserted word

    def __len__(self) -> int:
        return len(self.corpus)


def _closest_subset(weights: np.ndarray, target: float, order: np.ndarray, resolution: int = 10_000) -> list[int]:
    """Indices whose weights sum closest to ``target`` (knapsack over a grid)."""
    units = np.round(weights * resolution).astype(np.int64)
    goal = int(round(target * resolution))
    reach = {0: ()}
    for i in order:
        for total, chosen in list(reach.items()):
            nxt = total + int(units[i])
            if nxt not in reach:
                reach[nxt] = chosen + (int(i),)
    best = min(reach, key=lambda t: (abs(t - goal), t))
    return list(reach[best])


def trigger_table(spec: SyntheticTaskSpec) -> dict[str, str]:
    rng = np.random.default_rng([spec.seed, 0])
    order = rng.permutation(spec.alphabet_size)
    if spec.insertion_prob >= 1.0:
        chosen = list(order)
    elif spec.insertion_prob <= 0.0:
        chosen = []
    else:
        chosen = _closest_subset(spec.frequencies(), spec.insertion_prob, order)
    symbols = spec.source_symbols()
    toks = spec.insertion_tokens
    return {symbols[i]: toks[k % len(toks)] for k, i in enumerate(chosen)}


def translate_symbols(spec: SyntheticTaskSpec, src: Sequence[str], triggers: dict[str, str]):
    """Target tokens and their aligned/inserted labels for one source sentence."""
    tgt, labels = [], []
    for sym in src:
        tgt.append("t" + sym[1:])
        labels.append("A")
        if sym in triggers:
            tgt.append(triggers[sym])
            labels.append("I")
    return tgt, labels


def generate_toy_corpus(spec: SyntheticTaskSpec) -> ToyCorpus:
    triggers = trigger_table(spec)
    rng = np.random.default_rng([spec.seed, 1])
    symbols = spec.source_symbols()
    freq = spec.frequencies()
    pairs, labels = [], []
    for _ in range(spec.size):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [symbols[i] for i in rng.choice(spec.alphabet_size, size=length, p=freq)]
        tgt, lab = translate_symbols(spec, src, triggers)
        pairs.append((src, tgt))
        labels.append(lab)
    return ToyCorpus(ParallelCorpus(pairs), labels, triggers)


def toy_splits(spec: SyntheticTaskSpec, sizes: tuple[int, int, int] = (2000, 200, 200)):
    """Train/dev/test corpora drawn from one generator run (same trigger rule)."""
    full = generate_toy_corpus(replace(spec, size=sum(sizes)))
    out, start = [], 0
    for n in sizes:
        out.append(ToyCorpus(ParallelCorpus(full.corpus.pairs[start:start + n]),
                             full.labels[start:start + n], full.triggers))
        start += n
    return tuple(out)


def write_labels(path, labels: Iterable[Sequence[str]]) -> None:
    write_lines(path, labels)


def read_labels(path) -> list[list[str]]:
    rows = [line.split() for line in read_lines(path)]
    for lineno, row in enumerate(rows, start=1):
        if any(flag not in ("A", "I") for flag in row):
            raise IngestionError(f"{path}:{lineno}: labels must be A or I")
    return rows
