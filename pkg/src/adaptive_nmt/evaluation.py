"""Corpus BLEU, paired bootstrap significance and sentinel-gate analysis."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import DomainError

MAX_ORDER = 4


def _norm(tokens: Sequence) -> tuple:
    return tuple(t.lower() if isinstance(t, str) else t for t in tokens)


def _ngrams(tokens: tuple, n: int) -> Counter:
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def sentence_stats(hyp: Sequence, refs: Sequence[Sequence]) -> np.ndarray:
    """Sufficient statistics ``[matches_1..4, totals_1..4, hyp_len, ref_len]``."""
    hyp = _norm(hyp)
    refs = [_norm(r) for r in refs]
    if not refs:
        raise DomainError("every sentence needs at least one reference")
    stats = np.zeros(2 * MAX_ORDER + 2)
    for n in range(1, MAX_ORDER + 1):
        counts = _ngrams(hyp, n)
        best: Counter = Counter()
        for ref in refs:
            best |= _ngrams(ref, n)
        stats[n - 1] = sum(min(c, best[g]) for g, c in counts.items())
        stats[MAX_ORDER + n - 1] = max(len(hyp) - n + 1, 0)
    stats[-2] = len(hyp)
    stats[-1] = _closest_ref_len(len(hyp), [len(r) for r in refs])
    return stats


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    zero_match: bool = False

    def __str__(self) -> str:
        prec = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        note = " (no matches for some n-gram order)" if self.zero_match else ""
        return (f"BLEU = {100 * self.bleu:.1f}, {prec} (BP={self.brevity_penalty:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len}){note}")


def bleu_from_stats(stats: np.ndarray) -> BleuReport:
    matches, totals = stats[:MAX_ORDER], stats[MAX_ORDER:2 * MAX_ORDER]
    hyp_len, ref_len = int(stats[-2]), int(stats[-1])
    precisions = [m / t if t > 0 else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    zero = min(matches) == 0
    bleu = 0.0 if zero or bp == 0.0 else bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len, zero)


def _as_multi(refs: Sequence) -> list[list[Sequence]]:
    """Accept one reference per sentence or a list of references per sentence."""
    out = []
    for r in refs:
        if len(r) and not isinstance(r[0], (str, int, np.integer)):
            out.append(list(r))
        else:
            out.append([r])
    return out


def corpus_bleu(hyps: Sequence[Sequence], refs: Sequence) -> BleuReport:
    """Case-insensitive corpus-level 4-gram BLEU with closest-reference brevity penalty."""
    refs = _as_multi(refs)
    if len(hyps) != len(refs):
        raise DomainError(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    stats = sum((sentence_stats(h, r) for h, r in zip(hyps, refs)), np.zeros(2 * MAX_ORDER + 2))
    return bleu_from_stats(stats)


@dataclass
class SignificanceResult:
    p_value: float
    samples: int
    delta: float  # observed BLEU(B) - BLEU(A)
    mean_delta: float
    delta_low: float  # 2.5th percentile of resampled deltas
    delta_high: float  # 97.5th percentile


def _bleu_rows(stats: np.ndarray) -> np.ndarray:
    """Vectorised BLEU of many summed-statistics rows."""
    matches, totals = stats[:, :MAX_ORDER], stats[:, MAX_ORDER:2 * MAX_ORDER]
    hyp, ref = stats[:, -2], stats[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(matches > 0, np.log(np.where(matches > 0, matches, 1) / np.where(totals > 0, totals, 1)), -np.inf)
        log_bp = np.where(hyp < ref, 1.0 - ref / np.where(hyp > 0, hyp, 1), 0.0)
        out = np.exp(log_bp + logp.mean(axis=1))
    out[(matches == 0).any(axis=1) | (hyp == 0)] = 0.0
    return out


def bootstrap_significance(hyps_a, hyps_b, refs, samples: int = 1000, seed: int = 0) -> SignificanceResult:
    """One-sided paired bootstrap for "system B beats system A".

    ``p_value`` is the share of resampled test sets on which B does not
    score above A (ties count against B).
    """
    if samples < 100:
        raise DomainError(f"need at least 100 resamples, got {samples}")
    refs = _as_multi(refs)
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise DomainError(f"sentence counts differ: {len(hyps_a)}, {len(hyps_b)}, {len(refs)}")
    if not refs:
        raise DomainError("cannot resample an empty test set")
    sa = np.stack([sentence_stats(h, r) for h, r in zip(hyps_a, refs)])
    sb = np.stack([sentence_stats(h, r) for h, r in zip(hyps_b, refs)])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(refs), size=(samples, len(refs)))
    counts = np.apply_along_axis(np.bincount, 1, idx, minlength=len(refs)).astype(np.float64)
    bleu_a, bleu_b = _bleu_rows(counts @ sa), _bleu_rows(counts @ sb)
    deltas = bleu_b - bleu_a
    observed = bleu_from_stats(sb.sum(0)).bleu - bleu_from_stats(sa.sum(0)).bleu
    return SignificanceResult(
        p_value=float(np.mean(bleu_b <= bleu_a)),
        samples=samples,
        delta=observed,
        mean_delta=float(deltas.mean()),
        delta_low=float(np.percentile(deltas, 2.5)),
        delta_high=float(np.percentile(deltas, 97.5)),
    )


# -- sentinel gate analysis --------------------------------------------------


@dataclass(frozen=True)
class GateRecord:
    token: str
    beta: float
    sentence: int
    step: int

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"gate value {self.beta} outside [0, 1]")


@dataclass
class GateTable:
    rows: list[tuple[str, int]]
    threshold: float
    passing: int  # records with beta >= threshold
    class_means: dict[str, float] | None = None

    def __str__(self) -> str:
        return format_gate_table(self)


def gate_analysis(
    records: Iterable[GateRecord],
    threshold: float = 0.9,
    top_n: int = 15,
    labels: Sequence[Sequence[str]] | None = None,
) -> GateTable:
    """Most frequent tokens among those predicted with ``beta >= threshold``.

    With per-sentence ``labels`` (``A``/``I`` by step) the mean gate value of
    each label class is reported as well; steps beyond a sentence's labels
    are left out of the means.
    """
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold must lie in [0, 1], got {threshold}")
    records = list(records)
    counts: Counter[str] = Counter(r.token for r in records if r.beta >= threshold)
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    means = None
    if labels is not None:
        groups: dict[str, list[float]] = {}
        for r in records:
            if r.sentence < len(labels) and r.step < len(labels[r.sentence]):
                groups.setdefault(labels[r.sentence][r.step], []).append(r.beta)
        means = {k: float(np.mean(v)) for k, v in sorted(groups.items())}
    return GateTable(rows, threshold, sum(counts.values()), means)


def format_gate_table(table: GateTable, columns: int = 3) -> str:
    """Aligned table of (word, count) pairs laid out ``columns`` pairs per line."""
    if not table.rows:
        body = "(no tokens at or above the threshold)"
    else:
        width = max(len(w) for w, _ in table.rows)
        cells = [f"{w:<{width}} {c:>7,}" for w, c in table.rows]
        body = "\n".join(" | ".join(cells[i:i + columns]) for i in range(0, len(cells), columns))
    lines = [f"tokens with gate >= {table.threshold:g}: {table.passing}", body]
    if table.class_means is not None:
        lines += [f"mean gate [{k}]: {v:.4f}" for k, v in table.class_means.items()]
    return "\n".join(lines)


def gate_table_records(table: GateTable) -> str:
    return "".join(f"{w}\t{c}\n" for w, c in table.rows)


def write_gate_trace(path, records: Iterable[GateRecord]) -> None:
    Path(path).write_text(
        "".join(f"{r.sentence}\t{r.step}\t{r.token}\t{r.beta:.6f}\n" for r in records),
        encoding="utf-8")


class TraceFormatError(ValueError):
    pass


def read_gate_trace(path) -> list[GateRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 4:
                raise ValueError("expected 4 tab-separated fields")
            records.append(GateRecord(parts[2], float(parts[3]), int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise TraceFormatError(f"{path}:{lineno}: malformed trace line ({exc})") from None
    return records


def format_bleu(value: float) -> str:
    """BLEU on the 0-100 scale with one decimal."""
    return f"{100 * value:.1f}"


def format_delta(bleu_a: float, bleu_b: float) -> str:
    """Signed difference of the two printed scores, e.g. ``+0.8``."""
    delta = round(100 * bleu_b, 1) - round(100 * bleu_a, 1)
    return f"{delta:+.1f}"


def metric_records(report: BleuReport) -> str:
    lines = [("bleu", 100 * report.bleu)]
    lines += [(f"p{n}", p) for n, p in enumerate(report.precisions, start=1)]
    lines += [("bp", report.brevity_penalty), ("hyp_len", report.hyp_len), ("ref_len", report.ref_len)]
    return "".join(f"{k}\t{v}\n" for k, v in lines)
