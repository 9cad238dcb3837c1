"""Greedy and beam-search decoding with per-token sentinel-gate traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import _pad
from .encoder import Annotations
from .model import BOS, EOS, ModelConfig, decode_step, prepare_source
from .numerics import DomainError, Tape


@dataclass
class Hypothesis:
    tokens: list[int]  # emitted ids, EOS excluded
    score: float = 0.0  # summed log-probabilities, EOS included when finished
    state: np.ndarray | None = None
    trace: list[float] = field(default_factory=list)  # beta per emitted token (adaptive)
    finished: bool = False
    eos_beta: float | None = None

    @property
    def steps(self) -> int:
        return len(self.tokens) + int(self.finished)

    @property
    def normalized(self) -> float:
        return self.score / max(self.steps, 1)


def greedy_decode_batch(params, cfg: ModelConfig, srcs: Sequence[Sequence[int]], max_len: int) -> list[Hypothesis]:
    """Arg-max decoding of several sentences at once (lowest id wins ties)."""
    tape = Tape(record=False)
    src, mask = _pad(srcs)
    bound, ann, keys, t = prepare_source(tape, params, cfg, src, mask)
    hyps = [Hypothesis([]) for _ in srcs]
    y = np.full(len(srcs), BOS)
    active = np.ones(len(srcs), dtype=bool)
    for _ in range(max_len):
        trace, t = decode_step(tape, bound, cfg, y, t, ann, keys)
        logp = trace.log_probs.value
        y = logp.argmax(axis=1)
        for b in np.flatnonzero(active):
            hyp = hyps[b]
            hyp.score += float(logp[b, y[b]])
            hyp.state = t.value[b].copy()
            beta = float(trace.beta.value[b, 0]) if trace.beta is not None else None
            if y[b] == EOS:
                hyp.finished, hyp.eos_beta = True, beta
                active[b] = False
            else:
                hyp.tokens.append(int(y[b]))
                if beta is not None:
                    hyp.trace.append(beta)
        if not active.any():
            break
    return hyps


def greedy_decode(params, cfg: ModelConfig, src: Sequence[int], max_len: int) -> Hypothesis:
    return greedy_decode_batch(params, cfg, [src], max_len)[0]


def _tile(tape: Tape, ann: Annotations, keys, rows: int):
    H = tape.constant(np.tile(ann.H.value, (rows, 1)))
    return Annotations(H, np.tile(ann.mask, (rows, 1))), tape.constant(np.tile(keys.value, (rows, 1)))


def beam_search(
    params,
    cfg: ModelConfig,
    src: Sequence[int],
    beam: int = 10,
    max_len: int = 50,
) -> tuple[Hypothesis, list[Hypothesis]]:
    """Beam search; returns the best hypothesis and the n-best list.

    The beam shrinks as hypotheses finish.  Finished hypotheses (and live ones
    still open at ``max_len``) are ranked by score per decoding step; ties go
    to the lexicographically smaller token sequence.
    """
    if beam < 1:
        raise DomainError(f"beam must be >= 1, got {beam}")
    tape = Tape(record=False)
    bound, ann, keys, t0 = prepare_source(tape, params, cfg, np.asarray(src).reshape(1, -1))
    live = [Hypothesis([], state=t0.value[0])]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        width = beam - len(finished)
        if width <= 0 or not live:
            break
        rows = len(live)
        tiled, tiled_keys = _tile(tape, ann, keys, rows)
        y_prev = [h.tokens[-1] if h.tokens else BOS for h in live]
        t_prev = tape.constant(np.stack([h.state for h in live]))
        trace, t = decode_step(tape, bound, cfg, y_prev, t_prev, tiled, tiled_keys)
        totals = np.array([h.score for h in live])[:, None] + trace.log_probs.value
        flat = totals.reshape(-1)
        # everything tied with the width-th best survives the cut, then exact ordering
        if flat.size > width:
            cutoff = np.partition(flat, flat.size - width)[flat.size - width]
            candidates = np.flatnonzero(flat >= cutoff)
        else:
            candidates = np.arange(flat.size)
        vocab = totals.shape[1]
        ranked = sorted(candidates, key=lambda c: (-flat[c], live[c // vocab].tokens + [c % vocab]))
        next_live = []
        for c in ranked[:width]:
            parent, tok = divmod(int(c), vocab)
            beta = float(trace.beta.value[parent, 0]) if trace.beta is not None else None
            hyp = Hypothesis(list(live[parent].tokens), float(flat[c]), t.value[parent].copy(),
                             list(live[parent].trace))
            if tok == EOS:
                hyp.finished, hyp.eos_beta = True, beta
                finished.append(hyp)
            else:
                hyp.tokens.append(tok)
                if beta is not None:
                    hyp.trace.append(beta)
                next_live.append(hyp)
        live = next_live
    pool = finished + live
    pool.sort(key=lambda h: (-h.normalized, h.tokens))
    return pool[0], pool
