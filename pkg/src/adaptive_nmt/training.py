"""AdaDelta optimisation and the epoch loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import make_batches
from .evaluation import corpus_bleu
from .model import ModelConfig, batch_loss
from .numerics import DimensionError, DomainError, Tape
from .search import greedy_decode_batch

log = logging.getLogger(__name__)


@dataclass
class AdadeltaState:
    rho: float = 0.95
    eps: float = 1e-6
    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)  # E[g^2]
    sq_delta: dict[str, np.ndarray] = field(default_factory=dict)  # E[dx^2]

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must be in (0, 1), got {self.rho}")
        if self.eps <= 0:
            raise DomainError(f"eps must be positive, got {self.eps}")


def adadelta_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdadeltaState) -> AdadeltaState:
    """Zeiler's AdaDelta step applied in place to ``params``."""
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        eg = state.sq_grad.get(name)
        ex = state.sq_delta.get(name)
        if eg is None:
            eg = state.sq_grad[name] = np.zeros_like(p)
            ex = state.sq_delta[name] = np.zeros_like(p)
        eg *= rho
        eg += (1 - rho) * g * g
        delta = -np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        ex *= rho
        ex += (1 - rho) * delta * delta
        p += delta
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place to global L2 norm <= ``max_norm``; returns the original norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        for name in grads:
            grads[name] = grads[name] * (max_norm / norm)
    return norm


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    dev_bleu: float | None
    updates: int
    seconds: float = 0.0

    def line(self) -> str:
        """Deterministic log line (wall time is reported separately)."""
        bleu = "-" if self.dev_bleu is None else f"{100 * self.dev_bleu:.2f}"
        return f"epoch={self.epoch}\tloss={self.mean_loss:.6f}\tdev_bleu={bleu}\tupdates={self.updates}"


@dataclass
class TrainResult:
    epochs: list[EpochLog]
    batch_losses: list[float]
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_bleu: float | None
    state: AdadeltaState


def evaluate_bleu(params, cfg: ModelConfig, pairs, max_len: int, chunk: int = 100) -> float:
    """Greedy-decode the sources of ``pairs`` (id sequences) and score against the targets."""
    hyps = []
    for k in range(0, len(pairs), chunk):
        part = pairs[k:k + chunk]
        hyps += [h.tokens for h in greedy_decode_batch(params, cfg, [s for s, _ in part], max_len)]
    return corpus_bleu(hyps, [list(t) for _, t in pairs]).bleu


def train(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    epochs: int,
    batch_size: int = 32,
    dev: Sequence[tuple[Sequence[int], Sequence[int]]] | None = None,
    state: AdadeltaState | None = None,
    decode_len: int | None = None,
    on_epoch: Callable[[EpochLog, dict], None] | None = None,
    clip_norm: float | None = 1.0,
) -> TrainResult:
    """Mini-batch training on id pairs; ``params`` is updated in place.

    After each epoch the dev set (if any) is greedy-decoded and the parameters
    with the best dev BLEU are kept.  ``on_epoch(log, params)`` runs after
    every epoch, e.g. to write a checkpoint.  Gradients whose global L2 norm
    exceeds ``clip_norm`` are rescaled to that norm before the update.
    """
    if not pairs:
        raise DomainError("cannot train on an empty corpus")
    state = AdadeltaState() if state is None else state
    decode_len = cfg.max_len if decode_len is None else decode_len
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    history, losses = [], []
    best = {k: v.copy() for k, v in params.items()}
    best_epoch, best_bleu = 0, None
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        epoch_losses = []
        for batch in make_batches(list(pairs), batch_size, seed=cfg.seed * 100_003 + epoch):
            tape = Tape()
            total = batch_loss(tape, params, cfg, batch.src, batch.src_mask, batch.tgt_in,
                               batch.tgt_out, batch.tgt_mask, training=True, rng=dropout_rng)
            loss = tape.scale(total, 1.0 / len(batch))
            grads = tape.backward(loss)
            if clip_norm is not None:
                clip_gradients(grads, clip_norm)
            adadelta_update(params, grads, state)
            epoch_losses.append(float(loss.value[0, 0]))
        losses += epoch_losses
        bleu = evaluate_bleu(params, cfg, dev, decode_len) if dev else None
        entry = EpochLog(epoch, float(np.mean(epoch_losses)), bleu, len(losses),
                         time.perf_counter() - started)
        history.append(entry)
        log.info("%s\t%.1fs", entry.line(), entry.seconds)
        if bleu is None or best_bleu is None or bleu > best_bleu:
            best = {k: v.copy() for k, v in params.items()}
            best_epoch, best_bleu = epoch, bleu
        if on_epoch is not None:
            on_epoch(entry, params)
    return TrainResult(history, losses, best, best_epoch, best_bleu, state)
