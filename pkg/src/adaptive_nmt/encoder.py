"""Bidirectional GRU encoder producing one annotation row per source word."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import embed, gru_nodes, gru_step
from .numerics import DomainError, Node, Tape


@dataclass
class Annotations:
    """Source annotations for a batch of ``B`` sentences padded to length ``J``.

    ``H`` has ``B*J`` rows; row ``b*J + j`` is ``[forward_j ; backward_j]`` of
    sentence ``b``.  For a single sentence this is the plain ``J x 2n`` matrix.
    """

    H: Node
    mask: np.ndarray  # B x J, True on real tokens

    @property
    def batch(self) -> int:
        return self.mask.shape[0]

    @property
    def J(self) -> int:
        return self.mask.shape[1]

    @property
    def width(self) -> int:
        return self.H.value.shape[1]

    def rows(self) -> np.ndarray:
        """Annotation values as a ``B x J x 2n`` array."""
        return self.H.value.reshape(self.batch, self.J, self.width)


def _as_batch(src) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(src, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids.reshape(1, -1)
    return ids, np.ones(ids.shape, dtype=bool)


def encode(tape: Tape, params: dict[str, np.ndarray], src, mask: np.ndarray | None = None) -> Annotations:
    """Run forward and backward GRUs from zero states over ``src`` (ids, 1-D or ``B x J``).

    Padded positions (``mask`` False) leave the recurrent state untouched, so
    the backward pass starts at each sentence's real last word.
    """
    ids, full = _as_batch(src)
    mask = full if mask is None else np.asarray(mask, dtype=bool).reshape(ids.shape)
    batch, length = ids.shape
    if length == 0 or not mask.any(axis=1).all():
        raise DomainError("cannot encode an empty source sentence")

    table = tape.param("src_emb", params["src_emb"])
    fwd = gru_nodes(tape, params, "enc_fwd")
    bwd = gru_nodes(tape, params, "enc_bwd")
    n = fwd["U_z"].value.shape[0]
    padded = not mask.all()
    keep = [tape.constant(mask[:, j:j + 1].astype(np.float64)) if padded else None
            for j in range(length)]

    xs = [embed(tape, table, ids[:, j]) for j in range(length)]

    def run(p, order):
        h = tape.constant(np.zeros((batch, n)))
        states = [None] * length
        for j in order:
            new = gru_step(tape, p, xs[j], h)
            h = tape.lerp(keep[j], h, new) if padded and not mask[:, j].all() else new
            states[j] = h
        return states

    forward = run(fwd, range(length))
    backward = run(bwd, range(length - 1, -1, -1))
    parts = [part for j in range(length) for part in (forward[j], backward[j])]
    H = tape.reshape(tape.concat(parts), (batch * length, 2 * n))
    return Annotations(H, mask)
