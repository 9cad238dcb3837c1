"""Embeddings, GRU cell and output dropout on top of the tape.

Matrices use the row-vector convention: a layer computes ``x @ W`` with
``W`` shaped ``(in, out)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, DomainError, Node, Tape

INIT_SCALE = 0.08
GRU_GATES = ("z", "r", "h")


def uniform_init(rng: np.random.Generator, rows: int, cols: int, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(rows, cols))


def init_embedding(rng, vocab_size: int, dim: int) -> np.ndarray:
    return uniform_init(rng, vocab_size, dim)


def init_gru(rng, prefix: str, in_dim: int, hidden: int) -> dict[str, np.ndarray]:
    """GRU weights named ``{prefix}.W_z``, ``{prefix}.U_z``, ``{prefix}.b_z`` and so on."""
    params = {}
    for gate in GRU_GATES:
        params[f"{prefix}.W_{gate}"] = uniform_init(rng, in_dim, hidden)
        params[f"{prefix}.U_{gate}"] = uniform_init(rng, hidden, hidden)
        params[f"{prefix}.b_{gate}"] = np.zeros((1, hidden))
    return params


def gru_nodes(tape: Tape, params: dict[str, np.ndarray], prefix: str) -> dict[str, Node]:
    return {
        f"{kind}_{gate}": tape.param(f"{prefix}.{kind}_{gate}", params[f"{prefix}.{kind}_{gate}"])
        for gate in GRU_GATES
        for kind in ("W", "U", "b")
    }


def embed(tape: Tape, table: Node, ids) -> Node:
    """Look up rows of an embedding table; one output row per id."""
    return tape.gather_rows(table, ids)


def gru_step(tape: Tape, p: dict[str, Node], x: Node, h_prev: Node) -> Node:
    """One GRU update, ``h = (1 - z) * h_prev + z * candidate``."""
    n = p["U_z"].value.shape[0]
    if x.value.shape[1] != p["W_z"].value.shape[0] or h_prev.value.shape[1] != n:
        raise DimensionError(
            f"gru_step: input {x.value.shape} / state {h_prev.value.shape} do not fit "
            f"W {p['W_z'].value.shape}, U {p['U_z'].value.shape}")
    z = tape.sigmoid(tape.linear([(x, p["W_z"]), (h_prev, p["U_z"])], p["b_z"]))
    r = tape.sigmoid(tape.linear([(x, p["W_r"]), (h_prev, p["U_r"])], p["b_r"]))
    candidate = tape.tanh(tape.linear([(x, p["W_h"]), (tape.hadamard(r, h_prev), p["U_h"])], p["b_h"]))
    return tape.lerp(z, h_prev, candidate)


@dataclass(frozen=True)
class DropoutConfig:
    rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout_apply(
    tape: Tape,
    x: Node,
    cfg: DropoutConfig,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Node:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time only."""
    if not training or cfg.rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    keep = rng.random(x.value.shape) >= cfg.rate
    mask = tape.constant(keep / (1.0 - cfg.rate))
    return tape.hadamard(x, mask)
