"""Additive attention and its adaptive extension with an attention sentinel.

The adaptive variant appends one extra slot to the alignment scores.  The
softmax weight of that slot is the sentinel gate ``beta``: how much of the
context comes from the decoder's own sentinel vector instead of the source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import Annotations
from .numerics import DimensionError, Node, Tape

ATTENTION_NAMES = ("att.W_a", "att.U_a", "att.V_a")
SENTINEL_NAMES = ("sent.W_x", "sent.W_t", "sent.W_s_state", "sent.W_s_score", "sent.U_g", "sent.W_h")


def attention_nodes(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Node]:
    return {name.split(".", 1)[1]: tape.param(name, params[name]) for name in ATTENTION_NAMES}


def sentinel_nodes(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Node]:
    nodes = {name.split(".", 1)[1]: tape.param(name, params[name]) for name in SENTINEL_NAMES}
    if "sent.W_lift" in params:
        nodes["W_lift"] = tape.param("sent.W_lift", params["sent.W_lift"])
    return nodes


@dataclass
class AttentionOutput:
    c: Node  # B x 2n
    alpha: Node  # B x J
    e: Node  # B x J raw scores


@dataclass
class AdaptiveOutput:
    c_plus: Node  # B x 2n
    alpha_hat: Node  # B x (J+1), last column is the sentinel slot
    beta: Node  # B x 1
    s: Node  # sentinel, B x n'
    score: Node  # B x 1 sentinel score appended to e
    c: Node  # plain context, for inspection


def project_keys(tape: Tape, p: dict[str, Node], ann: Annotations) -> Node:
    """``U_a h_j`` for every annotation row; independent of the decoder step."""
    return tape.matmul(ann.H, p["U_a"])


def align_scores(tape: Tape, p: dict[str, Node], t_prev: Node, ann: Annotations,
                 keys: Node | None = None) -> Node:
    """Scores ``e_j = V_a . tanh(W_a t_prev + U_a h_j)`` as a ``B x J`` node."""
    if t_prev.value.shape != (ann.batch, p["W_a"].value.shape[0]):
        raise DimensionError(
            f"align_scores: state {t_prev.value.shape} does not fit W_a {p['W_a'].value.shape} "
            f"for a batch of {ann.batch}")
    if keys is None:
        keys = project_keys(tape, p, ann)
    query = tape.repeat_rows(tape.matmul(t_prev, p["W_a"]), ann.J)
    hidden = tape.tanh(tape.add(query, keys))
    return tape.reshape(tape.matmul(hidden, p["V_a"]), (ann.batch, ann.J))


def attend(tape: Tape, e: Node, ann: Annotations) -> AttentionOutput:
    """Softmax weights over real source positions and the weighted annotation sum."""
    if e.value.shape != ann.mask.shape:
        raise DimensionError(f"attend: scores {e.value.shape} vs annotations {ann.mask.shape}")
    alpha = tape.softmax(e, ann.mask)
    return AttentionOutput(tape.pool(alpha, ann.H), alpha, e)


def sentinel_state(tape: Tape, p: dict[str, Node], x: Node, t_prev: Node, t: Node) -> tuple[Node, Node]:
    """Gate ``g = sigmoid(W_x x + W_t t_prev)`` and sentinel ``s = g * tanh(W_s t)``."""
    try:
        g = tape.sigmoid(tape.linear([(x, p["W_x"]), (t_prev, p["W_t"])]))
        s = tape.hadamard(g, tape.tanh(tape.matmul(t, p["W_s_state"])))
    except DimensionError as exc:
        raise DimensionError(f"sentinel_state: {exc}") from None
    return g, s


def lift(tape: Tape, p: dict[str, Node], s: Node, width: int) -> Node:
    """Map the sentinel to the context width (identity when they already match)."""
    if "W_lift" in p:
        return tape.matmul(s, p["W_lift"])
    if s.value.shape[1] != width:
        raise DimensionError(
            f"sentinel width {s.value.shape[1]} differs from context width {width} and no W_lift is set")
    return s


def adaptive_attend(
    tape: Tape,
    p: dict[str, Node],
    e: Node,
    ann: Annotations,
    s: Node,
    t_prev: Node,
    base: AttentionOutput | None = None,
    force_score: float | None = None,
) -> AdaptiveOutput:
    """Extend the scores with the sentinel slot and mix sentinel and source context.

    The sentinel score is ``W_h . tanh(W_s_score s + U_g t_prev)``.  Passing
    ``force_score`` replaces it with a constant, e.g. ``-inf`` to switch the
    sentinel off entirely.
    """
    if base is None:
        base = attend(tape, e, ann)
    if force_score is None:
        score = tape.matmul(
            tape.tanh(tape.linear([(s, p["W_s_score"]), (t_prev, p["U_g"])])), p["W_h"])
    else:
        score = tape.constant(np.full((ann.batch, 1), float(force_score)))
    extended = tape.concat([e, score])
    mask = np.concatenate([ann.mask, np.ones((ann.batch, 1), dtype=bool)], axis=1)
    alpha_hat = tape.softmax(extended, mask)
    beta = tape.slice_cols(alpha_hat, ann.J, ann.J + 1)
    c_plus = tape.lerp(beta, base.c, lift(tape, p, s, ann.width))
    return AdaptiveOutput(c_plus, alpha_hat, beta, s, score, base.c)
