"""Encoder-decoder translation model in baseline and adaptive-attention modes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import (
    AdaptiveOutput,
    AttentionOutput,
    adaptive_attend,
    align_scores,
    attend,
    attention_nodes,
    project_keys,
    sentinel_nodes,
    sentinel_state,
)
from .encoder import Annotations, encode
from .layers import DropoutConfig, dropout_apply, embed, gru_nodes, gru_step, init_embedding, init_gru, uniform_init
from .numerics import DomainError, Node, Tape

MODES = ("baseline", "adaptive")
PAD, UNK, BOS, EOS = 0, 1, 2, 3


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "adaptive"
    src_vocab: int = 16
    tgt_vocab: int = 16
    emb_dim: int = 32
    hidden_dim: int = 64  # decoder state width; each encoder direction gets half
    dropout_rate: float = 0.2
    max_len: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.hidden_dim <= 0 or self.hidden_dim % 2:
            raise ValueError(f"hidden_dim must be a positive even number, got {self.hidden_dim}")
        if self.emb_dim <= 0:
            raise ValueError(f"emb_dim must be positive, got {self.emb_dim}")
        if min(self.src_vocab, self.tgt_vocab) <= EOS:
            raise ValueError("vocabularies must include the four reserved tokens")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def enc_dim(self) -> int:
        return self.hidden_dim // 2

    @property
    def adaptive(self) -> bool:
        return self.mode == "adaptive"

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(asdict(self).items()))

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(types)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        casts = {"int": int, "float": float, "str": str}
        return cls(**{k: casts[types[k]](v) for k, v in values.items()})


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded uniform(-0.08, 0.08) weights and zero biases.

    The parameters shared with the baseline are drawn first, so a baseline and
    an adaptive model with the same seed agree on every common tensor.
    """
    rng = np.random.default_rng(cfg.seed)
    d, n, h = cfg.emb_dim, cfg.enc_dim, cfg.hidden_dim
    params = {
        "src_emb": init_embedding(rng, cfg.src_vocab, d),
        "tgt_emb": init_embedding(rng, cfg.tgt_vocab, d),
    }
    params.update(init_gru(rng, "enc_fwd", d, n))
    params.update(init_gru(rng, "enc_bwd", d, n))
    params["init.W_init"] = uniform_init(rng, 2 * n, h)
    params.update(init_gru(rng, "dec", d + 2 * n, h))
    params["att.W_a"] = uniform_init(rng, h, h)
    params["att.U_a"] = uniform_init(rng, 2 * n, h)
    params["att.V_a"] = uniform_init(rng, h, 1)
    params["out.W_p"] = uniform_init(rng, h, cfg.tgt_vocab)
    if cfg.adaptive:
        params["sent.W_x"] = uniform_init(rng, d + 2 * n, h)
        params["sent.W_t"] = uniform_init(rng, h, h)
        params["sent.W_s_state"] = uniform_init(rng, h, h)
        params["sent.W_s_score"] = uniform_init(rng, h, h)
        params["sent.U_g"] = uniform_init(rng, h, h)
        params["sent.W_h"] = uniform_init(rng, h, 1)
    return params


def count_params(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


@dataclass
class Bound:
    """Parameter nodes of one model registered on one tape."""

    tgt_emb: Node
    dec: dict[str, Node]
    att: dict[str, Node]
    sent: dict[str, Node] | None
    W_p: Node
    W_init: Node


def bind(tape: Tape, params: dict[str, np.ndarray], cfg: ModelConfig) -> Bound:
    if cfg.adaptive and "sent.W_x" not in params:
        raise DomainError("adaptive mode needs sentinel parameters")
    return Bound(
        tgt_emb=tape.param("tgt_emb", params["tgt_emb"]),
        dec=gru_nodes(tape, params, "dec"),
        att=attention_nodes(tape, params),
        sent=sentinel_nodes(tape, params) if cfg.adaptive else None,
        W_p=tape.param("out.W_p", params["out.W_p"]),
        W_init=tape.param("init.W_init", params["init.W_init"]),
    )


@dataclass
class StepTrace:
    log_probs: Node  # B x tgt_vocab
    weights: Node  # alpha (B x J) or alpha_hat (B x (J+1))
    beta: Node | None  # B x 1, adaptive mode only


def init_decoder_state(tape: Tape, bound: Bound, ann: Annotations) -> Node:
    """``t_0 = tanh(W_init . mean_j h_j)`` over the real source positions."""
    lengths = ann.mask.sum(axis=1, keepdims=True)
    mean = tape.pool(tape.constant(ann.mask / lengths), ann.H)
    return tape.tanh(tape.matmul(mean, bound.W_init))


def decode_step(
    tape: Tape,
    bound: Bound,
    cfg: ModelConfig,
    y_prev,
    t_prev: Node,
    ann: Annotations,
    keys: Node,
    training: bool = False,
    rng: np.random.Generator | None = None,
    force_score: float | None = None,
) -> tuple[StepTrace, Node]:
    """One decoder step for every row of the batch; returns the trace and ``t_i``."""
    y_prev = np.asarray(y_prev, dtype=np.int64).reshape(-1)
    e = align_scores(tape, bound.att, t_prev, ann, keys)
    base: AttentionOutput = attend(tape, e, ann)
    x = tape.concat([embed(tape, bound.tgt_emb, y_prev), base.c])
    t = gru_step(tape, bound.dec, x, t_prev)
    if cfg.adaptive:
        _, s = sentinel_state(tape, bound.sent, x, t_prev, t)
        out: AdaptiveOutput = adaptive_attend(tape, bound.sent, e, ann, s, t_prev, base, force_score)
        context, weights, beta = out.c_plus, out.alpha_hat, out.beta
    else:
        context, weights, beta = base.c, base.alpha, None
    hidden = dropout_apply(tape, tape.add(context, t), DropoutConfig(cfg.dropout_rate, cfg.seed), training, rng)
    log_probs = tape.log_softmax(tape.matmul(hidden, bound.W_p))
    return StepTrace(log_probs, weights, beta), t


def prepare_source(tape: Tape, params, cfg: ModelConfig, src, src_mask=None):
    """Encode the source and set up everything the decoder steps reuse."""
    ann = encode(tape, params, src, src_mask)
    bound = bind(tape, params, cfg)
    keys = project_keys(tape, bound.att, ann)
    return bound, ann, keys, init_decoder_state(tape, bound, ann)


def batch_loss(
    tape: Tape,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src: np.ndarray,
    src_mask: np.ndarray,
    tgt_in: np.ndarray,
    tgt_out: np.ndarray,
    tgt_mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    force_score: float | None = None,
) -> Node:
    """Summed negative log-likelihood of the padded targets (1x1 node)."""
    bound, ann, keys, t = prepare_source(tape, params, cfg, src, src_mask)
    terms = []
    for i in range(tgt_in.shape[1]):
        trace, t = decode_step(tape, bound, cfg, tgt_in[:, i], t, ann, keys, training, rng, force_score)
        terms.append(tape.nll(trace.log_probs, tgt_out[:, i], tgt_mask[:, i].astype(np.float64)))
    total = terms[0]
    for term in terms[1:]:
        total = tape.add(total, term)
    return total


def teacher_forcing(tgt) -> tuple[np.ndarray, np.ndarray]:
    """Decoder inputs ``[BOS, y_1..y_K]`` and outputs ``[y_1..y_K, EOS]``."""
    tgt = [int(t) for t in tgt]
    return np.array([BOS] + tgt), np.array(tgt + [EOS])


def sentence_loss(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src,
    tgt,
    tape: Tape | None = None,
    force_score: float | None = None,
) -> Node:
    """``-log P(tgt | src)`` including the end-of-sentence prediction."""
    if len(src) == 0 or len(tgt) == 0:
        raise DomainError("source and target must be non-empty")
    if len(src) > cfg.max_len or len(tgt) > cfg.max_len:
        raise DomainError(f"sentence longer than max_len={cfg.max_len}")
    tape = Tape() if tape is None else tape
    tgt_in, tgt_out = teacher_forcing(tgt)
    src = np.asarray(src, dtype=np.int64).reshape(1, -1)
    ones = np.ones((1, tgt_in.size), dtype=bool)
    return batch_loss(tape, params, cfg, src, np.ones(src.shape, dtype=bool),
                      tgt_in.reshape(1, -1), tgt_out.reshape(1, -1), ones, force_score=force_score)
