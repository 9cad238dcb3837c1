"""Command-line entry point: train, translate, evaluate, analyze, gradcheck, toydata.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .data import (
    IngestionError,
    SyntheticTaskSpec,
    build_vocab,
    encode_sentence,
    load_parallel,
    read_labels,
    read_lines,
    toy_splits,
    write_labels,
    write_lines,
)
from .evaluation import (
    GateRecord,
    TraceFormatError,
    bootstrap_significance,
    corpus_bleu,
    format_bleu,
    format_delta,
    gate_analysis,
    read_gate_trace,
    write_gate_trace,
)
from .model import ModelConfig, count_params, init_params, sentence_loss
from .numerics import DomainError, grad_check
from .search import beam_search
from .training import AdadeltaState, train

log = logging.getLogger("adaptive_nmt")

USAGE, RUNTIME = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "adaptive"
    emb_dim: int = 32
    hidden_dim: int = 64
    dropout: float = 0.2
    rho: float = 0.95
    eps: float = 1e-6
    beam: int = 10
    max_len: int = 50
    decode_len: int = 50
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    src_vocab_size: int = 16000
    tgt_vocab_size: int = 16000
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    checkpoint: str = "model.ckpt"
    log: str = "train.log"

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def parse_run_config(text: str, overrides: list[str] = ()) -> RunConfig:
    """Flat ``key = value`` lines (``#`` comments); overrides are ``key=value`` strings."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, str] = {}
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            items.append((f"line {lineno}", line))
    items += [("override", o) for o in overrides]
    for where, item in items:
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"config {where}: expected 'key = value', got {item!r}")
        if key not in types:
            raise UsageError(f"config {where}: unknown key {key!r}")
        values[key] = value
    casts = {"int": int, "float": float, "str": str}
    try:
        cfg = RunConfig(**{k: casts[types[k]](v) for k, v in values.items()})
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from None
    if cfg.mode not in ("baseline", "adaptive"):
        raise UsageError(f"config: mode must be baseline or adaptive, got {cfg.mode!r}")
    if cfg.beam < 1 or cfg.epochs < 0 or cfg.batch_size < 1 or not 0 <= cfg.dropout < 1:
        raise UsageError("config: beam >= 1, epochs >= 0, batch_size >= 1 and 0 <= dropout < 1 required")
    if not 0 < cfg.rho < 1 or cfg.eps <= 0:
        raise UsageError("config: need 0 < rho < 1 and eps > 0")
    if cfg.hidden_dim <= 0 or cfg.hidden_dim % 2 or cfg.emb_dim <= 0:
        raise UsageError("config: emb_dim > 0 and an even hidden_dim > 0 required")
    if not cfg.train_src or not cfg.train_tgt:
        raise UsageError("config: train_src and train_tgt are required")
    return cfg


def load_run_config(path, overrides=()) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    cfg = parse_run_config(text, overrides)
    # relative corpus paths are taken relative to the config file
    base = Path(path).parent
    fix = {k: str(base / getattr(cfg, k)) for k in ("train_src", "train_tgt", "dev_src", "dev_tgt")
           if getattr(cfg, k) and not Path(getattr(cfg, k)).is_absolute()}
    return replace(cfg, **fix)


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.set)
    train_corpus = load_parallel(run.train_src, run.train_tgt, run.max_len)
    dev_corpus = load_parallel(run.dev_src, run.dev_tgt, run.max_len) if run.dev_src else None
    if not len(train_corpus):
        raise IngestionError("training corpus is empty after filtering")
    src_vocab = build_vocab(train_corpus.sources, run.src_vocab_size)
    tgt_vocab = build_vocab(train_corpus.targets, run.tgt_vocab_size)
    cfg = ModelConfig(run.mode, len(src_vocab), len(tgt_vocab), run.emb_dim, run.hidden_dim,
                      run.dropout, run.max_len, run.seed)
    params = init_params(cfg)

    def encode(corpus):
        return [(encode_sentence(src_vocab, s), encode_sentence(tgt_vocab, t)) for s, t in corpus.pairs]

    header = [f"# {line}" for line in run.to_text().splitlines()]
    header += [f"# params = {count_params(params)}", f"# train_pairs = {len(train_corpus)}",
               f"# src_coverage = {src_vocab.coverage:.6f}", f"# tgt_coverage = {tgt_vocab.coverage:.6f}"]
    print("\n".join(header), file=sys.stderr)
    print(f"{run.mode} model with {count_params(params):,} parameters")

    def progress(entry, _params):
        print(f"{entry.line()}\ttime={entry.seconds:.1f}s", file=sys.stderr)

    state = AdadeltaState(run.rho, run.eps)
    result = train(params, cfg, encode(train_corpus), run.epochs, run.batch_size,
                   dev=encode(dev_corpus) if dev_corpus else None, state=state,
                   decode_len=run.decode_len, on_epoch=progress)
    meta = {"epoch": str(result.best_epoch),
            "best_dev_bleu": "-" if result.best_bleu is None else repr(result.best_bleu)}
    ckpt_io.save_checkpoint(run.checkpoint, ckpt_io.Checkpoint(
        cfg, result.best_params, result.state, meta, src_vocab, tgt_vocab))
    Path(run.log).write_text("\n".join(header + [e.line() for e in result.epochs]) + "\n", encoding="utf-8")
    return 0


def cmd_translate(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    if args.trace and not cfg.adaptive:
        raise UsageError("--trace needs an adaptive model; this checkpoint has no sentinel")
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    if ckpt.src_vocab is None or ckpt.tgt_vocab is None:
        raise ckpt_io.CheckpointError(f"{args.checkpoint} carries no vocabularies")
    max_len = cfg.max_len if args.max_len is None else args.max_len
    outputs, records = [], []
    for idx, line in enumerate(read_lines(args.input)):
        tokens = line.split()
        if not tokens:
            outputs.append([])
            continue
        best, _ = beam_search(ckpt.params, cfg, encode_sentence(ckpt.src_vocab, tokens), args.beam, max_len)
        words = [ckpt.tgt_vocab.itos[i] for i in best.tokens]
        outputs.append(words)
        records += [GateRecord(w, b, idx, k) for k, (w, b) in enumerate(zip(words, best.trace))]
    text = "".join(" ".join(w) + "\n" for w in outputs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.trace:
        write_gate_trace(args.trace, records)
    return 0


def _read_system(path) -> list[list[str]]:
    return [line.split() for line in read_lines(path)]


def cmd_evaluate(args) -> int:
    hyps = _read_system(args.hyp)
    refs_by_file = [_read_system(p) for p in args.refs]
    files = [args.hyp, *args.refs] + ([args.compare] if args.compare else [])
    others = [_read_system(args.compare)] if args.compare else []
    counts = [len(hyps)] + [len(r) for r in refs_by_file] + [len(o) for o in others]
    if len(set(counts)) != 1:
        listing = ", ".join(f"{f} ({n} lines)" for f, n in zip(files, counts))
        raise IngestionError(f"line counts differ: {listing}")
    refs = [list(group) for group in zip(*refs_by_file)]
    report = corpus_bleu(hyps, refs)
    print(report)
    if args.compare:
        base = corpus_bleu(others[0], refs)
        sig = bootstrap_significance(others[0], hyps, refs, args.bootstrap, args.seed)
        print(f"baseline BLEU = {format_bleu(base.bleu)}")
        print(f"delta = {format_delta(base.bleu, report.bleu)}")
        print(f"p-value = {sig.p_value:.4f} ({sig.samples} resamples, one-sided)")
    return 0


def cmd_analyze(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError(f"--threshold must lie in [0, 1], got {args.threshold}")
    if args.top < 1:
        raise UsageError("--top must be >= 1")
    records = read_gate_trace(args.trace)
    labels = read_labels(args.labels) if args.labels else None
    table = gate_analysis(records, args.threshold, args.top, labels)
    print(table)
    return 0


def gradcheck_model(mode: str, seed: int = 0) -> tuple[ModelConfig, dict, list[int], list[int]]:
    """Micro model (emb 8, hidden 8, vocab 12) with a 4-word source and 3-word target.

    Weights and biases are redrawn from uniform(-0.5, 0.5): at the training
    init some gradients are ~1e-9, below finite-difference roundoff.
    """
    cfg = ModelConfig(mode, 12, 12, emb_dim=8, hidden_dim=8, dropout_rate=0.0, max_len=10, seed=seed)
    rng = np.random.default_rng([seed, 7])
    params = {k: rng.uniform(-0.5, 0.5, size=v.shape) for k, v in init_params(cfg).items()}
    src = [int(i) for i in rng.integers(4, 12, size=4)]
    tgt = [int(i) for i in rng.integers(4, 12, size=3)]
    return cfg, params, src, tgt


def run_gradcheck(step: float = 1e-3, seed: int = 0, corrupt: bool = False) -> dict[str, dict[str, float]]:
    out = {}
    for mode in ("baseline", "adaptive"):
        cfg, params, src, tgt = gradcheck_model(mode, seed)

        def build(tape, prm, cfg=cfg, src=src, tgt=tgt):
            loss = sentence_loss(prm, cfg, src, tgt, tape)
            if corrupt and tape.record:
                # negative control: the recorded tape sees an extra term the probe does not
                loss = tape.add(loss, tape.scale(tape.sum(tape.param("att.V_a", prm["att.V_a"])), 1e-2))
            return loss

        out[mode] = grad_check(build, params, step=step, seed=seed)
    return out


def cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    report = run_gradcheck(args.step, args.seed, args.corrupt)
    ok = True
    for mode, errors in report.items():
        for name, err in errors.items():
            flag = "ok" if err < args.tolerance else "FAIL"
            ok &= err < args.tolerance
            print(f"{mode}\t{name}\t{err:.3e}\t{flag}")
        print(f"{mode}\tworst\t{max(errors.values()):.3e}")
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {args.tolerance:g}, {time.perf_counter() - started:.1f}s)")
    return 0 if ok else RUNTIME


def cmd_toydata(args) -> int:
    spec = SyntheticTaskSpec(insertion_prob=args.prob, seed=args.seed)
    splits = toy_splits(spec, tuple(args.sizes))
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in zip(("train", "dev", "test"), splits):
        write_lines(out / f"{name}.src", split.corpus.sources)
        write_lines(out / f"{name}.tgt", split.corpus.targets)
        write_labels(out / f"{name}.labels", split.labels)
    (out / "toy.cfg").write_text(
        "# synthetic insertion task\n"
        "train_src = train.src\ntrain_tgt = train.tgt\n"
        "dev_src = dev.src\ndev_tgt = dev.tgt\n"
        "emb_dim = 32\nhidden_dim = 64\nepochs = 30\nbatch_size = 32\n"
        f"seed = {args.seed}\ndecode_len = 30\n",
        encoding="utf-8")
    print(f"wrote {sum(args.sizes)} pairs to {out}; triggers: "
          + ", ".join(f"{k}->{v}" for k, v in sorted(splits[0].triggers.items())))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaptive-nmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a key = value config file")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a file of source sentences")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--trace", metavar="PATH", help="write sentinel-gate records here")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU, optionally against a baseline system")
    p.add_argument("hyp")
    p.add_argument("refs", nargs="+")
    p.add_argument("--compare", metavar="BASELINE_HYP")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="frequency table of high-gate tokens")
    p.add_argument("trace")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--top", type=int, default=15)
    p.add_argument("--labels")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference check of both model modes")
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toydata", help="write the synthetic insertion corpus and a config")
    p.add_argument("outdir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prob", type=float, default=0.25)
    p.add_argument("--sizes", type=int, nargs=3, default=[2000, 200, 200], metavar=("TRAIN", "DEV", "TEST"))
    p.set_defaults(func=cmd_toydata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (IngestionError, TraceFormatError, ckpt_io.CheckpointError, DomainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
