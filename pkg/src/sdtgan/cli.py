"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import checks
from .data import ConfigurationError, CorpusConfig, encode_text, sample_batch
from .losses import NonFiniteLossError
from .metrics import StubClassifier, StubEmbedder, frechet_distance, inception_score, kl_metric, timing_report
from .models import CondTensors
from .tensor import Tensor
from .train import ProbeSet, TrainConfig, TrainState, train
from . import tsr

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("sdtgan")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file; for train the TrainConfig, otherwise flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdtgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="write a synthetic corpus config")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", type=int, default=16)
    p.add_argument("--F", type=int, default=64)
    p.add_argument("--T", type=int, default=64)

    p = sub.add_parser("train", help="train from a config JSON")
    _common(p)
    p.add_argument("--resume", default=None)
    p.add_argument("--steps", type=int, default=None, help="override total_g_steps")

    p = sub.add_parser("generate", help="write generated mels as TSR files")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="stub-embedder metrics for a checkpoint")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--out", default=None)
    p.add_argument("--reference", choices=("generated", "real"), default="generated",
                   help="'real' compares two independent real splits (noise floor)")

    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    _common(p)
    p.add_argument("--scope", choices=checks.scopes() + ["all"], default="all")
    p.add_argument("--inject-fault", default=None, metavar="CHECK",
                   help="scale one check's analytic gradient by 1.5 (harness self-test)")

    p = sub.add_parser("inspect-attention", help="dump generator attention maps as TSR files")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config and args.command != "train":
        try:
            with open(args.config) as fh:
                defaults = json.load(fh)
        except (OSError, ValueError) as err:
            parser.error(f"cannot read --config {args.config}: {err}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = set(defaults) - known
        if bad:
            parser.error(f"unknown keys in --config: {sorted(bad)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None and args.command != "train":
        args.seed = 0
    return args


def _parse_caption(caption: str, vocab_size: int) -> list[int]:
    ids = []
    for tok in caption.split():
        if not tok.startswith("tok") or not tok[3:].isdigit() or int(tok[3:]) >= vocab_size:
            vocab = " ".join(f"tok{i}" for i in range(vocab_size))
            raise UsageError(f"unknown token {tok!r}; vocabulary: {vocab}")
        ids.append(int(tok[3:]))
    if not ids:
        raise UsageError("caption is empty")
    return ids


def _caption_hash(caption: str) -> str:
    return hashlib.sha1(" ".join(caption.split()).encode()).hexdigest()[:10]


def cmd_make_corpus(args) -> int:
    if args.vocab < 2:
        raise UsageError(f"--vocab must be >= 2, got {args.vocab}")
    corpus = CorpusConfig.build(args.vocab, args.F, args.T, args.seed)
    try:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "corpus.json")
        corpus.save(path)
    except OSError as err:
        raise UsageError(f"cannot write corpus to {args.out}: {err}") from err
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train requires --config")
    try:
        cfg = TrainConfig.load(args.config)
    except (OSError, ValueError, TypeError) as err:
        raise UsageError(f"invalid config {args.config}: {err}") from err
    if args.seed is not None:
        cfg.seed = args.seed
    base = os.path.dirname(os.path.abspath(args.config))
    # relative corpus paths are read relative to the config file
    if cfg.corpus and not os.path.isabs(cfg.corpus) and not os.path.exists(cfg.corpus):
        cfg.corpus = os.path.join(base, cfg.corpus)
    cfg.checkpoint_dir = cfg.checkpoint_dir or os.path.join(base, "checkpoints")
    cfg.log_path = cfg.log_path or os.path.join(base, "train_log.jsonl")
    cfg.metrics_path = cfg.metrics_path or os.path.join(base, "metrics.jsonl")
    if args.steps is not None:
        cfg.total_g_steps = args.steps
    if not cfg.corpus or not os.path.exists(cfg.corpus):
        raise UsageError(f"corpus file not found: {cfg.corpus}")
    if args.resume and not os.path.exists(os.path.join(args.resume, "manifest.json")):
        raise UsageError(f"no checkpoint at {args.resume}")
    result = train(cfg, resume=args.resume)
    print(json.dumps({"g_steps": result.state.g_steps, "d_steps": result.state.d_steps,
                      "history": result.history}))
    return EXIT_OK


def _load_ckpt(path):
    try:
        state, manifest = TrainState.load(path)
    except (OSError, KeyError, ValueError) as err:
        raise UsageError(f"cannot load checkpoint {path}: {err}") from err
    return state, manifest


def cmd_generate(args) -> int:
    state, manifest = _load_ckpt(args.ckpt)
    cfg = state.G.cfg
    ids = _parse_caption(args.caption, manifest["vocab_size"])
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    cond = encode_text(ids, cfg.c_c, manifest["text_seed"], manifest["vocab_size"])
    conds = CondTensors.from_conds([cond])
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    stem = _caption_hash(args.caption)
    for i in range(args.n):
        z = rng.standard_normal((1, cfg.c_z)).astype(np.float32)
        t0 = time.perf_counter()
        mel = state.G.forward(Tensor(z), conds).data[0]
        ms = (time.perf_counter() - t0) * 1000.0
        path = os.path.join(args.out, f"{stem}_{i}.tsr")
        tsr.save(path, mel)
        print(f"{path}\t{ms:.1f} ms")
    return EXIT_OK


def evaluate(state: TrainState, corpus: CorpusConfig, n: int, seed: int, reference: str = "generated") -> dict:
    cfg = state.G.cfg
    batch = sample_batch(corpus, n, seed, c_c=cfg.c_c, c_z=cfg.c_z)
    if reference == "real":
        other = sample_batch(corpus, n, seed + 1, c_c=cfg.c_c, c_z=cfg.c_z).mels
    else:
        other = np.concatenate([
            state.G.forward(Tensor(batch.noises[i:i + 32]), CondTensors.from_conds(batch.conds[i:i + 32])).data
            for i in range(0, n, 32)])
    embed = StubEmbedder(corpus.F, corpus.T, 32, seed)
    classify = StubClassifier(corpus.F, corpus.T, corpus.vocab_size, seed)
    probes = ProbeSet.build(corpus, cfg, 32, seed)
    timing = timing_report(state.G, probes.conds, 10, seed)
    return {
        "fd_stub": frechet_distance(embed(batch.mels, "real"), embed(other, "generated")),
        "is_stub": inception_score(classify(other)),
        "kl_stub": kl_metric(classify(batch.mels), classify(other)),
        "alignment_energy": probes.alignment(state.G, corpus),
        "mean_ms": timing["mean_ms"],
        "params": timing["params"],
    }


def cmd_eval(args) -> int:
    state, _ = _load_ckpt(args.ckpt)
    try:
        corpus = CorpusConfig.load(args.corpus)
    except (OSError, ValueError, KeyError) as err:
        raise UsageError(f"cannot load corpus {args.corpus}: {err}") from err
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    if args.n < 33:
        print(f"warning: n={args.n} <= feature dim 32; covariance is regularized", file=sys.stderr)
    result = evaluate(state, corpus, args.n, args.seed, args.reference)
    text = json.dumps(result, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.inject_fault and args.inject_fault not in checks.REGISTRY:
        raise UsageError(f"unknown check {args.inject_fault!r}")
    rows = checks.run_scope(args.scope, args.seed, args.inject_fault)
    width = max(len(r[0]) for r in rows)
    print(f"{'check':<{width}}  {'max_rel_err':>12}  {'tol':>7}  result")
    for name, err, tol, ok in rows:
        print(f"{name:<{width}}  {err:12.3e}  {tol:7.0e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(r[3] for r in rows) else 1


def cmd_inspect_attention(args) -> int:
    from .attention import AttentionMap

    state, manifest = _load_ckpt(args.ckpt)
    cfg = state.G.cfg
    ids = _parse_caption(args.caption, manifest["vocab_size"])
    cond = encode_text(ids, cfg.c_c, manifest["text_seed"], manifest["vocab_size"])
    z = np.random.default_rng(args.seed).standard_normal((1, cfg.c_z)).astype(np.float32)
    maps: dict = {}
    state.G.forward(Tensor(z), CondTensors.from_conds([cond]), maps)
    os.makedirs(args.out, exist_ok=True)
    for stage, kinds in maps.items():
        n_cond = len(ids) if stage.endswith("word") else 1
        for kind, m in kinds.items():
            arr = np.asarray(m[0] if isinstance(m, list) else m.data[0])
            AttentionMap(arr, kind).check(n_cond=n_cond)
            path = os.path.join(args.out, f"{stage}_{kind}.tsr")
            tsr.save(path, arr)
            print(path)
    return EXIT_OK


COMMANDS = {
    "make-corpus": cmd_make_corpus,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "inspect-attention": cmd_inspect_attention,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
