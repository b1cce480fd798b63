"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 a verification
check (gradcheck) failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import gfsid as G
from . import model as M
from . import numerics as nx
from .config import PROFILES, RunConfig, load_run_config, parse_value
from .estimators import CGBertGenerator
from .fixture import make_corpus
from .generation import GenerationConfig, to_records
from .objective import elbo_loss
from .text import DataError, build_vocab, collate, dump_jsonl, encode_pair, intent_phrase, load_dataset, read_jsonl

logger = logging.getLogger("cgbert")

EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name}", dest=f.name, default=None, metavar=f.name.upper())


def _run_config(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            try:
                overrides[f.name] = parse_value(f.name, raw)
            except ValueError as exc:
                raise UsageError(f"--{f.name}: {exc}") from None
    try:
        cfg = load_run_config(args.profile, args.config, overrides)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {exc.filename}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg.seed is None:
        raise UsageError("a seed is required (--seed N or 'seed = N' in the config file)")
    return cfg


def _require(cfg: RunConfig, *keys):
    for key in keys:
        if not getattr(cfg, key):
            raise UsageError(f"--{key} is required")


def _episode(cfg: RunConfig, examples) -> G.EpisodeSpec:
    intents = sorted({e.intent for e in examples})
    unknown = [y for y in cfg.novel_intents if y not in intents]
    if unknown:
        raise DataError(f"novel intents not present in the data: {unknown}")
    existing = cfg.existing_intents or tuple(y for y in intents if y not in cfg.novel_intents)
    return G.EpisodeSpec(existing, cfg.novel_intents, cfg.shots, cfg.seed, cfg.train_fraction)


def _split(cfg: RunConfig):
    if cfg.split:
        header = _read_split_header(cfg.split)
        d_ex, d_novel, d_test = G.split_from_records(read_jsonl(cfg.split))
        spec = G.EpisodeSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["episode"].items()})
        return spec, d_ex, d_novel, d_test
    _require(cfg, "data")
    examples = load_dataset(cfg.data)
    spec = _episode(cfg, examples)
    d_ex, d_novel, d_test = G.split_dataset(examples, spec)
    return spec, d_ex, d_novel, d_test


def _read_split_header(path):
    from .text import read_header

    header = read_header(path)
    if not header or "episode" not in header:
        raise DataError(f"{path}: missing split header")
    return header


def _gen_config(cfg: RunConfig) -> GenerationConfig:
    return GenerationConfig(
        n_samples=cfg.n_samples,
        top_k=cfg.top_k,
        beam_width=cfg.beam_width,
        max_utterance_len=cfg.max_utterance_len or None,
        length_norm=cfg.length_norm,
        seed=cfg.seed,
    )


def _load_generator(cfg: RunConfig) -> tuple[CGBertGenerator, RunConfig]:
    _require(cfg, "checkpoint")
    if not Path(cfg.checkpoint).exists():
        raise DataError(f"checkpoint not found: {cfg.checkpoint}")
    state = ckpt.load_checkpoint(cfg.checkpoint)
    return CGBertGenerator.from_state(state.model_config, state.vocab, state.params), RunConfig.from_dict(state.run_config)


# ---------------------------------------------------------------- commands


def cmd_make_fixture(cfg: RunConfig, args) -> int:
    _require(cfg, "out")
    corpus = make_corpus(per_intent=args.per_intent, seed=cfg.seed)
    header = {"config_digest": cfg.digest(), "seed": cfg.seed, "per_intent": args.per_intent}
    dump_jsonl(({"text": e.text, "intent": e.intent} for e in corpus), cfg.out, header=header)
    print(f"wrote {len(corpus)} utterances to {cfg.out}")
    return 0


def cmd_train_gen(cfg: RunConfig, args) -> int:
    _require(cfg, "data", "checkpoint")
    spec, d_ex, d_novel, d_test = _split(cfg)
    train = d_ex + d_novel
    log_path = cfg.out or cfg.checkpoint + ".log.jsonl"
    split_path = cfg.checkpoint + ".split.jsonl"
    digest = cfg.digest()
    dump_jsonl(G.split_records(d_ex, d_novel, d_test), split_path, header={"seed": cfg.seed, "episode": spec.to_dict(), "config_digest": digest})

    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps({"_header": {"config_digest": digest, "seed": cfg.seed}}, sort_keys=True) + "\n")
        gen = CGBertGenerator(
            d_h=cfg.d_h,
            n_heads=cfg.n_heads,
            n_enc_layers=cfg.n_enc_layers,
            n_dec_layers=cfg.n_dec_layers,
            d_ff=cfg.d_ff,
            max_len=cfg.max_len,
            dropout=cfg.dropout,
            z_visible=cfg.z_visible,
            min_freq=cfg.min_freq,
            lr=cfg.lr,
            batch_size=cfg.batch_size,
            n_steps=cfg.n_steps,
            kl_anneal_steps=cfg.kl_anneal_steps,
            recon_reduction=cfg.recon_reduction,
            random_state=cfg.seed,
            log_callback=lambda rec: log.write(json.dumps(rec, sort_keys=True) + "\n"),
        )
        gen.fit([e.text for e in train], [e.intent for e in train])
    stored = replace(cfg, data="", checkpoint="", out="", generated="", split="").to_dict()
    stored["config_digest"] = digest
    ckpt.save_checkpoint(cfg.checkpoint, gen.params_, gen.vocab_, gen.config_, stored)
    last = gen.history_[-1] if gen.history_ else {}
    print(json.dumps({"checkpoint": cfg.checkpoint, "log": log_path, "split": split_path, "final": last}))
    return 0


def cmd_generate(cfg: RunConfig, args) -> int:
    _require(cfg, "out")
    gen, trained_cfg = _load_generator(cfg)
    if not cfg.split and not cfg.data:
        candidate = cfg.checkpoint + ".split.jsonl"
        if Path(candidate).exists():
            cfg = replace(cfg, split=candidate)
    spec, d_ex, d_novel, _ = _split(cfg)
    for intent in spec.novel_intents:
        if all(t not in gen.vocab_ for t in intent_phrase(intent).split()):
            raise DataError(f"intent {intent!r} has no in-vocabulary words")
    sets = gen.generate(spec.novel_intents, exclude=[e.text for e in d_ex + d_novel], gen_config=_gen_config(cfg))
    dump_jsonl(to_records(sets), cfg.out, header={"config_digest": cfg.digest(), "seed": cfg.seed})
    summary = {
        "out": cfg.out,
        "per_intent": {s.intent: {"count": len(s), "candidates": s.n_candidates, "unique_ratio": round(s.unique_ratio, 4)} for s in sets},
        "unique_ratio": round(sum(len(s) for s in sets) / max(1, sum(s.n_candidates for s in sets)), 4),
        "bigram_novelty": G.ngram_novelty(sets, G.seeds_by_intent(d_novel), 2),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_augment_eval(cfg: RunConfig, args) -> int:
    _require(cfg, "out")
    spec, d_ex, d_novel, d_test = _split(cfg)
    generator = None
    if cfg.clf_init == "generator":
        generator, _ = _load_generator(cfg)
    elif cfg.clf_init != "random":
        raise UsageError("clf_init must be 'generator' or 'random'")
    train = d_ex + d_novel
    if args.baseline:
        method, aug = "copy", d_ex + G.oversample_copy(d_novel, G.max_per_class(d_ex))
    else:
        _require(cfg, "generated")
        method = "generate"
        generated = [G.Example(r["text"], r["intent"]) for r in read_jsonl(cfg.generated)]
        stray = {e.intent for e in generated} - set(spec.novel_intents)
        if stray:
            raise DataError(f"{cfg.generated}: generated labels outside the novel intents: {sorted(stray)}")
        if cfg.balance_augmented:
            aug = d_ex + G.balanced_pool(d_novel, generated, G.max_per_class(d_ex))
        else:
            aug = train + generated
    clf = G.train_classifier(
        aug,
        spec.joint_intents,
        init_from=generator,
        lr=cfg.clf_lr,
        epochs=cfg.clf_epochs,
        batch_size=cfg.clf_batch_size,
        d_h=cfg.d_h,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_enc_layers,
        d_ff=cfg.d_ff,
        max_len=cfg.max_len,
        dropout=cfg.dropout,
        random_state=cfg.seed,
    )
    metrics = G.evaluate(clf, d_test, spec)
    report = {
        "overall": metrics.overall,
        "seen": metrics.seen,
        "novel": metrics.novel,
        "h_mean": metrics.h_mean,
        "per_intent": metrics.per_intent,
        "config_digest": cfg.digest(),
        "method": method,
        "seed": cfg.seed,
        "n_train": len(aug),
        "n_test": len(d_test),
    }
    Path(cfg.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({k: report[k] for k in ("method", "overall", "seen", "novel", "h_mean")}))
    return 0


def tiny_gradcheck(seed: int, n_coords: int = 100) -> float:
    """Gradient check of the full negative ELBO on a tiny model, two-example batch."""
    corpus = make_corpus(per_intent=3, seed=seed)
    with nx.precision(np.float64):
        # a handful of utterances keeps the vocabulary near 30 words
        vocab = build_vocab([(e.text, e.intent) for e in corpus[:5]], min_freq=1)
        cfg = M.ModelConfig(
            vocab_size=len(vocab), d_h=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=32, max_len=24, dropout=0.0
        )
        rng = np.random.default_rng(seed)
        params = M.init_params(cfg, rng)
        # move off the symmetric initial point so every term has a generic gradient
        for p in params.values():
            p.data += rng.normal(0.0, 0.1, p.shape)
        pair = [corpus[0], corpus[3]]  # two different intents
        batch = collate([encode_pair(intent_phrase(e.intent), e.text, vocab, cfg.max_len) for e in pair])
        eps = rng.standard_normal((2, cfg.d_h))
        return nx.grad_check(
            lambda: elbo_loss(batch, params, cfg, 1.0, eps)[0], params, h=1e-5, n_coords=n_coords, rng=rng
        )


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    err = tiny_gradcheck(cfg.seed, args.coords)
    ok = err < 1e-4
    print(json.dumps({"max_relative_error": err, "coords": args.coords, "pass": ok}))
    return 0 if ok else EXIT_CHECK


def cmd_export_embeddings(cfg: RunConfig, args) -> int:
    _require(cfg, "data", "out")
    gen, _ = _load_generator(cfg)
    examples = load_dataset(cfg.data)
    emb = gen.sentence_embeddings([e.text for e in examples])
    records = (
        {"text": e.text, "intent": e.intent, "embedding": [round(float(v), 6) for v in row]}
        for e, row in zip(examples, emb)
    )
    dump_jsonl(records, cfg.out, header={"config_digest": cfg.digest(), "seed": cfg.seed})
    print(f"wrote {len(examples)} embeddings to {cfg.out}")
    return 0


COMMANDS = {
    "train-gen": (cmd_train_gen, "train the conditional generator on existing + few-shot data"),
    "generate": (cmd_generate, "generate utterances for the novel intents"),
    "augment-eval": (cmd_augment_eval, "train and evaluate an intent classifier on augmented data"),
    "gradcheck": (cmd_gradcheck, "check autodiff gradients against finite differences"),
    "export-embeddings": (cmd_export_embeddings, "write encoder [CLS] embeddings as JSON-lines"),
    "make-fixture": (cmd_make_fixture, "write the toy-grammar corpus"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cgbert", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "augment-eval":
            p.add_argument("--baseline", action="store_true", help="copy-oversample the few-shots instead")
        if name == "make-fixture":
            p.add_argument("--per-intent", dest="per_intent", type=int, default=150)
        if name == "gradcheck":
            p.add_argument("--coords", type=int, default=100)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        cfg = _run_config(args)
        return handler(cfg, args)
    except UsageError as exc:
        print(f"cgbert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ckpt.CheckpointError) as exc:
        print(f"cgbert {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"cgbert {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
