"""Prior sampling and beam-search decoding of utterances for given intents."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import numerics as nx
from .text import CLS_ID, PAD_ID, SEP_ID, UNK_ID, Vocab, collate, intent_phrase, normalize, pack_prefix


@dataclass(frozen=True)
class GenerationConfig:
    n_samples: int = 10  # latent draws per intent
    top_k: int = 20  # beams kept per draw
    beam_width: int = 20
    max_utterance_len: int | None = None  # generated tokens incl. [SEP]; None fills max_len
    length_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.top_k < 1:
            raise ValueError("n_samples and top_k must be at least 1")
        if self.top_k > self.beam_width:
            raise ValueError(f"top_k={self.top_k} exceeds beam_width={self.beam_width}")


@dataclass(frozen=True)
class Beam:
    token_ids: tuple[int, ...]
    log_prob: float
    finished: bool
    text: str = ""


@dataclass
class GeneratedSet:
    intent: str
    utterances: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    n_candidates: int = 0

    def __len__(self):
        return len(self.utterances)

    @property
    def unique_ratio(self) -> float:
        return len(self.utterances) / self.n_candidates if self.n_candidates else 0.0


DEFAULT_EXCLUDE = (PAD_ID, UNK_ID, CLS_ID)


def _intent_ids(intent_text: str, vocab: Vocab) -> list[int]:
    ids = vocab.ids(normalize(intent_text))
    if not ids or all(i == UNK_ID for i in ids):
        raise ValueError(f"intent {intent_text!r} has no in-vocabulary words")
    return ids


def next_token_logprobs(params, cfg: M.ModelConfig, intent_ids, prefixes, z) -> np.ndarray:
    """Log-probabilities [n_prefixes, V] of the token following each equal-length prefix."""
    packed = [pack_prefix(intent_ids, p) for p in prefixes]
    batch = collate(packed)
    with nx.no_grad():
        H0 = M.embed(batch, params)
        logits = M.decode_forward(np.asarray(z, dtype=nx.get_dtype()), H0, batch, params, cfg).data
    last = logits[:, batch.width - 1, :].astype(np.float64)
    last = last - last.max(axis=-1, keepdims=True)
    return last - np.log(np.exp(last).sum(axis=-1, keepdims=True))


def beam_search(
    params,
    cfg: M.ModelConfig,
    vocab: Vocab,
    intent_text: str,
    z,
    beam_width: int = 20,
    max_utterance_len: int | None = None,
    length_norm: bool = False,
    exclude_ids=DEFAULT_EXCLUDE,
) -> list[Beam]:
    """Beam search over the decoder conditioned on ``intent_text`` and latent ``z``.

    Beams finish on [SEP] or after ``max_utterance_len`` generated tokens
    (unfinished beams are returned with ``finished=False``).  Ranking is by
    summed token log-probability, or its per-token average with
    ``length_norm``.  Ties go to the lexicographically smaller id sequence.
    """
    intent_ids = _intent_ids(intent_text, vocab)
    room = cfg.max_len - (len(intent_ids) + 2)
    steps = room if max_utterance_len is None else min(max_utterance_len, room)
    if steps < 1:
        raise ValueError("intent leaves no room for an utterance")

    allowed = np.ones(len(vocab), dtype=bool)
    allowed[list(exclude_ids)] = False
    allowed_ids = np.flatnonzero(allowed)

    def rank(ids, score, finished):
        n = len(ids) + int(finished)
        return score / n if length_norm and n else score

    pool = [Beam((), 0.0, False)]
    for _ in range(steps):
        live = [b for b in pool if not b.finished]
        if not live:
            break
        logp = next_token_logprobs(params, cfg, intent_ids, [b.token_ids for b in live], z)[:, allowed_ids]
        candidates = [b for b in pool if b.finished]
        for b, row in zip(live, logp):
            order = np.lexsort((allowed_ids, -row))[:beam_width]
            for j in order:
                tok = int(allowed_ids[j])
                if tok == SEP_ID:
                    candidates.append(Beam(b.token_ids, b.log_prob + float(row[j]), True))
                else:
                    candidates.append(Beam(b.token_ids + (tok,), b.log_prob + float(row[j]), False))
        candidates.sort(key=lambda c: (-rank(c.token_ids, c.log_prob, c.finished), c.token_ids, not c.finished))
        pool = candidates[:beam_width]

    out = []
    for b in pool:
        words = [vocab.itos[i] for i in b.token_ids if i not in (PAD_ID, CLS_ID, UNK_ID)]
        out.append(Beam(b.token_ids, b.log_prob, b.finished, " ".join(words)))
    out.sort(key=lambda c: (-rank(c.token_ids, c.log_prob, c.finished), c.token_ids, not c.finished))
    return out


def sequence_logprob(params, cfg: M.ModelConfig, vocab: Vocab, intent_text: str, z, token_ids, finished: bool) -> float:
    """Teacher-forced log-probability of ``token_ids`` (plus [SEP] when ``finished``)."""
    intent_ids = _intent_ids(intent_text, vocab)
    seq = list(token_ids) + ([SEP_ID] if finished else [])
    batch = collate([pack_prefix(intent_ids, seq)])
    with nx.no_grad():
        H0 = M.embed(batch, params)
        logits = M.decode_forward(np.asarray(z, dtype=nx.get_dtype()), H0, batch, params, cfg).data[0]
    logits = logits.astype(np.float64)
    t1 = len(intent_ids) + 2
    total = 0.0
    for j, tok in enumerate(seq):
        row = logits[t1 - 1 + j]
        row = row - row.max()
        total += float(row[tok] - np.log(np.exp(row).sum()))
    return total


def generate_for_intent(
    params,
    cfg: M.ModelConfig,
    vocab: Vocab,
    intent: str,
    train_utterances,
    gen: GenerationConfig,
    rng: np.random.Generator,
) -> GeneratedSet:
    """Sample latents from the prior, keep each draw's top beams, drop known and repeated utterances."""
    known = {" ".join(normalize(u)) for u in train_utterances}
    phrase = intent_phrase(intent)
    best: dict[str, float] = {}
    n_candidates = 0
    for _ in range(gen.n_samples):
        z = rng.standard_normal(cfg.latent_dim)
        beams = beam_search(
            params, cfg, vocab, phrase, z, gen.beam_width, gen.max_utterance_len, gen.length_norm
        )[: gen.top_k]
        n_candidates += len(beams)
        for b in beams:
            if not b.finished or not b.text or b.text in known:
                continue
            if b.text not in best or b.log_prob > best[b.text]:
                best[b.text] = b.log_prob
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    result = GeneratedSet(
        intent=intent,
        utterances=[t for t, _ in ranked],
        scores=[s for _, s in ranked],
        n_candidates=n_candidates,
    )
    if not result.utterances:
        warnings.warn(f"no new utterances generated for intent {intent!r}", RuntimeWarning, stacklevel=2)
    return result


def generate_dataset(
    params, cfg: M.ModelConfig, vocab: Vocab, novel_intents, train_utterances, gen: GenerationConfig
) -> list[GeneratedSet]:
    """One :class:`GeneratedSet` per novel intent.

    Each intent draws from its own stream seeded by ``(gen.seed, index)`` so
    intents can be generated independently without changing the output.
    """
    train_utterances = list(train_utterances)
    return [
        generate_for_intent(
            params, cfg, vocab, intent, train_utterances, gen, np.random.default_rng([gen.seed, i])
        )
        for i, intent in enumerate(novel_intents)
    ]


def to_records(sets) -> list[dict]:
    return [
        {"text": text, "intent": s.intent, "score": round(score, 6), "source": "generated"}
        for s in sets
        for text, score in zip(s.utterances, s.scores)
    ]
