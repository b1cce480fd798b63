import time

import numpy as np

from cgbert import model as M
from cgbert.text import collate, encode_pair, intent_phrase


def tiny_config(vocab_size, **kw):
    base = dict(d_h=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=32, max_len=24, dropout=0.0)
    base.update(kw)
    return M.ModelConfig(vocab_size=vocab_size, **base)


def random_params(cfg, seed=0, scale=0.0):
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, rng)
    if scale:
        for p in params.values():
            p.data += rng.normal(0.0, scale, p.shape).astype(p.data.dtype)
    return params


def make_batch(examples, vocab, max_len=24):
    return collate([encode_pair(intent_phrase(e.intent), e.text, vocab, max_len) for e in examples])


def micro_model(seed, init_std=1.0):
    """Six-token vocabulary (four specials plus "a", "b") with random weights."""
    from cgbert.text import Vocab, SPECIALS

    vocab = Vocab(list(SPECIALS) + ["a", "b"])
    cfg = M.ModelConfig(
        vocab_size=6, d_h=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=16, max_len=6, dropout=0.0, init_std=init_std
    )
    return cfg, vocab, random_params(cfg, seed=seed, scale=0.5)


def brute_force_best(params, cfg, vocab, intent, z, length=3):
    """Exhaustive argmax over every token sequence of ``length`` steps ([SEP] ends a sequence early)."""
    import itertools

    from cgbert.generation import sequence_logprob
    from cgbert.text import SEP_ID

    outcomes = set()
    for seq in itertools.product(range(len(vocab)), repeat=length):
        if SEP_ID in seq:
            cut = seq.index(SEP_ID)
            outcomes.add((seq[:cut], True))
        else:
            outcomes.add((seq, False))
    scored = [(sequence_logprob(params, cfg, vocab, intent, z, ids, fin), ids, fin) for ids, fin in outcomes]
    scored.sort(key=lambda s: (-s[0], s[1], not s[2]))
    return scored


ACCEPTANCE_LINES: list[str] = []


class criterion:
    """Context manager recording one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, {}

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self.details

    def __exit__(self, exc_type, exc, tb):
        self.details["time"] = f"{time.perf_counter() - self._t0:.1f}s"
        info = " ".join(f"{k}={v}" for k, v in self.details.items())
        verdict = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number:>2} {verdict}  {self.title}  [{info}]"
        if exc_type is not None:
            line += f"  {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False
