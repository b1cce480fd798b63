"""Word-level vocabulary, intent+utterance packing and dataset I/O."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Example:
    text: str
    intent: str


def normalize(text: str) -> list[str]:
    return text.lower().split()


def intent_phrase(intent: str) -> str:
    """Human-readable phrase for an intent label: ``RateBook`` / ``rate_book`` -> ``rate book``."""
    spaced = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", " ", intent)
    return " ".join(re.split(r"[\s_\-]+", spaced.strip())).lower()


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def ids(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(w, UNK_ID) for w in words]

    def to_bytes(self) -> bytes:
        return "\n".join(self.itos).encode("utf-8") + b"\n"

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Vocab":
        return cls(raw.decode("utf-8").splitlines())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_bytes(Path(path).read_bytes())


def build_vocab(corpus, min_freq: int = 1) -> Vocab:
    """Vocabulary over utterances and intent phrases.

    ``corpus`` items are plain strings or ``(text, intent)`` pairs /
    :class:`Example`; for pairs the intent phrase is counted too.  Order is
    frequency descending, ties lexicographic.
    """
    counts: Counter[str] = Counter()
    n = 0
    for item in corpus:
        n += 1
        if isinstance(item, str):
            counts.update(normalize(item))
        else:
            text, intent = (item.text, item.intent) if isinstance(item, Example) else item
            counts.update(normalize(text))
            counts.update(normalize(intent_phrase(intent)))
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    words = [w for w, c in counts.items() if c >= min_freq and w not in SPECIALS]
    words.sort(key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIALS) + words)


@dataclass(frozen=True)
class PackedInput:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    t1_len: int
    t2_len: int

    @property
    def length(self) -> int:
        return len(self.token_ids)


def pack_ids(intent_ids: Sequence[int], utterance_ids: Sequence[int], max_len: int) -> PackedInput:
    """Layout ``[CLS] L.. [SEP] X.. [SEP]``; the utterance is right-truncated to fit."""
    t1 = len(intent_ids) + 2
    if t1 > max_len - 1:
        raise ValueError(f"intent of {len(intent_ids)} tokens does not fit max_len={max_len}")
    room = max_len - t1 - 1
    x = list(utterance_ids)[:room]
    tokens = [CLS_ID, *intent_ids, SEP_ID, *x, SEP_ID]
    t2 = len(x) + 1
    return PackedInput(
        token_ids=tuple(tokens),
        segment_ids=(0,) * t1 + (1,) * t2,
        position_ids=tuple(range(t1 + t2)),
        t1_len=t1,
        t2_len=t2,
    )


def pack_prefix(intent_ids: Sequence[int], prefix_ids: Sequence[int]) -> PackedInput:
    """Partial layout ``[CLS] L.. [SEP] X_1..X_j`` used during decoding (no closing [SEP])."""
    t1 = len(intent_ids) + 2
    tokens = [CLS_ID, *intent_ids, SEP_ID, *prefix_ids]
    t2 = len(prefix_ids)
    return PackedInput(tuple(tokens), (0,) * t1 + (1,) * t2, tuple(range(t1 + t2)), t1, t2)


def encode_pair(intent_text: str, utterance: str, vocab: Vocab, max_len: int) -> PackedInput:
    intent_words, words = normalize(intent_text), normalize(utterance)
    if not intent_words or not words:
        raise ValueError("intent and utterance must be non-empty")
    return pack_ids(vocab.ids(intent_words), vocab.ids(words), max_len)


def encode_single(utterance: str, vocab: Vocab, max_len: int) -> PackedInput:
    """Utterance-only layout ``[CLS] X.. [SEP]`` for classification."""
    words = normalize(utterance)
    if not words:
        raise ValueError("utterance must be non-empty")
    ids = vocab.ids(words)[: max_len - 2]
    tokens = (CLS_ID, *ids, SEP_ID)
    n = len(tokens)
    return PackedInput(tokens, (0,) * n, tuple(range(n)), n, 0)


def decode_ids(ids: Sequence[int], vocab: Vocab, t1_len: int | None = None) -> str:
    """Turn ids back into a space-joined string.

    With ``t1_len`` the ids are a full packed sequence and decoding covers the
    utterance region only.  Decoding stops at the first [SEP] in that region;
    other special tokens are dropped.
    """
    words = []
    ids = list(ids)
    start = t1_len if t1_len is not None else 0
    for i in ids:
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} out of range for vocabulary of size {len(vocab)}")
    for i in ids[start:]:
        if i == SEP_ID:
            break
        if i in (PAD_ID, CLS_ID, UNK_ID):
            continue
        words.append(vocab.itos[i])
    return " ".join(words)


@dataclass
class Batch:
    """Right-padded stack of packed inputs."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    lengths: np.ndarray
    t1_lens: np.ndarray
    t2_lens: np.ndarray

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def width(self) -> int:
        return self.token_ids.shape[1]


def collate(inputs: Sequence[PackedInput]) -> Batch:
    if not inputs:
        raise ValueError("empty batch")
    width = max(p.length for p in inputs)
    b = len(inputs)
    tok = np.full((b, width), PAD_ID, dtype=np.int64)
    seg = np.zeros((b, width), dtype=np.int64)
    pos = np.tile(np.arange(width, dtype=np.int64), (b, 1))
    for r, p in enumerate(inputs):
        tok[r, : p.length] = p.token_ids
        seg[r, : p.length] = p.segment_ids
    return Batch(
        token_ids=tok,
        segment_ids=seg,
        position_ids=pos,
        lengths=np.array([p.length for p in inputs]),
        t1_lens=np.array([p.t1_len for p in inputs]),
        t2_lens=np.array([p.t2_len for p in inputs]),
    )


# ---------------------------------------------------------------- JSON-lines


def read_jsonl(path) -> list[dict]:
    """Parse JSON-lines, skipping blank lines and ``{"_header": ...}`` records."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if "_header" in obj:
                continue
            obj["_line"] = lineno
            records.append(obj)
    return records


def read_header(path) -> dict | None:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        return None
    return obj.get("_header") if isinstance(obj, dict) else None


def load_dataset(path) -> list[Example]:
    out = []
    for rec in read_jsonl(path):
        text, intent = rec.get("text"), rec.get("intent")
        if not isinstance(text, str) or not isinstance(intent, str) or not text.strip() or not intent.strip():
            raise DataError(f"{path}:{rec['_line']}: record needs non-empty string fields 'text' and 'intent'")
        out.append(Example(text, intent))
    if not out:
        raise DataError(f"{path}: no examples")
    return out


def dump_jsonl(records: Iterable[dict], path, header: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"_header": header}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
