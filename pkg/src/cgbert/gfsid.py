"""Generalized few-shot intent detection: splits, augmentation, classifier training, metrics."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimators import CGBertGenerator, IntentClassifier
from .generation import GenerationConfig, GeneratedSet
from .text import Example, normalize
from .validation import check_texts_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeSpec:
    existing_intents: tuple[str, ...]
    novel_intents: tuple[str, ...]
    shots: int = 5
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "existing_intents", tuple(self.existing_intents))
        object.__setattr__(self, "novel_intents", tuple(self.novel_intents))
        overlap = set(self.existing_intents) & set(self.novel_intents)
        if overlap:
            raise ValueError(f"existing and novel intents overlap: {sorted(overlap)}")
        if not self.novel_intents:
            raise ValueError("need at least one novel intent")
        if self.shots < 1:
            raise ValueError("shots must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")

    @property
    def joint_intents(self) -> tuple[str, ...]:
        return self.existing_intents + self.novel_intents

    def to_dict(self) -> dict:
        return asdict(self)


def split_dataset(full, spec: EpisodeSpec):
    """Stratified train/test split, then ``shots`` few-shot examples per novel intent.

    Returns ``(d_ex, d_novel, d_test)``.  Examples of intents outside the
    joint label space are dropped.  The same seed always gives the same split.
    """
    by_intent: dict[str, list[Example]] = defaultdict(list)
    for ex in full:
        by_intent[ex.intent].append(ex)
    missing = [y for y in spec.joint_intents if y not in by_intent]
    if missing:
        raise ValueError(f"no examples for intents {missing}")

    rng = np.random.default_rng(spec.seed)
    d_ex, d_novel, d_test = [], [], []
    for intent in sorted(spec.joint_intents):
        items = by_intent[intent]
        if intent in spec.novel_intents and len(items) <= spec.shots:
            raise ValueError(f"novel intent {intent!r} has {len(items)} examples, needs more than {spec.shots}")
        order = rng.permutation(len(items))
        n_train = int(round(spec.train_fraction * len(items)))
        train = [items[i] for i in order[:n_train]]
        d_test.extend(items[i] for i in order[n_train:])
        if intent in spec.novel_intents:
            if len(train) < spec.shots:
                raise ValueError(f"novel intent {intent!r} has only {len(train)} training examples")
            d_novel.extend(train[: spec.shots])
        else:
            d_ex.extend(train)
    return d_ex, d_novel, d_test


def split_records(d_ex, d_novel, d_test) -> list[dict]:
    out = []
    for part, items in (("existing", d_ex), ("novel", d_novel), ("test", d_test)):
        out.extend({"split": part, "text": e.text, "intent": e.intent} for e in items)
    return out


def split_from_records(records):
    parts = {"existing": [], "novel": [], "test": []}
    for rec in records:
        parts[rec["split"]].append(Example(rec["text"], rec["intent"]))
    return parts["existing"], parts["novel"], parts["test"]


def oversample_copy(d_novel, target_per_class: int) -> list[Example]:
    """Repeat each intent's few-shot examples round-robin up to ``target_per_class``."""
    by_intent: dict[str, list[Example]] = defaultdict(list)
    for ex in d_novel:
        by_intent[ex.intent].append(ex)
    out = []
    for intent, items in by_intent.items():
        if target_per_class < len(items):
            raise ValueError(f"target_per_class={target_per_class} is below the {len(items)} shots of {intent!r}")
        out.extend(items[i % len(items)] for i in range(target_per_class))
    return out


def max_per_class(examples) -> int:
    return max(Counter(e.intent for e in examples).values())


def balanced_pool(d_novel, generated, target_per_class: int) -> list[Example]:
    """Few-shots plus generated utterances, cycled up to ``target_per_class`` per intent.

    A pool that already exceeds the target is kept whole.
    """
    pool = list(d_novel) + list(generated)
    if not pool:
        return []
    return oversample_copy(pool, max(target_per_class, max_per_class(pool)))


class CopyOversampler(BaseEstimator):
    """Copy the novel intents' few-shots until they match the largest class.

    Parameters
    ----------
    novel_intents : sequence of str
    target_per_class : int, optional
        Defaults to the largest class count among the other intents.
    """

    def __init__(self, novel_intents=(), target_per_class=None):
        self.novel_intents = novel_intents
        self.target_per_class = target_per_class

    def fit_resample(self, X, y):
        texts, labels = check_texts_labels(X, y)
        novel = set(self.novel_intents)
        rest = [Example(t, lab) for t, lab in zip(texts, labels) if lab not in novel]
        shots = [Example(t, lab) for t, lab in zip(texts, labels) if lab in novel]
        target = self.target_per_class or (max_per_class(rest) if rest else max_per_class(shots))
        out = rest + oversample_copy(shots, target)
        return [e.text for e in out], [e.intent for e in out]


class GenerativeAugmenter(BaseEstimator):
    """Append generated utterances for the novel intents.

    Parameters
    ----------
    generator : CGBertGenerator
        Fitted on ``(X, y)`` during ``fit_resample`` unless already fitted.
    novel_intents : sequence of str
    gen_config : GenerationConfig, optional
    balance : bool, default=True
        Cycle each novel intent's shots and generated utterances up to the
        largest existing class, as the copy baseline does with shots alone.
        When False the generated utterances are simply appended.
    """

    def __init__(self, generator=None, novel_intents=(), gen_config=None, balance=True):
        self.generator = generator
        self.novel_intents = novel_intents
        self.gen_config = gen_config
        self.balance = balance

    def fit_resample(self, X, y):
        texts, labels = check_texts_labels(X, y)
        gen = self.generator if self.generator is not None else CGBertGenerator()
        try:
            check_is_fitted(gen, "params_")
        except Exception:
            gen.fit(texts, labels)
        self.generator_ = gen
        self.generated_sets_ = gen.generate(self.novel_intents, exclude=texts, gen_config=self.gen_config)
        extra = [Example(u, s.intent) for s in self.generated_sets_ for u in s.utterances]
        if not self.balance:
            return texts + [e.text for e in extra], labels + [e.intent for e in extra]
        novel = set(self.novel_intents)
        rest = [Example(t, lab) for t, lab in zip(texts, labels) if lab not in novel]
        shots = [Example(t, lab) for t, lab in zip(texts, labels) if lab in novel]
        target = max_per_class(rest) if rest else 0
        out = rest + balanced_pool(shots, extra, target)
        return [e.text for e in out], [e.intent for e in out]


def train_classifier(d_train, joint_intents, **params) -> IntentClassifier:
    """Fit an :class:`IntentClassifier` over the joint label space."""
    present = {e.intent for e in d_train}
    missing = [y for y in joint_intents if y not in present]
    if missing:
        raise ValueError(f"training data has no examples of {missing}")
    clf = IntentClassifier(**params)
    return clf.fit([e.text for e in d_train], [e.intent for e in d_train])


def harmonic_mean(seen, novel) -> float:
    seen = 0.0 if seen is None else float(seen)
    novel = 0.0 if novel is None else float(novel)
    if seen + novel <= 0:
        return 0.0
    return 2.0 * seen * novel / (seen + novel)


@dataclass
class Metrics:
    overall: float | None
    seen: float | None
    novel: float | None
    h_mean: float
    n_seen: int = 0
    n_novel: int = 0
    per_intent: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _accuracy(pairs):
    pairs = list(pairs)
    if not pairs:
        return None
    return 100.0 * sum(p == t for p, t in pairs) / len(pairs)


def score_predictions(y_true, y_pred, spec: EpisodeSpec) -> Metrics:
    y_true, y_pred = list(y_true), list(y_pred)
    unknown = set(y_true) - set(spec.joint_intents)
    if unknown:
        raise ValueError(f"test labels outside the joint label space: {sorted(unknown)}")
    existing = set(spec.existing_intents)
    pairs = list(zip(y_pred, y_true))
    seen_pairs = [(p, t) for p, t in pairs if t in existing]
    novel_pairs = [(p, t) for p, t in pairs if t not in existing]
    seen, novel = _accuracy(seen_pairs), _accuracy(novel_pairs)
    per_intent = {
        y: _accuracy((p, t) for p, t in pairs if t == y) for y in sorted(set(y_true))
    }
    return Metrics(
        overall=_accuracy(pairs),
        seen=seen,
        novel=novel,
        h_mean=harmonic_mean(seen, novel),
        n_seen=len(seen_pairs),
        n_novel=len(novel_pairs),
        per_intent=per_intent,
    )


def evaluate(classifier, d_test, spec: EpisodeSpec) -> Metrics:
    """Overall, seen, novel accuracy (percent) and their harmonic mean."""
    y_true = [e.intent for e in d_test]
    y_pred = classifier.predict([e.text for e in d_test]) if d_test else []
    return score_predictions(y_true, list(y_pred), spec)


def aggregate(runs) -> dict:
    """Mean and std over runs; reports both averaged h-means and h-mean of averages."""
    out = {}
    for key in ("overall", "seen", "novel", "h_mean"):
        vals = np.array([getattr(m, key) or 0.0 for m in runs], dtype=float)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    out["h_mean_of_means"] = harmonic_mean(out["seen"]["mean"], out["novel"]["mean"])
    out["runs"] = len(runs)
    return out


def _ngrams(text: str, n: int) -> set:
    words = normalize(text)
    return {tuple(words[i : i + n]) for i in range(len(words) - n + 1)}


def ngram_novelty(generated, seeds, n: int) -> float | None:
    """Average percentage of distinct generated n-grams absent from that intent's seeds.

    ``generated`` is a mapping intent -> utterances or a list of
    :class:`GeneratedSet`; ``seeds`` maps intent -> few-shot utterances.
    Intents without any generated n-gram are skipped; None if none remain.
    """
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    if not isinstance(generated, dict):
        generated = {s.intent: list(s.utterances) for s in generated}
    scores = []
    for intent, utterances in generated.items():
        gen_grams = set().union(*(_ngrams(u, n) for u in utterances)) if utterances else set()
        if not gen_grams:
            continue
        seed_grams = set().union(*(_ngrams(u, n) for u in seeds.get(intent, ()))) if seeds.get(intent) else set()
        scores.append(100.0 * len(gen_grams - seed_grams) / len(gen_grams))
    return float(np.mean(scores)) if scores else None


def seeds_by_intent(d_novel) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for e in d_novel:
        out[e.intent].append(e.text)
    return dict(out)


def run_episode(
    full,
    spec: EpisodeSpec,
    method: str,
    generator: CGBertGenerator | None = None,
    gen_config: GenerationConfig | None = None,
    classifier_params: dict | None = None,
    generated: list[GeneratedSet] | None = None,
    balance: bool = True,
):
    """Build the augmented training set for ``method`` ("copy" or "generate"), train, evaluate.

    ``generator`` must be fitted on ``d_ex + d_novel`` for "generate"; it also
    initialises the classifier encoder when given.  Precomputed ``generated``
    sets skip generation.  With ``balance`` the novel shots and generated
    utterances are cycled up to the largest existing class.  Returns ``(metrics, generated_sets)``.
    """
    d_ex, d_novel, d_test = split_dataset(full, spec)
    train = d_ex + d_novel
    sets = None
    if method == "copy":
        aug = d_ex + oversample_copy(d_novel, max_per_class(d_ex))
    elif method == "generate":
        if generated is None:
            if generator is None:
                raise ValueError("the generate method needs a fitted generator or generated sets")
            generated = generator.generate(spec.novel_intents, exclude=[e.text for e in train], gen_config=gen_config)
        sets = generated
        extra = [Example(u, s.intent) for s in sets for u in s.utterances]
        if balance:
            aug = d_ex + balanced_pool(d_novel, extra, max_per_class(d_ex))
        else:
            aug = train + extra
    else:
        raise ValueError(f"unknown method {method!r}; expected 'copy' or 'generate'")
    params = dict(classifier_params or {})
    params.setdefault("random_state", spec.seed)
    if generator is not None:
        params.setdefault("init_from", generator)
    clf = train_classifier(aug, spec.joint_intents, **params)
    return evaluate(clf, d_test, spec), sets
