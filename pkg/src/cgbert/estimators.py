"""Scikit-learn style estimators: the conditional generator and the intent classifier."""

from __future__ import annotations

import json
import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import model as M
from . import numerics as nx
from .generation import GenerationConfig, generate_dataset
from .objective import LossBreakdown, elbo_loss, elbo_step, kl_schedule
from .text import Vocab, build_vocab, collate, encode_pair, encode_single, intent_phrase
from .validation import check_random_state, check_texts, check_texts_labels

logger = logging.getLogger(__name__)


def _batches(n, batch_size, rng):
    """Endless stream of index batches, reshuffled every pass over the data."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


class CGBertGenerator(BaseEstimator, TransformerMixin):
    """Intent-conditioned variational utterance generator.

    Parameters
    ----------
    d_h, n_heads, n_enc_layers, n_dec_layers, d_ff, max_len : int
        Architecture sizes.  ``d_h`` is also the latent size.
    dropout : float
        Dropout on attention weights and feed-forward outputs while training.
    z_visible : bool
        Whether intent and utterance rows may attend to the latent slot.
    min_freq : int
        Minimum corpus frequency for a word to enter the vocabulary.
    lr, batch_size, n_steps : training schedule (Adam).
    kl_anneal_steps : int
        Linear KL warm-up length; 0 keeps the KL weight at 1 throughout.
    recon_reduction : {"mean", "sum"}
        Reconstruction averaged per utterance token, or summed per utterance.
    random_state : int
        Master seed; initialisation, batching and noise derive from it.
    log_callback : callable, optional
        Called with ``{step, kl, recon, total}`` after every step.
    """

    def __init__(
        self,
        d_h=64,
        n_heads=4,
        n_enc_layers=2,
        n_dec_layers=2,
        d_ff=256,
        max_len=32,
        dropout=0.1,
        z_visible=True,
        min_freq=1,
        lr=1e-3,
        batch_size=16,
        n_steps=2000,
        kl_anneal_steps=0,
        recon_reduction="mean",
        random_state=0,
        log_callback=None,
    ):
        self.d_h = d_h
        self.n_heads = n_heads
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.d_ff = d_ff
        self.max_len = max_len
        self.dropout = dropout
        self.z_visible = z_visible
        self.min_freq = min_freq
        self.lr = lr
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.kl_anneal_steps = kl_anneal_steps
        self.recon_reduction = recon_reduction
        self.random_state = random_state
        self.log_callback = log_callback

    def _model_config(self, vocab_size):
        return M.ModelConfig(
            vocab_size=vocab_size,
            d_h=self.d_h,
            n_heads=self.n_heads,
            n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            d_ff=self.d_ff,
            max_len=self.max_len,
            dropout=self.dropout,
            z_visible=self.z_visible,
        )

    def _pack(self, texts, labels):
        return [encode_pair(intent_phrase(lab), t, self.vocab_, self.max_len) for t, lab in zip(texts, labels)]

    def fit(self, X, y):
        """Train on utterances ``X`` labelled with intents ``y``."""
        texts, labels = check_texts_labels(X, y)
        seed = check_random_state(self.random_state)
        if self.recon_reduction not in ("mean", "sum"):
            raise ValueError(f"recon_reduction must be 'mean' or 'sum', got {self.recon_reduction!r}")
        init_ss, batch_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)

        self.vocab_ = build_vocab(list(zip(texts, labels)), self.min_freq)
        self.config_ = self._model_config(len(self.vocab_))
        self.params_ = M.init_params(self.config_, np.random.default_rng(init_ss))
        self.intents_ = sorted(set(labels))
        packed = self._pack(texts, labels)

        opt = nx.Adam(self.params_, lr=self.lr)
        batch_rng, noise_rng = np.random.default_rng(batch_ss), np.random.default_rng(noise_ss)
        stream = _batches(len(packed), self.batch_size, batch_rng)
        self.history_ = []
        for step in range(1, self.n_steps + 1):
            idx = next(stream)
            batch = collate([packed[i] for i in idx])
            weight = kl_schedule(step, self.kl_anneal_steps)
            loss, grads = elbo_step(
                batch, self.params_, self.config_, weight, noise_rng, reduction=self.recon_reduction
            )
            opt.step(grads)
            record = loss.as_record(step)
            self.history_.append(record)
            if self.log_callback is not None:
                self.log_callback(record)
            if step % 200 == 0:
                logger.info("step %d %s", step, json.dumps(record))
        nx.zero_grad(self.params_)
        return self

    @classmethod
    def from_state(cls, config: M.ModelConfig, vocab: Vocab, params, **overrides):
        """Rebuild a fitted generator from a stored config, vocabulary and parameters."""
        arch = {k: getattr(config, k) for k in ("d_h", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_len", "dropout", "z_visible")}
        est = cls(**arch, **overrides)
        est.config_, est.vocab_, est.params_ = config, vocab, params
        est.intents_ = []
        est.history_ = []
        return est

    def loss(self, X, y, random_state=0) -> LossBreakdown:
        """Negative ELBO over ``(X, y)`` in evaluation mode (no dropout, fixed noise seed).

        ``recon`` is always reported per token, whatever the training reduction.
        """
        check_is_fitted(self, "params_")
        texts, labels = check_texts_labels(X, y)
        packed = self._pack(texts, labels)
        rng = np.random.default_rng(random_state)
        totals = np.zeros(3)
        with nx.no_grad():
            for start in range(0, len(packed), 64):
                chunk = packed[start : start + 64]
                batch = collate(chunk)
                eps = rng.standard_normal((batch.size, self.config_.d_h))
                total, recon, kl = elbo_loss(batch, self.params_, self.config_, 1.0, eps)
                totals += len(chunk) * np.array([float(total.data), float(recon.data), float(kl.data)])
        total, recon, kl = totals / len(packed)
        return LossBreakdown(kl=kl, recon=recon, total=total, kl_weight=1.0)

    def score(self, X, y):
        """Mean evidence lower bound per token-averaged example (higher is better)."""
        return -self.loss(X, y).total

    def transform(self, X, y=None):
        """Posterior means [n, d_h] of utterances ``X`` under intents ``y``."""
        check_is_fitted(self, "params_")
        if y is None:
            raise ValueError("transform needs the intent labels y")
        texts, labels = check_texts_labels(X, y)
        batch = collate(self._pack(texts, labels))
        with nx.no_grad():
            H0 = M.embed(batch, self.params_)
            h_cls, _ = M.encode(H0, M.encoder_attention_mask(batch), self.params_, self.config_)
            mu = h_cls @ self.params_["lat.w_mu"] + self.params_["lat.b_mu"]
        return mu.data.copy()

    def sentence_embeddings(self, X):
        """Encoder [CLS] states [n, d_h] for utterances on their own."""
        check_is_fitted(self, "params_")
        texts = check_texts(X)
        batch = collate([encode_single(t, self.vocab_, self.max_len) for t in texts])
        with nx.no_grad():
            h_cls, _ = M.encode(M.embed(batch, self.params_), M.encoder_attention_mask(batch), self.params_, self.config_)
        return h_cls.data.copy()

    def generate(self, intents, exclude=(), gen_config: GenerationConfig | None = None):
        """Generated utterance sets for ``intents``, skipping anything in ``exclude``."""
        check_is_fitted(self, "params_")
        gen_config = GenerationConfig() if gen_config is None else gen_config
        return generate_dataset(self.params_, self.config_, self.vocab_, list(intents), exclude, gen_config)


ENCODER_PREFIXES = ("tok_emb", "pos_emb", "seg_emb", "enc.")


class IntentClassifier(BaseEstimator, ClassifierMixin):
    """Transformer encoder with a softmax head on the [CLS] state.

    Parameters
    ----------
    init_from : CGBertGenerator, optional
        Fitted generator whose vocabulary, embeddings and encoder blocks
        initialise the classifier.  When None everything starts from random
        with a vocabulary built on the training utterances.
    d_h, n_heads, n_layers, d_ff, max_len : int
        Architecture when starting from random; ignored with ``init_from``.
    epochs, batch_size, lr : training schedule (Adam, cross-entropy).
    dropout : float
    random_state : int
    """

    def __init__(
        self,
        init_from=None,
        d_h=64,
        n_heads=4,
        n_layers=2,
        d_ff=256,
        max_len=32,
        epochs=4,
        batch_size=32,
        lr=5e-4,
        dropout=0.1,
        random_state=0,
    ):
        self.init_from = init_from
        self.d_h = d_h
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.max_len = max_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.random_state = random_state

    def _setup(self, texts, rng):
        if self.init_from is not None:
            check_is_fitted(self.init_from, "params_")
            src = self.init_from.config_
            self.vocab_ = self.init_from.vocab_
            self.config_ = M.ModelConfig(
                vocab_size=len(self.vocab_),
                d_h=src.d_h,
                n_heads=src.n_heads,
                n_enc_layers=src.n_enc_layers,
                n_dec_layers=1,
                d_ff=src.d_ff,
                max_len=src.max_len,
                dropout=self.dropout,
            )
            self.params_ = {
                k: nx.parameter(p.data.copy(), name=k)
                for k, p in self.init_from.params_.items()
                if k.startswith(ENCODER_PREFIXES)
            }
        else:
            self.vocab_ = build_vocab(texts)
            self.config_ = M.ModelConfig(
                vocab_size=len(self.vocab_),
                d_h=self.d_h,
                n_heads=self.n_heads,
                n_enc_layers=self.n_layers,
                n_dec_layers=1,
                d_ff=self.d_ff,
                max_len=self.max_len,
                dropout=self.dropout,
            )
            full = M.init_params(self.config_, rng)
            self.params_ = {k: p for k, p in full.items() if k.startswith(ENCODER_PREFIXES)}
        d, c = self.config_.d_h, len(self.classes_)
        self.params_["cls.w"] = nx.parameter(M._trunc_normal(rng, (d, c), 0.02), name="cls.w")
        self.params_["cls.b"] = nx.parameter(np.zeros(c), name="cls.b")

    def _logits(self, batch, rng=None):
        H0 = M.embed(batch, self.params_)
        h_cls, _ = M.encode(H0, M.encoder_attention_mask(batch), self.params_, self.config_, rng)
        h_cls = nx.dropout(h_cls, self.config_.dropout, rng)
        return h_cls @ self.params_["cls.w"] + self.params_["cls.b"]

    def fit(self, X, y):
        texts, labels = check_texts_labels(X, y)
        seed = check_random_state(self.random_state)
        init_ss, batch_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
        self.classes_ = np.array(sorted(set(labels)))
        self._setup(texts, np.random.default_rng(init_ss))
        index = {c: i for i, c in enumerate(self.classes_)}
        targets = np.array([index[lab] for lab in labels])
        packed = [encode_single(t, self.vocab_, self.config_.max_len) for t in texts]

        opt = nx.Adam(self.params_, lr=self.lr)
        batch_rng, drop_rng = np.random.default_rng(batch_ss), np.random.default_rng(drop_ss)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = batch_rng.permutation(len(packed))
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                nx.zero_grad(self.params_)
                logits = self._logits(collate([packed[i] for i in idx]), drop_rng)
                loss = nx.cross_entropy(logits, targets[idx], np.full(len(idx), 1.0 / len(idx)))
                opt.step(nx.backward(loss, self.params_))
                self.loss_curve_.append(float(loss.data))
        nx.zero_grad(self.params_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        texts = check_texts(X)
        out = []
        with nx.no_grad():
            for start in range(0, len(texts), 128):
                chunk = texts[start : start + 128]
                batch = collate([encode_single(t, self.vocab_, self.config_.max_len) for t in chunk])
                out.append(self._logits(batch).data)
        return np.concatenate(out).astype(np.float64)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
