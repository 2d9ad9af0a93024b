"""Linear-chain CRF sequence tagger, trained from scratch.

Scoring of a label sequence y for tokens x:

    score(x, y) = sum_t w . f(x, t, y_t) + sum_t T[y_{t-1}, y_t]

with the log-partition computed by the forward recursion in log space.
Training minimizes the L2-regularized negative log-likelihood by (mini-)batch
gradient descent; decoding is max-product Viterbi with ties broken toward the
lower label index (O is index 0, so a zero-weight model predicts all O).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .errors import DegenerateCorpus, NonfiniteLoss
from .labeling import Gazetteer, bio_tag, repair_bio, split_tag
from .model import LEARNABLE_TYPES, EntityMention, EntityType, Provenance
from .textseg import Token, TokenSeq

log = logging.getLogger(__name__)

DEFAULT_TEMPLATES = (
    "bias",
    "word",
    "lower",
    "shape",
    "shape_context",
    "prefix",
    "suffix",
    "ioc_flag",
    "gazetteer",
    "neighbors",
)


def default_label_set() -> tuple[str, ...]:
    labels = ["O"]
    for etype in LEARNABLE_TYPES:
        labels.append(bio_tag("B", etype))
        labels.append(bio_tag("I", etype))
    return tuple(labels)


def word_shape(surface: str) -> str:
    shape = []
    for ch in surface:
        if ch.isupper():
            code = "X"
        elif ch.islower():
            code = "x"
        elif ch.isdigit():
            code = "d"
        else:
            code = ch
        if not shape or shape[-1] != code:
            shape.append(code)
    return "".join(shape)


class FeatureExtractor:
    """Pure, window-local feature templates over a token sequence.

    The default set is self-contained (no pretrained assets): word identity,
    lowercase form, collapsed shape, affixes up to 3 chars, the IOC-restored
    flag, gazetteer membership flags, and neighbor identities. ``vector_hook``
    is the declared extension point for external embeddings; it maps a token
    to a list of floats and is disabled (None) by default.
    """

    def __init__(
        self,
        templates: tuple[str, ...] = DEFAULT_TEMPLATES,
        gazetteers: dict[str, Gazetteer] | None = None,
        vector_hook=None,
    ):
        self.templates = tuple(templates)
        self.gazetteers = gazetteers or {}
        self.vector_hook = vector_hook

    def _gazetteer_flags(self, tokens: list[Token]) -> list[list[str]]:
        flags: list[list[str]] = [[] for _ in tokens]
        lowered = [t.surface.lower() for t in tokens]
        for gaz in self.gazetteers.values():
            i = 0
            n = len(lowered)
            while i < n:
                matched = 0
                for length in range(min(gaz.max_len, n - i), 0, -1):
                    if tuple(lowered[i : i + length]) in gaz.phrases:
                        matched = length
                        break
                if matched:
                    flags[i].append(f"gazB:{gaz.name}")
                    for j in range(i + 1, i + matched):
                        flags[j].append(f"gazI:{gaz.name}")
                    i += matched
                else:
                    i += 1
        return flags

    def featurize(self, tokens: list[Token]) -> list[list[tuple[str, float]]]:
        """Features for every position; values are 1.0 for indicators."""
        want = set(self.templates)
        gaz_flags = self._gazetteer_flags(tokens) if "gazetteer" in want else None
        out = []
        for i, tok in enumerate(tokens):
            feats: list[tuple[str, float]] = []
            surface = tok.surface
            lower = surface.lower()
            if "bias" in want:
                feats.append(("bias", 1.0))
            if "word" in want:
                feats.append((f"w0={surface}", 1.0))
            if "lower" in want:
                feats.append((f"lw0={lower}", 1.0))
            if "shape" in want:
                feats.append((f"sh0={word_shape(surface)}", 1.0))
            if "shape_context" in want:
                # shape conjoined with neighbor identity: lets an unseen
                # capitalized token inherit evidence from its context
                prev_l = tokens[i - 1].surface.lower() if i > 0 else "<bos>"
                next_l = tokens[i + 1].surface.lower() if i + 1 < len(tokens) else "<eos>"
                shape = word_shape(surface)
                feats.append((f"sh0|lw-1={shape}|{prev_l}", 1.0))
                feats.append((f"sh0|lw+1={shape}|{next_l}", 1.0))
            if "prefix" in want:
                for k in range(1, min(3, len(lower)) + 1):
                    feats.append((f"p{k}={lower[:k]}", 1.0))
            if "suffix" in want:
                for k in range(1, min(3, len(lower)) + 1):
                    feats.append((f"s{k}={lower[-k:]}", 1.0))
            if "ioc_flag" in want and tok.is_ioc:
                feats.append(("ioc0", 1.0))
            if gaz_flags is not None:
                feats.extend((flag, 1.0) for flag in gaz_flags[i])
            if "neighbors" in want:
                prev = tokens[i - 1].surface if i > 0 else "<BOS>"
                nxt = tokens[i + 1].surface if i + 1 < len(tokens) else "<EOS>"
                feats.append((f"w-1={prev}", 1.0))
                feats.append((f"w+1={nxt}", 1.0))
                feats.append((f"lw-1={prev.lower()}", 1.0))
                feats.append((f"lw+1={nxt.lower()}", 1.0))
            if self.vector_hook is not None:
                for j, value in enumerate(self.vector_hook(tok)):
                    feats.append((f"vec{j}", float(value)))
            out.append(feats)
        return out

    def to_plain(self) -> dict:
        return {"templates": list(self.templates)}


@dataclass
class CrfModel:
    """Feature weights + transition weights, plus training metadata."""

    labels: tuple[str, ...]
    vocab: dict[str, int]
    emission_weights: np.ndarray  # (|vocab|, |labels|)
    transition_weights: np.ndarray  # (|labels|, |labels|)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        n = len(self.labels)
        if self.transition_weights.shape != (n, n):
            raise ValueError("transition matrix shape disagrees with label set")
        if not (np.isfinite(self.emission_weights).all()
                and np.isfinite(self.transition_weights).all()):
            raise ValueError("model weights are not finite")

    def encode(self, feats: list[list[tuple[str, float]]]) -> list[list[tuple[int, float]]]:
        """Map feature names to indices; unknown features are dropped."""
        vocab = self.vocab
        return [
            [(vocab[name], value) for name, value in token_feats if name in vocab]
            for token_feats in feats
        ]

    def to_plain(self) -> dict:
        return {
            "labels": list(self.labels),
            "vocab": dict(self.vocab),
            "emission_weights": self.emission_weights.astype("<f8").tobytes(),
            "transition_weights": self.transition_weights.astype("<f8").tobytes(),
            "shape": [int(s) for s in self.emission_weights.shape],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_plain(cls, plain: dict) -> "CrfModel":
        n_feats, n_labels = plain["shape"]
        emission = np.frombuffer(plain["emission_weights"], dtype="<f8").reshape(
            n_feats, n_labels
        ).copy()
        transition = np.frombuffer(plain["transition_weights"], dtype="<f8").reshape(
            n_labels, n_labels
        ).copy()
        return cls(
            labels=tuple(plain["labels"]),
            vocab={k: int(v) for k, v in plain["vocab"].items()},
            emission_weights=emission,
            transition_weights=transition,
            meta=dict(plain["meta"]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CrfModel):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.vocab == other.vocab
            and np.array_equal(self.emission_weights, other.emission_weights)
            and np.array_equal(self.transition_weights, other.transition_weights)
            and self.meta == other.meta
        )


codec.register_type("crf_model", CrfModel, CrfModel.from_plain)


def _logsumexp(a: np.ndarray, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def emission_scores(encoded: list[list[tuple[int, float]]], weights: np.ndarray) -> np.ndarray:
    scores = np.zeros((len(encoded), weights.shape[1]))
    for t, token_feats in enumerate(encoded):
        for fid, value in token_feats:
            scores[t] += value * weights[fid]
    return scores


def forward_log_partition(emissions: np.ndarray, transitions: np.ndarray) -> float:
    alpha = emissions[0].copy()
    for t in range(1, emissions.shape[0]):
        alpha = emissions[t] + _logsumexp(alpha[:, None] + transitions, axis=0)
    return float(_logsumexp(alpha))


def sequence_score(emissions: np.ndarray, transitions: np.ndarray, labels: list[int]) -> float:
    score = float(sum(emissions[t, y] for t, y in enumerate(labels)))
    score += float(sum(transitions[labels[t - 1], labels[t]] for t in range(1, len(labels))))
    return score


def viterbi(emissions: np.ndarray, transitions: np.ndarray) -> tuple[list[int], float]:
    """Max-product decode; ties resolved toward the lower label index."""
    n_steps, n_labels = emissions.shape
    delta = emissions[0].copy()
    backptr = np.zeros((n_steps, n_labels), dtype=np.int64)
    for t in range(1, n_steps):
        candidate = delta[:, None] + transitions  # [from, to]
        backptr[t] = np.argmax(candidate, axis=0)  # first max = lowest index
        delta = emissions[t] + np.max(candidate, axis=0)
    last = int(np.argmax(delta))
    path = [last]
    for t in range(n_steps - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, float(delta[last])


def sequence_nll_grad(
    encoded: list[list[tuple[int, float]]],
    label_ids: list[int],
    emission_w: np.ndarray,
    transition_w: np.ndarray,
    grad_emission: np.ndarray,
    grad_transition: np.ndarray,
) -> float:
    """NLL of one sequence; gradients are accumulated into the given arrays."""
    emissions = emission_scores(encoded, emission_w)
    n_steps, n_labels = emissions.shape

    alphas = np.zeros((n_steps, n_labels))
    alphas[0] = emissions[0]
    for t in range(1, n_steps):
        alphas[t] = emissions[t] + _logsumexp(alphas[t - 1][:, None] + transition_w, axis=0)
    log_z = float(_logsumexp(alphas[-1]))

    betas = np.zeros((n_steps, n_labels))
    for t in range(n_steps - 2, -1, -1):
        betas[t] = _logsumexp(transition_w + emissions[t + 1] + betas[t + 1], axis=1)

    nll = log_z - sequence_score(emissions, transition_w, label_ids)

    for t in range(n_steps):
        marginal = np.exp(alphas[t] + betas[t] - log_z)
        marginal[label_ids[t]] -= 1.0
        for fid, value in encoded[t]:
            grad_emission[fid] += value * marginal

    for t in range(1, n_steps):
        pairwise = np.exp(
            alphas[t - 1][:, None] + transition_w + emissions[t][None, :] + betas[t][None, :]
            - log_z
        )
        pairwise[label_ids[t - 1], label_ids[t]] -= 1.0
        grad_transition += pairwise

    return nll


def corpus_objective(
    encoded_corpus: list[list[list[tuple[int, float]]]],
    label_id_corpus: list[list[int]],
    emission_w: np.ndarray,
    transition_w: np.ndarray,
    l2: float,
) -> float:
    """Mean NLL plus (l2/2)·||θ||²; the quantity gradient descent minimizes."""
    total = 0.0
    for encoded, label_ids in zip(encoded_corpus, label_id_corpus):
        emissions = emission_scores(encoded, emission_w)
        total += forward_log_partition(emissions, transition_w) - sequence_score(
            emissions, transition_w, label_ids
        )
    reg = 0.5 * l2 * (float(np.sum(emission_w**2)) + float(np.sum(transition_w**2)))
    return total / len(encoded_corpus) + reg


def train(
    corpus: list[tuple[list[Token], list[str]]],
    feature_extractor: FeatureExtractor,
    l2: float = 1e-4,
    epochs: int = 60,
    learning_rate: float = 0.25,
    batch_size: int | None = None,
    seed: int = 0,
    labels: tuple[str, ...] | None = None,
) -> CrfModel:
    """Fit weights on (token sequence, BIO labels) pairs.

    Deterministic for a fixed seed. Raises DegenerateCorpus when no sequence
    carries an entity label, NonfiniteLoss when the objective diverges.
    """
    if not corpus:
        raise DegenerateCorpus("training corpus is empty")
    label_set = labels or default_label_set()
    label_index = {lab: i for i, lab in enumerate(label_set)}
    if all(tag == "O" for _, seq_labels in corpus for tag in seq_labels):
        raise DegenerateCorpus("all training labels are O")

    vocab: dict[str, int] = {}
    encoded_corpus = []
    label_id_corpus = []
    for tokens, seq_labels in corpus:
        if len(tokens) != len(seq_labels):
            raise ValueError("token/label length mismatch")
        feats = feature_extractor.featurize(list(tokens))
        encoded = []
        for token_feats in feats:
            row = []
            for name, value in token_feats:
                if name not in vocab:
                    vocab[name] = len(vocab)
                row.append((vocab[name], value))
            encoded.append(row)
        encoded_corpus.append(encoded)
        label_id_corpus.append([label_index[tag] for tag in seq_labels])

    n_labels = len(label_set)
    emission_w = np.zeros((len(vocab), n_labels))
    transition_w = np.zeros((n_labels, n_labels))
    grad_emission = np.zeros_like(emission_w)
    grad_transition = np.zeros_like(transition_w)

    n = len(encoded_corpus)
    batch = batch_size or n
    rng = np.random.default_rng(seed)
    loss_history = []
    for epoch in range(epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for lo in range(0, n, batch):
            chunk = order[lo : lo + batch]
            grad_emission.fill(0.0)
            grad_transition.fill(0.0)
            for i in chunk:
                sequence_nll_grad(
                    encoded_corpus[i],
                    label_id_corpus[i],
                    emission_w,
                    transition_w,
                    grad_emission,
                    grad_transition,
                )
            grad_emission /= len(chunk)
            grad_transition /= len(chunk)
            grad_emission += l2 * emission_w
            grad_transition += l2 * transition_w
            emission_w -= learning_rate * grad_emission
            transition_w -= learning_rate * grad_transition
        loss = corpus_objective(encoded_corpus, label_id_corpus, emission_w, transition_w, l2)
        if not np.isfinite(loss):
            raise NonfiniteLoss(
                f"objective became non-finite at epoch {epoch} "
                f"(lr={learning_rate}, l2={l2}); lower the learning rate"
            )
        loss_history.append(float(loss))

    model = CrfModel(
        labels=tuple(label_set),
        vocab=vocab,
        emission_weights=emission_w,
        transition_weights=transition_w,
        meta={
            "l2": float(l2),
            "epochs": int(epochs),
            "learning_rate": float(learning_rate),
            "batch_size": int(batch),
            "seed": int(seed),
            "loss_history": loss_history,
            "templates": list(feature_extractor.templates),
        },
    )
    log.info("trained CRF: %d features, %d labels, final loss %.6f",
             len(vocab), n_labels, loss_history[-1])
    return model


def predict_sentence(model: CrfModel, feature_extractor: FeatureExtractor,
                     tokens: list[Token]) -> tuple[list[str], float]:
    """Viterbi labels for one sentence plus the path probability."""
    encoded = model.encode(feature_extractor.featurize(tokens))
    emissions = emission_scores(encoded, model.emission_weights)
    path, best = viterbi(emissions, model.transition_weights)
    log_z = forward_log_partition(emissions, model.transition_weights)
    confidence = float(np.exp(min(0.0, best - log_z)))
    return [model.labels[i] for i in path], confidence


def decode_mentions(model: CrfModel, feature_extractor: FeatureExtractor,
                    ts: TokenSeq, min_confidence: float = 0.0) -> list[EntityMention]:
    """Decode each sentence and convert BIO spans to entity mentions."""
    mentions = []
    for sent_tokens in ts.sentences():
        if not sent_tokens:
            continue
        labels, confidence = predict_sentence(model, feature_extractor, sent_tokens)
        if confidence < min_confidence:
            continue
        labels = repair_bio(labels)
        i = 0
        while i < len(labels):
            prefix, etype = split_tag(labels[i])
            if prefix != "B":
                i += 1
                continue
            j = i + 1
            while j < len(labels) and labels[j] == bio_tag("I", etype):
                j += 1
            start = sent_tokens[i].start
            end = sent_tokens[j - 1].end
            mentions.append(
                EntityMention(
                    surface=ts.text[start:end],
                    etype=etype,
                    confidence=confidence,
                    provenance=Provenance.CRF,
                    span=(start, end),
                )
            )
            i = j
    return mentions


class CrfTagger:
    """sklearn-style wrapper: fit on token/label sequences, predict labels."""

    def __init__(
        self,
        l2: float = 1e-4,
        epochs: int = 60,
        learning_rate: float = 0.25,
        batch_size: int | None = None,
        seed: int = 0,
        feature_extractor: FeatureExtractor | None = None,
    ):
        self.l2 = l2
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.feature_extractor = feature_extractor

    def get_params(self, deep: bool = True) -> dict:
        return {
            "l2": self.l2,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "feature_extractor": self.feature_extractor,
        }

    def set_params(self, **params) -> "CrfTagger":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X: list[list[Token]], y: list[list[str]]) -> "CrfTagger":
        fe = self.feature_extractor or FeatureExtractor()
        self.feature_extractor = fe
        self.model_ = train(
            list(zip(X, y)),
            fe,
            l2=self.l2,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        return self

    def predict(self, X: list[list[Token]]) -> list[list[str]]:
        return [predict_sentence(self.model_, self.feature_extractor, tokens)[0] for tokens in X]
