"""Oracle suite for the sequence tagger.

The oracles here are independent of the implementation under test:
exhaustive path enumeration for Viterbi/logZ and central finite differences
for gradients.
"""

import itertools
import math

import numpy as np
import pytest

from ctigraph.crf import (
    CrfModel,
    CrfTagger,
    FeatureExtractor,
    corpus_objective,
    decode_mentions,
    default_label_set,
    emission_scores,
    forward_log_partition,
    predict_sentence,
    sequence_nll_grad,
    sequence_score,
    train,
    viterbi,
)
from ctigraph.errors import DegenerateCorpus
from ctigraph.textseg import Token, protect_and_tokenize


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def enumerate_paths(emissions: np.ndarray, transitions: np.ndarray):
    """Score every label path by brute force."""
    n_steps, n_labels = emissions.shape
    for path in itertools.product(range(n_labels), repeat=n_steps):
        score = sum(emissions[t, y] for t, y in enumerate(path))
        score += sum(transitions[path[t - 1], path[t]] for t in range(1, n_steps))
        yield list(path), float(score)


def brute_force_best(emissions, transitions):
    best_path, best_score = None, -math.inf
    for path, score in enumerate_paths(emissions, transitions):
        if score > best_score:  # strict: first maximum wins, matching tie rule
            best_path, best_score = path, score
    return best_path, best_score


def brute_force_log_z(emissions, transitions):
    return math.log(
        sum(math.exp(score) for _, score in enumerate_paths(emissions, transitions))
    )


def random_instance(rng, max_len=6, max_labels=4):
    n_steps = rng.integers(1, max_len + 1)
    n_labels = rng.integers(2, max_labels + 1)
    emissions = rng.normal(scale=1.5, size=(n_steps, n_labels))
    transitions = rng.normal(scale=1.0, size=(n_labels, n_labels))
    return emissions, transitions


# ---------------------------------------------------------------------------
# decode vs enumeration
# ---------------------------------------------------------------------------

class TestViterbiAgainstEnumeration:
    def test_hundred_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            emissions, transitions = random_instance(rng)
            path, score = viterbi(emissions, transitions)
            oracle_path, oracle_score = brute_force_best(emissions, transitions)
            assert path == oracle_path
            assert score == pytest.approx(oracle_score, rel=1e-10)

    def test_log_partition_matches_brute_force(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            emissions, transitions = random_instance(rng)
            log_z = forward_log_partition(emissions, transitions)
            oracle = brute_force_log_z(emissions, transitions)
            assert abs(log_z - oracle) <= 1e-8 * max(1.0, abs(oracle))

    def test_path_probabilities_sum_to_one(self):
        rng = np.random.default_rng(44)
        for _ in range(20):
            emissions, transitions = random_instance(rng)
            log_z = forward_log_partition(emissions, transitions)
            total = sum(
                math.exp(score - log_z) for _, score in enumerate_paths(emissions, transitions)
            )
            assert total == pytest.approx(1.0, abs=1e-8)

    def test_ties_break_toward_lower_index(self):
        emissions = np.zeros((3, 4))
        transitions = np.zeros((4, 4))
        path, _ = viterbi(emissions, transitions)
        assert path == [0, 0, 0]


# ---------------------------------------------------------------------------
# gradients vs central finite differences
# ---------------------------------------------------------------------------

def _random_training_instance(rng, n_tokens=3, n_labels=3, n_feats=5):
    encoded = [
        [(int(fid), 1.0) for fid in rng.choice(n_feats, size=2, replace=False)]
        for _ in range(n_tokens)
    ]
    labels = [int(l) for l in rng.integers(0, n_labels, size=n_tokens)]
    emission_w = rng.normal(scale=0.8, size=(n_feats, n_labels))
    transition_w = rng.normal(scale=0.8, size=(n_labels, n_labels))
    return encoded, labels, emission_w, transition_w


class TestGradientAgainstFiniteDifferences:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        encoded, labels, emission_w, transition_w = _random_training_instance(rng)
        l2 = 0.01
        eps = 1e-5

        grad_e = np.zeros_like(emission_w)
        grad_t = np.zeros_like(transition_w)
        sequence_nll_grad(encoded, labels, emission_w, transition_w, grad_e, grad_t)
        grad_e += l2 * emission_w
        grad_t += l2 * transition_w

        def objective(e_w, t_w):
            return corpus_objective([encoded], [labels], e_w, t_w, l2)

        for idx in np.ndindex(*emission_w.shape):
            up = emission_w.copy()
            down = emission_w.copy()
            up[idx] += eps
            down[idx] -= eps
            fd = (objective(up, transition_w) - objective(down, transition_w)) / (2 * eps)
            assert abs(fd - grad_e[idx]) < 1e-5

        for idx in np.ndindex(*transition_w.shape):
            up = transition_w.copy()
            down = transition_w.copy()
            up[idx] += eps
            down[idx] -= eps
            fd = (objective(emission_w, up) - objective(emission_w, down)) / (2 * eps)
            assert abs(fd - grad_t[idx]) < 1e-5


# ---------------------------------------------------------------------------
# training behavior
# ---------------------------------------------------------------------------

def _toy_tokens(words: str) -> list[Token]:
    tokens = []
    pos = 0
    for i, word in enumerate(words.split()):
        tokens.append(Token(surface=word, start=pos, end=pos + len(word), sent_index=0))
        pos += len(word) + 1
    return tokens


TRAIN_SENTENCE = ("The actor CozyDuke used mimikatz",
                  ["O", "O", "B-threat_actor", "O", "B-tool"])


class TestTraining:
    def test_memorizes_single_sequence(self):
        tokens = _toy_tokens(TRAIN_SENTENCE[0])
        model = train([(tokens, TRAIN_SENTENCE[1])], FeatureExtractor(), epochs=150,
                      learning_rate=0.5, l2=1e-5, seed=0)
        labels, confidence = predict_sentence(model, FeatureExtractor(), tokens)
        assert labels == TRAIN_SENTENCE[1]
        assert 0.0 < confidence <= 1.0

    def test_same_seed_identical_weights(self):
        tokens = _toy_tokens(TRAIN_SENTENCE[0])
        corpus = [(tokens, TRAIN_SENTENCE[1])] * 3
        a = train(corpus, FeatureExtractor(), epochs=10, seed=5, batch_size=2)
        b = train(corpus, FeatureExtractor(), epochs=10, seed=5, batch_size=2)
        assert np.array_equal(a.emission_weights, b.emission_weights)
        assert np.array_equal(a.transition_weights, b.transition_weights)

    def test_loss_non_increasing_full_batch(self):
        tokens = _toy_tokens(TRAIN_SENTENCE[0])
        model = train([(tokens, TRAIN_SENTENCE[1])], FeatureExtractor(), epochs=50,
                      learning_rate=0.2, l2=1e-4, seed=0)
        history = model.meta["loss_history"]
        for earlier, later in zip(history, history[1:]):
            assert later <= earlier + 1e-9

    def test_degenerate_corpus_rejected(self):
        tokens = _toy_tokens("nothing to see here")
        with pytest.raises(DegenerateCorpus):
            train([(tokens, ["O"] * 4)], FeatureExtractor())

    def test_zero_weight_model_predicts_all_o(self):
        labels = default_label_set()
        model = CrfModel(
            labels=labels,
            vocab={"bias": 0},
            emission_weights=np.zeros((1, len(labels))),
            transition_weights=np.zeros((len(labels), len(labels))),
        )
        tokens = _toy_tokens("anything at all works")
        predicted, _ = predict_sentence(model, FeatureExtractor(), tokens)
        assert predicted == ["O"] * 4
        assert labels[0] == "O"


class TestDecodeMentions:
    def test_span_mentions_from_bio(self):
        text = "The actor CozyDuke used mimikatz. It spread fast."
        _, ts = protect_and_tokenize(text)
        sent = ts.sentence(0)
        labels = []
        for tok in sent:
            if tok.surface == "CozyDuke":
                labels.append("B-threat_actor")
            elif tok.surface == "mimikatz":
                labels.append("B-tool")
            else:
                labels.append("O")
        model = train([(sent, labels)], FeatureExtractor(), epochs=150,
                      learning_rate=0.5, l2=1e-5)
        mentions = decode_mentions(model, FeatureExtractor(), ts)
        surfaces = {(m.surface, m.etype.value) for m in mentions}
        assert ("CozyDuke", "threat_actor") in surfaces
        assert ("mimikatz", "tool") in surfaces
        for m in mentions:
            assert ts.text[m.span[0] : m.span[1]] == m.surface
            assert 0.0 < m.confidence <= 1.0


class TestTaggerEstimatorSurface:
    def test_fit_predict_and_params(self):
        tokens = _toy_tokens(TRAIN_SENTENCE[0])
        tagger = CrfTagger(epochs=120, learning_rate=0.5, l2=1e-5)
        assert tagger.get_params()["epochs"] == 120
        tagger.set_params(epochs=150)
        tagger.fit([tokens], [TRAIN_SENTENCE[1]])
        assert tagger.predict([tokens]) == [TRAIN_SENTENCE[1]]
        with pytest.raises(ValueError):
            tagger.set_params(bogus=1)
