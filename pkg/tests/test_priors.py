import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lass.errors import ModelFileError, ValidationError
from lass.priors import NGramPrior, PriorPair, train_ngram


@pytest.fixture
def bigram():
    return train_ngram([[0, 1, 0, 1]], k=2, order=2, delta=0.0)


def markov_corpus(seed=11, k=5, n_seq=40, length=30):
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet(np.ones(k) * 0.5, size=k)
    corpus = []
    for _ in range(n_seq):
        z = [int(rng.integers(k))]
        for _ in range(length - 1):
            z.append(int(rng.choice(k, p=trans[z[-1]])))
        corpus.append(z)
    return corpus


def hand_rolled(corpus, k, order, delta):
    table = defaultdict(lambda: [0] * k)
    for z in corpus:
        for s in range(len(z)):
            for length in range(0, min(s, order - 1) + 1):
                table[tuple(z[s - length:s])][z[s]] += 1

    def cond(context):
        ctx = tuple(context)[-(order - 1):] if order > 1 else ()
        counts = table.get(ctx, [0] * k)
        total = sum(counts)
        if total == 0:
            return [1 / k] * k
        return [(c + delta) / (total + delta * k) for c in counts]
    return cond


def test_bigram_forced_conditionals(bigram):
    assert bigram.conditional([0])[1] == 1.0
    assert bigram.conditional([1])[0] == 1.0
    assert bigram.conditional([]).tolist() == [0.5, 0.5]


def test_unigram_ignores_context():
    prior = train_ngram([[0, 1, 1, 2]], k=3, order=1, delta=0.0)
    want = [0.25, 0.5, 0.25]
    for ctx in ([], [0], [2, 1]):
        np.testing.assert_allclose(prior.conditional(ctx), want, rtol=0, atol=1e-15)


def test_matches_hand_rolled_recount():
    corpus = markov_corpus()
    prior = train_ngram(corpus, 5, order=2, delta=0.1)
    ref = hand_rolled(corpus, 5, 2, 0.1)
    for ctx in ([], [0], [3], [4, 2], [1, 1, 1]):
        np.testing.assert_allclose(prior.conditional(ctx), ref(ctx), rtol=0, atol=1e-12)


def test_unseen_context_uniform():
    prior = train_ngram([[0, 0, 0]], k=4, order=2, delta=0.0)
    assert prior.conditional([3]).tolist() == [0.25] * 4


def test_large_delta_approaches_uniform():
    prior = train_ngram(markov_corpus(), 5, order=2, delta=1e6)
    for ctx in ([], [0], [2]):
        assert np.abs(prior.conditional(ctx) - 0.2).max() < 1e-3


def test_sequence_logprob_examples(bigram):
    assert bigram.sequence_logprob([1]) == math.log(0.5)
    assert bigram.sequence_logprob([0, 1, 0, 1]) == math.log(0.5)


def test_sequence_logprob_stepwise():
    corpus = markov_corpus()
    prior = train_ngram(corpus, 5, order=3, delta=0.1)
    ref = hand_rolled(corpus, 5, 3, 0.1)
    z = np.random.default_rng(0).integers(5, size=20).tolist()
    want = sum(math.log(ref(z[:s])[z[s]]) for s in range(len(z)))
    assert abs(prior.sequence_logprob(z) - want) < 1e-9


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("delta", [0.0, 0.1])
def test_chain_rule_sums_to_one(order, delta):
    rng = np.random.default_rng(order)
    prior = train_ngram(rng.integers(4, size=(6, 7)), 4, order, delta)
    total = sum(math.exp(prior.sequence_logprob(z)) for z in itertools.product(range(4), repeat=5))
    assert abs(total - 1) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.sampled_from([0.0, 0.1, 2.0]),
       st.lists(st.integers(0, 4), max_size=5))
def test_conditionals_normalized(seed, order, delta, ctx):
    rng = np.random.default_rng(seed)
    prior = train_ngram(rng.integers(5, size=(3, 6)), 5, order, delta)
    assert abs(prior.conditional(ctx).sum() - 1) <= 1e-9


def test_training_deterministic():
    corpus = markov_corpus()
    assert train_ngram(corpus, 5, 3, 0.1) == train_ngram(corpus, 5, 3, 0.1)


def test_errors():
    with pytest.raises(ValidationError):
        train_ngram([], 3, 2, 0.1)
    with pytest.raises(ValidationError):
        train_ngram([[0, 3]], 3, 2, 0.1)
    prior = train_ngram([[0, 1]], 2, 2, 0.1)
    with pytest.raises(ValidationError):
        prior.conditional([2])
    with pytest.raises(ValidationError):
        prior.sequence_logprob([0, 5])
    with pytest.raises(ValidationError):
        PriorPair(prior, train_ngram([[0]], 3, 1, 0.1))


def test_file_round_trip(tmp_path):
    prior = train_ngram(markov_corpus(), 5, 3, 0.1)
    prior.save(tmp_path / "prior.json")
    assert NGramPrior.load(tmp_path / "prior.json") == prior
    with pytest.raises(ModelFileError):
        NGramPrior.load(tmp_path / "prior.json", k=4)


def test_file_schema(tmp_path):
    import json
    train_ngram([[0, 1, 0, 1]], 2, 2, 0.0).save(tmp_path / "p.json")
    data = json.loads((tmp_path / "p.json").read_text())
    assert data == {"k": 2, "order": 2, "delta": 0.0,
                    "contexts": [[[], [[0, 2], [1, 2]]], [[0], [[1, 2]]], [[1], [[0, 1]]]]}
