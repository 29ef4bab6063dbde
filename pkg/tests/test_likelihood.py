import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lass import likelihood as lk
from lass.codec import Codebook, encode, fit_codebook
from lass.errors import ModelFileError, ValidationError
from lass.harness import SourceSpec, generate_dataset, mix

FLOOR = math.log(1e-12)


def seeded_pairs(count=100, seed=5):
    s1 = SourceSpec("a", "markov_levels", values=(-0.7, -0.2, 0.4, 0.9), persistence=0.6, hold=2, seed=1)
    s2 = SourceSpec("b", "tone_bank", values=(1 / 8, 1 / 4), amplitude=0.6, phase_steps=8, seed=2)
    return generate_dataset(s1, s2, count, 32, seed)


@pytest.fixture(scope="module")
def seeded():
    x1, x2 = seeded_pairs()
    codec = fit_codebook(list(x1) + list(x2) + list(mix(x1, x2)), 8, 2, seed=0)
    return codec, x1, x2


def recount(codec, x1s, x2s):
    counts = Counter()
    for x1, x2 in zip(x1s, x2s):
        y = [(a + b) / 2 for a, b in zip(x1, x2)]
        z1, z2, m = encode(codec, x1), encode(codec, x2), encode(codec, y)
        for s in range(len(m)):
            counts[(int(z1[s]), int(z2[s]), int(m[s]))] += 1
            counts[(int(z2[s]), int(z1[s]), int(m[s]))] += 1
    return counts


def test_single_pair_counts():
    f = lk.CountTensor.from_tokens(3, [0], [1], [2])
    assert f.as_dict() == {(0, 1, 2): 1, (1, 0, 2): 1}
    assert f.total == 2


def test_diagonal_counts_twice():
    f = lk.CountTensor.from_tokens(4, [3], [3], [3])
    assert f.as_dict() == {(3, 3, 3): 2}


def test_build_counts_via_codec():
    codec = Codebook(np.array([[0.0], [0.5], [1.0]]))
    f = lk.build_counts([(np.array([0.0]), np.array([1.0]))], codec)
    assert f.as_dict() == {(0, 2, 1): 1, (2, 0, 1): 1}


def test_build_counts_length_mismatch(binary_codec):
    with pytest.raises(ValidationError):
        lk.build_counts([(np.zeros(2), np.zeros(3))], binary_codec)


def test_counts_match_recount(seeded):
    codec, x1, x2 = seeded
    f = lk.build_counts(zip(x1, x2), codec)
    assert f.as_dict() == dict(recount(codec, x1, x2))
    assert f.total == sum(f.as_dict().values())


def test_counts_symmetric(seeded):
    codec, x1, x2 = seeded
    f = lk.build_counts(zip(x1, x2), codec).as_dict()
    for (a, b, m), n in f.items():
        assert f[(b, a, m)] == n


def test_accumulation_is_additive(seeded):
    codec, x1, x2 = seeded
    whole = lk.build_counts(zip(x1, x2), codec)
    parts = lk.build_counts(zip(x1[:37], x2[:37]), codec) + lk.build_counts(zip(x1[37:], x2[37:]), codec)
    assert whole == parts


def test_normalize_row():
    f = lk.CountTensor(3, [(0, 1, 0), (0, 1, 2), (1, 0, 0), (1, 0, 2)], [2, 2, 2, 2])
    p = lk.normalize(f)
    assert p.row(0, 1) == {0: 0.5, 2: 0.5}
    assert p.row(0, 2) == {}
    assert np.all(p.slice(1)[0] == p.floor_logp)
    assert p.floor_logp == FLOOR


def test_rows_sum_to_one_and_symmetric(seeded):
    codec, x1, x2 = seeded
    p = lk.normalize(lk.build_counts(zip(x1, x2), codec))
    rows = dict(p.rows())
    assert rows
    for (a, b), dist in rows.items():
        assert abs(sum(dist.values()) - 1) <= 1e-9
        assert rows[(b, a)] == dist


def test_slice_examples():
    p = lk.normalize(lk.CountTensor.from_tokens(3, [0], [1], [2]))
    sl = p.slice(2)
    assert sl[0, 1] == 0.0 and sl[1, 0] == 0.0
    mask = np.ones((3, 3), bool)
    mask[0, 1] = mask[1, 0] = False
    assert np.all(sl[mask] == FLOOR)
    assert np.all(p.slice(0) == FLOOR)
    with pytest.raises(ValidationError):
        p.slice(3)


def test_slices_recompose_recount(seeded):
    codec, x1, x2 = seeded
    counts = recount(codec, x1, x2)
    p = lk.normalize(lk.build_counts(zip(x1, x2), codec))
    k = codec.k
    dense = np.zeros((k, k, k))
    for (a, b, m), n in counts.items():
        dense[a, b, m] = n
    sums = dense.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        want = np.where(dense > 0, np.log(dense / np.where(sums > 0, sums, 1)), FLOOR)
    got = np.stack([p.slice(m) for m in range(k)], axis=2)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    for m in range(k):
        assert np.array_equal(p.slice(m), p.slice(m).T)


def test_density_examples():
    assert lk.density(lk.CountTensor(4)) == 0.0
    full = lk.CountTensor(2, [(a, b, m) for a in range(2) for b in range(2) for m in range(2)], [1] * 8)
    assert lk.density(full) == 100.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_density_matches_dense_count(k, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 40))
    f = lk.CountTensor.from_tokens(k, *rng.integers(k, size=(3, n)))
    want = 100.0 * np.count_nonzero(f.dense()) / k**3
    assert lk.density(f) == want
    assert 0.0 <= lk.density(f) <= 100.0


def test_save_load_round_trip(tmp_path, seeded):
    codec, x1, x2 = seeded
    f = lk.build_counts(zip(x1, x2), codec)
    p = lk.normalize(f)
    lk.save(f, tmp_path / "counts.json")
    lk.save(p, tmp_path / "model.json")
    assert lk.load(tmp_path / "counts.json") == f
    assert lk.load(tmp_path / "model.json") == p
    assert lk.load_model(tmp_path / "counts.json") == p
    with pytest.raises(ModelFileError):
        lk.load(tmp_path / "model.json", k=codec.k + 1)


def test_count_file_schema(tmp_path):
    f = lk.CountTensor.from_tokens(3, [0, 2], [1, 2], [2, 0])
    lk.save(f, tmp_path / "c.json")
    import json
    data = json.loads((tmp_path / "c.json").read_text())
    assert data == {"k": 3, "triples": [[0, 1, 2, 1], [1, 0, 2, 1], [2, 2, 0, 2]]}


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ModelFileError):
        lk.load(bad)
    bad.write_text('{"k": 2, "triples": [[0, 5, 0, 1]]}')
    with pytest.raises((ModelFileError, ValidationError)):
        lk.load(bad)
    bad.write_text('{"k": 2}')
    with pytest.raises(ModelFileError):
        lk.load(bad)
