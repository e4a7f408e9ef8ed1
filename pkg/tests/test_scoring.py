from __future__ import annotations

import numpy as np
import pytest

from mecd.dataio import Label
from mecd.memory import Expert, MemoryPolicy, update_expert
from mecd.scoring import (
    ScoringError,
    image_score,
    min_sq_dists,
    patch_score,
    patch_scores,
    score_class,
)

from conftest import make_record
from oracles import nn_distance_bruteforce


def test_patch_in_bank_scores_zero():
    bank = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    assert patch_score(bank[1], bank) == 0.0


def test_three_four_five():
    bank = np.array([[3.0, 4.0], [6.0, 8.0]])
    assert patch_score(np.array([0.0, 0.0]), bank) == 5.0


def test_patch_score_matches_bruteforce_on_random_bank():
    rng = np.random.default_rng(0)
    bank = rng.normal(size=(1000, 8))
    for _ in range(25):
        p = rng.normal(size=8)
        assert patch_score(p, bank) == nn_distance_bruteforce(p, bank)


def test_vectorized_scores_match_scalar_path():
    rng = np.random.default_rng(1)
    bank = rng.normal(size=(300, 5))
    queries = rng.normal(size=(40, 5))
    vec = patch_scores(queries, bank)
    assert vec.shape == (40,)
    for q, v in zip(queries, vec):
        assert patch_score(q, bank) == v


def test_gram_backend_agrees_with_exact():
    rng = np.random.default_rng(2)
    bank = rng.normal(loc=3.0, scale=2.0, size=(500, 16))
    queries = rng.normal(loc=3.0, scale=2.0, size=(64, 16))
    exact = min_sq_dists(queries, bank, method="exact")
    gram = min_sq_dists(queries, bank, method="gram")
    assert np.allclose(exact, gram, rtol=1e-9, atol=1e-9)


def test_chunked_exact_path_is_seamless():
    import mecd.scoring as scoring

    rng = np.random.default_rng(3)
    bank = rng.normal(size=(100, 7))
    queries = rng.normal(size=(50, 7))
    whole = min_sq_dists(queries, bank)
    old = scoring._CHUNK_ELEMENTS
    try:
        scoring._CHUNK_ELEMENTS = 7 * 100 * 3  # force ~3-row chunks
        chunked = min_sq_dists(queries, bank)
    finally:
        scoring._CHUNK_ELEMENTS = old
    assert np.array_equal(whole, chunked)


def test_monotone_under_bank_growth():
    rng = np.random.default_rng(4)
    bank = rng.normal(size=(50, 6))
    extra = np.concatenate([bank, rng.normal(size=(50, 6))])
    queries = rng.normal(size=(30, 6))
    assert np.all(patch_scores(queries, extra) <= patch_scores(queries, bank))


def test_image_score_zero_when_all_patches_in_bank():
    bank = np.random.default_rng(5).normal(size=(20, 3)).astype(np.float32)
    result = image_score(bank[:7], bank, image_id="img")
    assert result.score == 0.0
    assert result.argmax_patch_index == 0  # ties resolve to the lowest index


def test_image_score_finds_outlier():
    bank = np.zeros((5, 2))
    patches = np.zeros((6, 2))
    patches[4] = [3.0, 4.0]
    result = image_score(patches, bank)
    assert result.score == 5.0
    assert result.argmax_patch_index == 4


def test_image_score_tie_breaks_low_index():
    bank = np.zeros((3, 2))
    patches = np.array([[0.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
    result = image_score(patches, bank)
    assert result.score == 2.0
    assert result.argmax_patch_index == 1


def test_image_score_equals_max_of_patch_bruteforce():
    rng = np.random.default_rng(6)
    bank = rng.normal(size=(200, 4))
    patches = rng.normal(size=(49, 4))
    result = image_score(patches, bank)
    ref = [nn_distance_bruteforce(p, bank) for p in patches]
    assert result.score == max(ref)
    assert result.argmax_patch_index == int(np.argmax(ref))


def test_errors():
    with pytest.raises(ScoringError, match="empty"):
        patch_score(np.ones(3), np.empty((0, 3)))
    with pytest.raises(ScoringError, match="dimension mismatch"):
        patch_score(np.ones(3), np.ones((4, 5)))
    with pytest.raises(ScoringError):
        image_score(np.empty((0, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="unknown nn method"):
        min_sq_dists(np.ones((1, 2)), np.ones((2, 2)), method="magic")


def fitted_expert(coreset: np.ndarray, name: str = "widget") -> Expert:
    policy = MemoryPolicy(per_class_budget=len(coreset), per_expert_budget=4 * len(coreset))
    expert = Expert(expert_id=3, policy=policy)
    update_expert(expert, name, coreset, policy, seed=0)
    return expert


def test_score_class_basics():
    rng = np.random.default_rng(7)
    coreset = rng.normal(size=(30, 4)).astype(np.float32)
    expert = fitted_expert(coreset)
    records = [
        make_record("good", coreset[:5]),
        make_record("bad", coreset[:5] + 9.0, label=Label.ANOMALOUS),
    ]
    results = score_class(records, "widget", expert)
    assert [r.image_id for r in results] == ["good", "bad"]
    assert results[0].score == 0.0
    assert results[1].score > 1.0
    assert all(r.expert_id == 3 and r.class_name == "widget" for r in results)


def test_score_class_matches_independent_image_scores():
    rng = np.random.default_rng(8)
    coreset = rng.normal(size=(30, 4)).astype(np.float32)
    expert = fitted_expert(coreset)
    records = [make_record(f"r{i}", rng.normal(size=(6, 4))) for i in range(5)]
    results = score_class(records, "widget", expert)
    for rec, res in zip(records, results):
        solo = image_score(rec.patches, expert.memory_bank)
        assert (res.score, res.argmax_patch_index) == (solo.score, solo.argmax_patch_index)


def test_score_class_empty_and_unassigned():
    coreset = np.random.default_rng(9).normal(size=(10, 4)).astype(np.float32)
    expert = fitted_expert(coreset)
    assert score_class([], "widget", expert) == []
    with pytest.raises(ScoringError, match="not assigned"):
        score_class([], "other", expert)


def test_scoring_never_mutates_bank():
    rng = np.random.default_rng(10)
    coreset = rng.normal(size=(25, 4)).astype(np.float32)
    expert = fitted_expert(coreset)
    before = expert.memory_bank.tobytes()
    score_class([make_record("r", rng.normal(size=(8, 4)))], "widget", expert)
    assert expert.memory_bank.tobytes() == before
