"""Gradient-norm word ranking and attack-target selection."""

import numpy as np
import pytest

from charsub.model import TinyTransformer, TinyTransformerSpec
from charsub.selector import (WordRanking, one_hot_rows, rank_words,
                              ranking_report, select_targets, token_grad_norms,
                              word_eligibility)
from charsub.vocab import SentenceEncoding, encode_words


class _FixedGradModel:
    """Stub returning a preset gradient matrix regardless of input."""

    def __init__(self, grad):
        self.grad = np.asarray(grad, dtype=np.float64)
        self.spec = TinyTransformerSpec(vocab_size=self.grad.shape[1],
                                        num_classes=2)

    def margin_and_grad_dist(self, rows, y, kappa, targets=None):
        return 1.0, self.grad


def _enc(ids, spans):
    return SentenceEncoding(ids=list(ids), word_spans=list(spans))


def test_one_hot_rows():
    rows = one_hot_rows([2, 0], 4)
    assert rows.shape == (2, 4)
    assert np.array_equal(rows, [[0, 0, 1, 0], [1, 0, 0, 0]])


def test_token_grad_norms_are_row_norms():
    grad = np.array([[3.0, 4.0], [0.0, 0.0], [5.0, 12.0]])
    model = _FixedGradModel(grad)
    norms = token_grad_norms(model, _enc([0, 1, 1], [(0, 3)]), 0, 1.0)
    assert np.allclose(norms, [5.0, 0.0, 13.0])


def test_rank_words_means_spans_and_sorts():
    enc = _enc([0] * 6, [(0, 2), (2, 3), (3, 6)])
    norms = np.array([3.0, 1.0, 5.0, 2.0, 2.0, 2.0])
    ranking = rank_words(enc, norms)
    assert np.allclose(ranking.scores, [2.0, 5.0, 2.0])
    assert ranking.order == [1, 0, 2]  # tie between words 0 and 2 keeps index order


def test_rank_words_single_word():
    ranking = rank_words(_enc([0, 0], [(0, 2)]), np.array([1.0, 3.0]))
    assert ranking.order == [0]
    assert np.allclose(ranking.scores, [2.0])


def test_rank_words_all_equal_is_stable():
    enc = _enc([0] * 4, [(0, 1), (1, 2), (2, 3), (3, 4)])
    ranking = rank_words(enc, np.ones(4))
    assert ranking.order == [0, 1, 2, 3]


def test_rank_words_rejects_misaligned_norms():
    with pytest.raises(ValueError, match="norms for"):
        rank_words(_enc([0, 0], [(0, 2)]), np.ones(3))


def test_rank_words_rescale_invariance():
    enc = _enc([0] * 5, [(0, 2), (2, 5)])
    norms = np.array([0.3, 1.7, 0.9, 0.2, 0.8])
    a = rank_words(enc, norms)
    b = rank_words(enc, norms * 37.5)
    assert a.order == b.order


def test_select_targets_skips_ineligible():
    ranking = WordRanking(order=[0, 2, 1], scores=np.array([2.0, 0.0, 1.0]))
    chosen, shortfall = select_targets(ranking, 2, [True, True, False])
    assert chosen == [0, 1]
    assert not shortfall


def test_select_targets_shortfall():
    ranking = WordRanking(order=[0, 1], scores=np.array([2.0, 1.0]))
    chosen, shortfall = select_targets(ranking, 2, [True, False])
    assert chosen == [0]
    assert shortfall


def test_select_targets_k_bounds():
    ranking = WordRanking(order=[0, 1], scores=np.array([2.0, 1.0]))
    for bad in (0, 3):
        with pytest.raises(ValueError, match="outside"):
            select_targets(ranking, bad, [True, True])


def test_select_targets_prefix_monotone():
    ranking = WordRanking(order=[3, 1, 0, 2],
                          scores=np.array([1.0, 3.0, 0.5, 4.0]))
    elig = [True, True, False, True]
    prev: list[int] = []
    for k in range(1, 4):
        chosen, _ = select_targets(ranking, k, elig)
        assert chosen[:len(prev)] == prev
        prev = chosen


def test_word_eligibility_rules(vocab):
    words = ["boston", "ab", "...", "héllo", "bax"]
    elig = word_eligibility(words, vocab)
    # too short, pure punctuation, OOV, and unsplittable are all excluded
    assert elig == [True, False, False, False, False]


def test_norms_match_finite_difference_gradient():
    spec = TinyTransformerSpec(layers=1, heads=2, model_dim=8, ff_dim=16,
                               max_len=8, vocab_size=5, num_classes=3)
    model = TinyTransformer(spec, "SENTENCE", seed=6)
    enc = _enc([1, 4, 2], [(0, 2), (2, 3)])
    rows = one_hot_rows(enc.ids, 5)
    y = int(np.argmax(model.forward_dist(rows)))
    norms = token_grad_norms(model, enc, y, 2.0)

    h = 1e-5
    fd = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            up = rows.copy()
            up[i, j] += h
            dn = rows.copy()
            dn[i, j] -= h
            fd[i, j] = (model.margin_and_grad_dist(up, y, 2.0, validate=False)[0]
                        - model.margin_and_grad_dist(dn, y, 2.0, validate=False)[0]) / (2 * h)
    assert np.allclose(norms, np.linalg.norm(fd, axis=1), atol=1e-3)


def test_ranking_pipeline_on_real_encoding(vocab):
    spec = TinyTransformerSpec(layers=1, heads=2, model_dim=8, ff_dim=16,
                               max_len=32, vocab_size=vocab.size, num_classes=2)
    model = TinyTransformer(spec, "SENTENCE", seed=1)
    words = ["boston", "dallas", "ab"]
    enc = encode_words(words, vocab)
    norms = token_grad_norms(model, enc, 0, 5.0)
    assert norms.shape == (len(enc.ids),)
    ranking = rank_words(enc, norms)
    elig = word_eligibility(words, vocab)
    assert elig[2] is False
    chosen, shortfall = select_targets(ranking, 1, elig)
    assert len(chosen) == 1 and chosen[0] in (0, 1)
    report = ranking_report(words, ranking, elig)
    assert report["order"] == ranking.order
    assert [w["word"] for w in report["words"]] == words
    assert [w["eligible"] for w in report["words"]] == elig
    assert report["words"][0]["score"] == pytest.approx(ranking.scores[0])
