"""Word vulnerability ranking from per-subtoken gradient norms."""

from dataclasses import dataclass

import numpy as np

from .model import TinyTransformer
from .vocab import SentenceEncoding, SplitInfeasible, Vocabulary, adv_tokenize, tokenize


@dataclass
class WordRanking:
    order: list[int]   # word indices, most vulnerable first
    scores: np.ndarray  # per-word mean gradient norm, indexed by word


def one_hot_rows(ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.zeros((ids.shape[0], vocab_size))
    rows[np.arange(ids.shape[0]), ids] = 1.0
    return rows


def token_grad_norms(model: TinyTransformer, enc: SentenceEncoding, y: int | None,
                     kappa: float, targets=None) -> np.ndarray:
    """L2 norm of the margin-loss gradient restricted to each subtoken's row."""
    rows = one_hot_rows(enc.ids, model.spec.vocab_size)
    _, grad = model.margin_and_grad_dist(rows, y, kappa, targets)
    return np.linalg.norm(grad, axis=1)


def rank_words(enc: SentenceEncoding, norms: np.ndarray) -> WordRanking:
    """Mean subtoken norm per word, sorted descending; ties keep the lower index."""
    if len(norms) != len(enc.ids):
        raise ValueError(f"{len(norms)} norms for {len(enc.ids)} subtokens")
    scores = np.array([float(np.mean(norms[s:e])) for s, e in enc.word_spans])
    order = list(np.argsort(-scores, kind="stable"))
    return WordRanking([int(i) for i in order], scores)


def word_eligibility(words: list[str], vocab: Vocabulary) -> list[bool]:
    """A word can be attacked if it is long enough, not punctuation, splittable,
    and not already out-of-vocabulary."""
    out = []
    for w in words:
        ok = len(w) >= 3 and any(c.isalnum() for c in w)
        if ok and tokenize(w, vocab) == [vocab.unk_id]:
            ok = False
        if ok:
            try:
                adv_tokenize(w, vocab)
            except SplitInfeasible:
                ok = False
        out.append(ok)
    return out


def select_targets(ranking: WordRanking, k: int, eligibility: list[bool]) -> tuple[list[int], bool]:
    """First k eligible words in ranking order; flags a shortfall when fewer exist."""
    if k < 1 or k > len(ranking.order):
        raise ValueError(f"k={k} outside [1, {len(ranking.order)}]")
    chosen = [w for w in ranking.order if eligibility[w]][:k]
    return chosen, len(chosen) < k


def ranking_report(words: list[str], ranking: WordRanking, eligibility: list[bool]) -> dict:
    return {
        "order": ranking.order,
        "words": [
            {"index": i, "word": w, "score": float(ranking.scores[i]), "eligible": eligibility[i]}
            for i, w in enumerate(words)
        ],
    }
