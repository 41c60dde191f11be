"""Vocabulary loading, tokenization, the three-part adversarial split, and the
attachable-subtoken length census."""

import numpy as np
import pytest

from charsub.vocab import (SplitInfeasible, VocabError, adv_tokenize, detokenize,
                           encode_words, load_vocab, subword_length_census,
                           tokenize)


def _write(tmp_path, name, tokens):
    path = tmp_path / name
    path.write_text("\n".join(tokens) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def mini_vocab(tmp_path):
    tokens = ["[UNK]", "bo", "da", "bos", "boston",
              "##s", "##f", "##l", "##t", "##on", "##sf", "##ll", "##as", "##lon"]
    return load_vocab(_write(tmp_path, "mini.txt", tokens))


# ---- loading ----

def test_load_four_line_file(tmp_path):
    vocab = load_vocab(_write(tmp_path, "v.txt", ["a", "b", "##c", "[UNK]"]))
    assert vocab.size == 4
    assert list(vocab.attachable_mask) == [False, False, True, False]
    assert vocab.id_of == {"a": 0, "b": 1, "##c": 2, "[UNK]": 3}


def test_load_is_deterministic(tmp_path):
    path = _write(tmp_path, "v.txt", ["a", "b", "##c", "[UNK]"])
    first = load_vocab(path)
    second = load_vocab(path)
    assert first.id_of == second.id_of
    assert first.sha256 == second.sha256


def test_duplicate_token_names_the_line(tmp_path):
    path = _write(tmp_path, "dup.txt", ["a", "b", "a", "[UNK]"])
    with pytest.raises(VocabError, match="line 3"):
        load_vocab(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(VocabError):
        load_vocab(path)


def test_start_prefix_conventions(tmp_path):
    for marker in ("Ġ", "▁"):
        path = _write(tmp_path, f"m_{ord(marker[0])}.txt",
                      [f"{marker}ab", "cd", "[UNK]"])
        vocab = load_vocab(path, convention=marker)
        # attachable = unmarked; specials stay out via the special mask
        assert list(vocab.attachable_mask) == [False, True, True]
        assert list(vocab.special_mask) == [False, False, True]
        assert not vocab.candidate_mask()[2]
        assert vocab.core[0] == "ab"
        assert vocab.core[1] == "cd"


def test_special_tokens_detected(mini_vocab):
    assert mini_vocab.special_mask[mini_vocab.id_of["[UNK]"]]
    assert not mini_vocab.special_mask[mini_vocab.id_of["bo"]]
    assert not mini_vocab.candidate_mask()[mini_vocab.id_of["[UNK]"]]
    assert mini_vocab.candidate_mask()[mini_vocab.id_of["##ll"]]
    assert not mini_vocab.candidate_mask()[mini_vocab.id_of["boston"]]


# ---- standard tokenization ----

def test_tokenize_greedy_longest_match(mini_vocab, tmp_path):
    # longest word-start wins: "bos" beats "bo"
    ids = tokenize("bosfon", mini_vocab)
    assert [mini_vocab.tokens[i] for i in ids] == ["bos", "##f", "##on"]
    # without "bos", the longest continuation wins: "##sf" beats "##s"
    small = load_vocab(_write(tmp_path, "nostart.txt",
                              ["[UNK]", "bo", "##s", "##f", "##sf", "##on"]))
    ids = tokenize("bosfon", small)
    assert [small.tokens[i] for i in ids] == ["bo", "##sf", "##on"]


def test_tokenize_whole_word_entry(mini_vocab):
    assert tokenize("boston", mini_vocab) == [mini_vocab.id_of["boston"]]


def test_tokenize_unknown_character_falls_back_to_unk(mini_vocab):
    assert tokenize("bozqz", mini_vocab) == [mini_vocab.unk_id]


def test_tokenize_rejects_empty_and_whitespace(mini_vocab):
    with pytest.raises(ValueError):
        tokenize("", mini_vocab)
    with pytest.raises(ValueError):
        tokenize("a b", mini_vocab)


def test_encode_words_spans(mini_vocab):
    enc = encode_words(["bosfon", "boston"], mini_vocab)
    assert enc.word_spans == [(0, 3), (3, 4)]
    assert enc.span_of(1) == (3, 4)


# ---- adversarial split ----

def test_adv_tokenize_dallas(tmp_path):
    vocab = load_vocab(_write(tmp_path, "d.txt",
                              ["[UNK]", "da", "##ll", "##as", "##a", "##l", "##s"]))
    tw = adv_tokenize("dallas", vocab)
    assert [vocab.tokens[i] for i in tw.subtoken_ids] == ["da", "##ll", "##as"]
    assert tw.roles == ["START", "MIDDLE", "END"]
    assert tw.replaceable_positions == [1]


def test_adv_tokenize_short_word_infeasible(mini_vocab):
    with pytest.raises(SplitInfeasible):
        adv_tokenize("ab", mini_vocab)


def test_adv_tokenize_round_trip(mini_vocab):
    for word in ("bosfon", "boslon", "boston"):
        tw = adv_tokenize(word, mini_vocab)
        assert detokenize(tw.subtoken_ids, mini_vocab) == word
        assert len(tw.subtoken_ids) >= 3
        assert tw.replaceable_positions


def test_adv_tokenize_greedy_start_can_block_short_words(vocab):
    # greedy START grabs the 2-char prefix and never backtracks, so a
    # 3-letter word starting with a known 2-char token has no room left
    # for MIDDLE + END
    with pytest.raises(SplitInfeasible):
        adv_tokenize("bax", vocab)
    tw = adv_tokenize("qax", vocab)
    assert [vocab.tokens[i] for i in tw.subtoken_ids] == ["q", "##a", "##x"]


def test_adv_tokenize_shrinks_end_when_middle_would_be_empty(tmp_path):
    vocab = load_vocab(_write(tmp_path, "s.txt", ["[UNK]", "ab", "##c", "##d", "##cd"]))
    tw = adv_tokenize("abcd", vocab)
    assert [vocab.tokens[i] for i in tw.subtoken_ids] == ["ab", "##c", "##d"]
    assert tw.roles == ["START", "MIDDLE", "END"]


def test_adv_tokenize_start_respects_half_bound(mini_vocab):
    # "boston" has the whole word in vocab, but START may cover at most
    # ceil(6/2)=3 characters, so the longest admissible prefix is "bos"
    tw = adv_tokenize("boston", mini_vocab)
    assert mini_vocab.tokens[tw.subtoken_ids[0]] == "bos"
    assert detokenize(tw.subtoken_ids, mini_vocab) == "boston"


def test_adv_tokenize_properties_on_random_words(vocab):
    rng = np.random.default_rng(9)
    letters = "abcdefghijklmnopqrstuvwxyz"
    for _ in range(1000):
        n = int(rng.integers(4, 13))
        word = "".join(rng.choice(list(letters), size=n))
        tw = adv_tokenize(word, vocab)
        assert detokenize(tw.subtoken_ids, vocab) == word
        assert len(tw.subtoken_ids) >= 3
        assert len(tw.replaceable_positions) >= 1
        assert tw.roles[0] == "START"
        assert all(r == "MIDDLE" for r in
                   (tw.roles[1:-1] if tw.roles[-1] == "END" else tw.roles[1:]))


def test_adv_tokenize_start_is_maximal(vocab):
    import math
    rng = np.random.default_rng(10)
    letters = "abcdefghijklmnopqrstuvwxyz"
    for _ in range(100):
        n = int(rng.integers(4, 13))
        word = "".join(rng.choice(list(letters), size=n))
        tw = adv_tokenize(word, vocab)
        start_len = len(vocab.core[tw.subtoken_ids[0]])
        bound = math.ceil(n / 2)
        longer = [t for i, t in enumerate(vocab.tokens)
                  if not vocab.attachable_mask[i] and not vocab.special_mask[i]
                  and word.startswith(t) and start_len < len(t) <= bound]
        assert not longer, f"{word!r}: START {start_len} but {longer} exist"


def test_detokenize_rejects_bad_ids(mini_vocab):
    with pytest.raises(VocabError):
        detokenize([0, 999], mini_vocab)


def test_detokenize_inverts_tokenize(mini_vocab):
    for word in ("bosfon", "boston", "bollon"):
        ids = tokenize(word, mini_vocab)
        if ids == [mini_vocab.unk_id]:
            continue
        assert detokenize(ids, mini_vocab) == word


# ---- census ----

def test_census_empty_attachable_set(tmp_path):
    vocab = load_vocab(_write(tmp_path, "n.txt", ["a", "b", "[UNK]"]))
    assert subword_length_census(vocab) == []


def test_census_counts_crafted_vocab(tmp_path):
    tokens = ["[UNK]", "a", "##a", "##b", "##ab", "##a1", "##é", "##xyz"]
    vocab = load_vocab(_write(tmp_path, "c.txt", tokens))
    rows = {r.length: r for r in subword_length_census(vocab)}
    # only pure a-z attachables count: ##a ##b (1), ##ab (2), ##xyz (3)
    assert rows[1].count == 2 and rows[1].potential == 26
    assert rows[2].count == 1 and rows[2].potential == 676
    assert rows[3].count == 1 and rows[3].potential == 26 ** 3
    assert rows[1].ratio == pytest.approx(2 / 26)


def test_census_on_reference_vocabulary(bert_vocab):
    # counts frozen from an independent scan of the raw vocabulary file
    expected = {1: 26, 2: 438, 3: 1483, 4: 1573, 5: 695}
    rows = {r.length: r for r in subword_length_census(bert_vocab)}
    for length, count in expected.items():
        assert rows[length].count == count
        assert rows[length].potential == 26 ** length
        assert rows[length].ratio == pytest.approx(count / 26 ** length)
    assert rows[1].ratio == 1.0
