"""Subword vocabularies: loading, greedy tokenization, adversarial word splits.

Three continuation conventions are supported. "##" marks attachable pieces
(WordPiece style); "Ġ" and "▁" mark word-initial pieces, so there the
attachable tokens are the unmarked ones. Internally everything is reduced to
marker-stripped core strings plus an attachable mask, so downstream modules
never look at the convention again.
"""

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

CONVENTIONS = ("##", "Ġ", "▁")  # "##", "Ġ", "▁"

_SPECIAL_RE = re.compile(r"^(\[.*\]|<.*>)$")


class VocabError(ValueError):
    pass


class SplitInfeasible(Exception):
    """Raised when adv_tokenize cannot produce a split with a replaceable middle."""


class Vocabulary:
    """Ordered subword list with dense ids and an attachable mask."""

    def __init__(self, tokens: list[str], convention: str, unk_token: str | None = None):
        if convention not in CONVENTIONS:
            raise VocabError(f"unsupported convention {convention!r}")
        if not tokens:
            raise VocabError("empty vocabulary")
        self.tokens = list(tokens)
        self.convention = convention
        self.id_of: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.id_of:
                raise VocabError(f"duplicate token {tok!r} at line {i + 1}")
            if not tok:
                raise VocabError(f"empty token at line {i + 1}")
            self.id_of[tok] = i

        marker = convention
        if convention == "##":
            attachable = [t.startswith(marker) for t in self.tokens]
            self.core = [t[2:] if a else t for t, a in zip(self.tokens, attachable)]
        else:
            # start-prefix conventions: the marked tokens begin words
            attachable = [not t.startswith(marker) for t in self.tokens]
            self.core = [t if a else t[len(marker):] for t, a in zip(self.tokens, attachable)]
        self.attachable_mask = np.array(attachable, dtype=bool)
        self.special_mask = np.array([bool(_SPECIAL_RE.match(t)) for t in self.tokens], dtype=bool)

        if unk_token is None:
            for cand in ("[UNK]", "<unk>"):
                if cand in self.id_of:
                    unk_token = cand
                    break
        if unk_token is None or unk_token not in self.id_of:
            raise VocabError(f"unk token {unk_token!r} not present in vocabulary")
        self.unk_token = unk_token
        self.unk_id = self.id_of[unk_token]
        self.special_mask[self.unk_id] = True

        # greedy-match lookups keyed by core text; ties keep the lowest id
        self._start_lookup: dict[str, int] = {}
        self._cont_lookup: dict[str, int] = {}
        for i, core in enumerate(self.core):
            table = self._cont_lookup if attachable[i] else self._start_lookup
            table.setdefault(core, i)
        self._start_maxlen = max((len(c) for c in self._start_lookup), default=0)
        self._cont_maxlen = max((len(c) for c in self._cont_lookup), default=0)

        digest = hashlib.sha256()
        digest.update("\n".join(self.tokens).encode("utf-8"))
        digest.update(b"\0")
        digest.update(convention.encode("utf-8"))
        self.sha256 = digest.hexdigest()

    @property
    def size(self) -> int:
        return len(self.tokens)

    def candidate_mask(self) -> np.ndarray:
        """Attachable, non-special tokens: the legal substitution candidates."""
        return self.attachable_mask & ~self.special_mask

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class TokenizedWord:
    word: str
    subtoken_ids: list[int]
    roles: list[str]  # "START" | "MIDDLE" | "END"
    replaceable_positions: list[int] = field(default_factory=list)


@dataclass
class SentenceEncoding:
    """Standard tokenization of a word sequence with word -> subtoken spans."""
    ids: list[int]
    word_spans: list[tuple[int, int]]  # half-open [start, end) into ids

    def span_of(self, word_index: int) -> tuple[int, int]:
        return self.word_spans[word_index]


def load_vocab(path, convention: str = "##", unk_token: str | None = None) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().splitlines()
    if not tokens:
        raise VocabError(f"empty vocabulary file: {path}")
    return Vocabulary(tokens, convention, unk_token)


def _greedy(word: str, lookup: dict[str, int], maxlen: int, pos: int) -> tuple[int, int] | None:
    limit = min(len(word) - pos, maxlen)
    for n in range(limit, 0, -1):
        tid = lookup.get(word[pos:pos + n])
        if tid is not None:
            return tid, n
    return None


def tokenize(word: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match segmentation; whole word falls back to unk on a dead end."""
    if not word or any(c.isspace() for c in word):
        raise ValueError(f"tokenize expects a non-empty whitespace-free word, got {word!r}")
    ids: list[int] = []
    pos = 0
    while pos < len(word):
        if pos == 0:
            hit = _greedy(word, vocab._start_lookup, vocab._start_maxlen, pos)
        else:
            hit = _greedy(word, vocab._cont_lookup, vocab._cont_maxlen, pos)
        if hit is None:
            return [vocab.unk_id]
        tid, n = hit
        ids.append(tid)
        pos += n
    return ids


def _longest_attachable_suffix(word: str, vocab: Vocabulary, max_len: int) -> tuple[int, int] | None:
    for n in range(min(max_len, vocab._cont_maxlen, len(word)), 0, -1):
        tid = vocab._cont_lookup.get(word[len(word) - n:])
        if tid is not None:
            return tid, n
    return None


def adv_tokenize(word: str, vocab: Vocabulary) -> TokenizedWord:
    """Split word into longest START, greedy attachable MIDDLEs, and longest END.

    START is the longest vocabulary prefix no longer than half the word
    (rounded up); END the longest attachable suffix within the remaining half.
    If that leaves no middle, END gives up characters until one exists.
    """
    n = len(word)
    if n < 3:
        raise SplitInfeasible(f"word too short to split: {word!r}")

    start = _greedy(word, vocab._start_lookup, min(math.ceil(n / 2), vocab._start_maxlen), 0)
    if start is None:
        raise SplitInfeasible(f"no start subtoken for {word!r}")
    start_id, start_len = start

    end = _longest_attachable_suffix(word, vocab, min(n // 2, n - start_len))
    if end is not None and start_len + end[1] == n:
        # empty middle: shorten END so at least one middle character remains
        end = _longest_attachable_suffix(word, vocab, end[1] - 1)
    end_id, end_len = end if end is not None else (None, 0)

    middle = word[start_len:n - end_len]
    mid_ids: list[int] = []
    pos = 0
    while pos < len(middle):
        hit = _greedy(middle, vocab._cont_lookup, vocab._cont_maxlen, pos)
        if hit is None:
            raise SplitInfeasible(f"middle of {word!r} not coverable by attachable subtokens")
        mid_ids.append(hit[0])
        pos += hit[1]

    ids = [start_id] + mid_ids + ([end_id] if end_id is not None else [])
    if len(ids) < 3 or not mid_ids:
        raise SplitInfeasible(f"no split of {word!r} yields 3+ subtokens with a middle")
    roles = ["START"] + ["MIDDLE"] * len(mid_ids) + (["END"] if end_id is not None else [])
    replaceable = [i for i, r in enumerate(roles) if r == "MIDDLE"]
    return TokenizedWord(word, ids, roles, replaceable)


def detokenize(subtoken_ids, vocab: Vocabulary) -> str:
    parts = []
    for tid in subtoken_ids:
        tid = int(tid)
        if tid < 0 or tid >= vocab.size:
            raise VocabError(f"token id out of range: {tid}")
        parts.append(vocab.core[tid])
    return "".join(parts)


def encode_words(words: list[str], vocab: Vocabulary) -> SentenceEncoding:
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for w in words:
        sub = tokenize(w, vocab)
        spans.append((len(ids), len(ids) + len(sub)))
        ids.extend(sub)
    return SentenceEncoding(ids, spans)


@dataclass
class CensusRow:
    length: int
    count: int
    potential: int
    ratio: float


def subword_length_census(vocab: Vocabulary) -> list[CensusRow]:
    """Per-length counts of purely a-z attachable subtokens vs the 26^n potential."""
    counts: dict[int, int] = {}
    for i in range(vocab.size):
        if not vocab.attachable_mask[i] or vocab.special_mask[i]:
            continue
        core = vocab.core[i]
        if core and all("a" <= c <= "z" for c in core):
            counts[len(core)] = counts.get(len(core), 0) + 1
    if not counts:
        return []
    rows = []
    for n in range(1, max(counts) + 1):
        potential = 26 ** n
        count = counts.get(n, 0)
        rows.append(CensusRow(n, count, potential, count / potential))
    return rows
