"""Dataset ingestion (sentence CSV, CoNLL token files) and synthetic fixtures.

The fixtures plant a class-deciding keyword in each sentence. Keywords are
built as start + signal + end from small pools, so the standard tokenizer
splits every keyword into [start, ##signal, ##end] and a small transformer
can tie the signal piece to the label. That makes the keyword genuinely
vulnerable to middle-subtoken substitution.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FIXTURE_KINDS = ("SENTENCE4", "TOKEN-NER")


@dataclass
class SentenceRecord:
    text: str
    label: int


@dataclass
class TokenRecord:
    tokens: list[str]
    tags: list[str]
    spans: list[tuple[int, int, str]]  # (start_word, end_word_exclusive, type)


# ---- fixture vocabulary ----

_STARTS2 = ["ba", "ce", "di", "fo", "gu", "ha", "ji", "ko", "lu", "me",
            "na", "po", "ra", "su", "ta", "vo"]
_SIGNALS2 = ["ox", "ex", "ix", "ux"]          # class c uses _SIGNALS2[c] / _SIGNALS3[c]
_SIGNALS3 = ["oxo", "exo", "ixo", "uxo"]
_ENDS = ["fy", "gy", "ky", "my", "py", "ry", "ty", "wy"]
_NEUTRAL2 = ["ar", "el", "im", "on", "ut", "or", "en", "is",
             "al", "um", "ed", "it", "an", "es", "ol", "ur"]
_NEUTRAL3 = ["ard", "eld", "int", "ond", "urt", "orn", "end", "ist"]
_NEUTRAL4 = ["ando", "ergo", "isto", "ondo"]
_LOOKALIKE = ["ll", "11"]
_FILLERS = ["with", "from", "over", "under", "about", "around", "between",
            "before", "after", "through", "toward", "without", "people",
            "market", "garden", "window", "silver", "yellow", "stone",
            "river", "cloud", "field", "light", "music", "paper", "table",
            "green", "north", "south", "plain", "small", "large", "quiet",
            "fresh", "early", "round"]


def fixture_vocab_tokens() -> list[str]:
    tokens = ["[PAD]", "[UNK]", "."]
    tokens += [chr(c) for c in range(ord("a"), ord("z") + 1)]
    tokens += _STARTS2
    tokens += ["da", "bo", "boston"]
    tokens += _FILLERS
    tokens += ["##" + chr(c) for c in range(ord("a"), ord("z") + 1)]
    tokens += ["##" + s for s in _SIGNALS2 + _SIGNALS3]
    tokens += ["##" + s for s in _NEUTRAL2 + _NEUTRAL3 + _NEUTRAL4]
    tokens += ["##" + s for s in _LOOKALIKE]
    tokens += ["##" + s for s in _ENDS]
    tokens += ["##as", "##sf"]
    return tokens


def _keyword(rng: np.random.Generator, cls: int) -> str:
    signal = _SIGNALS2[cls] if rng.random() < 0.6 else _SIGNALS3[cls]
    return str(rng.choice(_STARTS2)) + signal + str(rng.choice(_ENDS))


def _gen_sentence4(size: int, seed: int) -> list[SentenceRecord]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
    records = []
    for i in range(size):
        cls = i % 4
        words = [str(rng.choice(_FILLERS)) for _ in range(int(rng.integers(7, 12)))]
        words.insert(int(rng.integers(0, len(words) + 1)), _keyword(rng, cls))
        if rng.random() < 0.25:
            words.append(".")
        records.append(SentenceRecord(" ".join(words), cls))
    return records


_ENTITY_SIGNALS = {"PER": 0, "LOC": 1}  # entity type -> class index into signal pools


def _gen_token_ner(size: int, seed: int) -> list[TokenRecord]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 505]))
    records = []
    ent_counter = 0
    for _ in range(size):
        tokens = [str(rng.choice(_FILLERS)) for _ in range(int(rng.integers(8, 13)))]
        tags = ["O"] * len(tokens)
        n_ent = 1 if rng.random() < 0.7 else 2
        placed: list[tuple[int, int]] = []
        for _ in range(n_ent):
            etype = "PER" if ent_counter % 2 == 0 else "LOC"
            ent_counter += 1
            length = 1 if rng.random() < 0.7 else 2
            ent_words = [_keyword(rng, _ENTITY_SIGNALS[etype]) for _ in range(length)]
            ent_tags = ["B-" + etype] + ["I-" + etype] * (length - 1)
            pos = int(rng.integers(0, len(tokens) + 1))
            while any(s < pos < e for s, e in placed):  # never split an earlier entity
                pos = int(rng.integers(0, len(tokens) + 1))
            tokens[pos:pos] = ent_words
            tags[pos:pos] = ent_tags
            placed = [(s + length, e + length) if s >= pos else (s, e) for s, e in placed]
            placed.append((pos, pos + length))
        spans, _ = decode_bio(tags)
        records.append(TokenRecord(tokens, tags, spans))
    return records


def write_sentence_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "text"])
        for rec in records:
            writer.writerow([rec.label, rec.text])


def write_conll(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            for tok, tag in zip(rec.tokens, rec.tags):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")


def generate_fixture(kind: str, size: int, seed: int, out_dir, name: str | None = None) -> dict:
    """Write the fixture vocabulary and a deterministic dataset; returns paths."""
    kind = kind.upper()
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"kind must be one of {FIXTURE_KINDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_path = out_dir / "vocab.txt"
    vocab_path.write_text("\n".join(fixture_vocab_tokens()) + "\n", encoding="utf-8")
    stem = name or f"{kind.lower()}_{seed}"
    if kind == "SENTENCE4":
        data_path = out_dir / f"{stem}.csv"
        write_sentence_csv(data_path, _gen_sentence4(size, seed))
    else:
        data_path = out_dir / f"{stem}.conll"
        write_conll(data_path, _gen_token_ner(size, seed))
    return {"vocab": str(vocab_path), "data": str(data_path)}


# ---- ingestion ----

def ingest_sentence_csv(path, label_map: dict | None = None) -> list[SentenceRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "text"]:
            raise ValueError(f"{path}: expected header 'label,text', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            raw, text = row
            if label_map is not None and raw in label_map:
                label = int(label_map[raw])
            else:
                try:
                    label = int(raw)
                except ValueError:
                    raise ValueError(f"{path}: line {lineno}: unknown label {raw!r}") from None
            records.append(SentenceRecord(text, label))
    return records


def decode_bio(tags: list[str]) -> tuple[list[tuple[int, int, str]], list[int]]:
    """BIO spans plus the positions of dangling I- tags (treated as B)."""
    spans = []
    dangling = []
    cur_start = None
    cur_type = None
    for i, tag in enumerate(tags):
        if tag == "O":
            if cur_start is not None:
                spans.append((cur_start, i, cur_type))
                cur_start = None
        elif tag.startswith("B-"):
            if cur_start is not None:
                spans.append((cur_start, i, cur_type))
            cur_start, cur_type = i, tag[2:]
        elif tag.startswith("I-"):
            if cur_start is None or cur_type != tag[2:]:
                if cur_start is not None:
                    spans.append((cur_start, i, cur_type))
                dangling.append(i)
                cur_start, cur_type = i, tag[2:]
        else:
            raise ValueError(f"not a BIO tag: {tag!r}")
    if cur_start is not None:
        spans.append((cur_start, len(tags), cur_type))
    return spans, dangling


def ingest_conll(path) -> list[TokenRecord]:
    records = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            spans, dangling = decode_bio(tags)
            for pos in dangling:
                log.warning("%s: dangling I- tag at sentence %d token %d treated as B",
                            path, len(records), pos)
            records.append(TokenRecord(list(tokens), list(tags), spans))
            tokens.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                flush()
                continue
            fields = line.split()
            if len(fields) < 2:
                raise ValueError(f"{path}: malformed line {line!r}")
            tokens.append(fields[0])
            tags.append(fields[-1])
    flush()
    return records


def span_f1(gold: list[list[tuple]], pred: list[list[tuple]]) -> dict:
    """Micro-averaged exact-span F1 over parallel per-sentence span lists."""
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        gset, pset = set(map(tuple, g)), set(map(tuple, p))
        tp += len(gset & pset)
        fp += len(pset - gset)
        fn += len(gset - pset)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}
