"""Shared fixtures: synthetic datasets, trained models, and glyph tables.

Everything is session-scoped and deterministic, so expensive artifacts (model
training, table rendering) are paid once per run.
"""

from pathlib import Path

import pytest

from charsub import data, kernels
from charsub.data import generate_fixture, ingest_conll, ingest_sentence_csv
from charsub.model import TinyTransformerSpec, train_reference
from charsub.visual import build_tables
from charsub.vocab import load_vocab

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("charsub")


@pytest.fixture(scope="session")
def sent_fixture(work_dir):
    out = work_dir / "sent"
    train = generate_fixture("SENTENCE4", 600, 0, out, name="train")
    evalp = generate_fixture("SENTENCE4", 120, 1, out, name="eval")
    return {"dir": out, "vocab": train["vocab"], "train": train["data"],
            "eval": evalp["data"]}


@pytest.fixture(scope="session")
def vocab(sent_fixture):
    return load_vocab(sent_fixture["vocab"])


@pytest.fixture(scope="session")
def train_records(sent_fixture):
    return ingest_sentence_csv(sent_fixture["train"])


@pytest.fixture(scope="session")
def eval_records(sent_fixture):
    return ingest_sentence_csv(sent_fixture["eval"])


@pytest.fixture(scope="session")
def sent_model(train_records, eval_records, vocab):
    return train_reference(train_records, TinyTransformerSpec(), 0, vocab,
                           "SENTENCE", epochs=8, eval_dataset=eval_records)


@pytest.fixture(scope="session")
def tables_path(work_dir):
    return work_dir / "tables.bin"


@pytest.fixture(scope="session")
def tables(vocab, tables_path):
    return build_tables(vocab, None, "flat", cache_path=tables_path)


@pytest.fixture(scope="session")
def token_fixture(work_dir):
    out = work_dir / "token"
    train = generate_fixture("TOKEN-NER", 300, 2, out, name="train")
    evalp = generate_fixture("TOKEN-NER", 80, 3, out, name="eval")
    return {"dir": out, "vocab": train["vocab"], "train": train["data"],
            "eval": evalp["data"]}


@pytest.fixture(scope="session")
def token_train_records(token_fixture):
    return ingest_conll(token_fixture["train"])


@pytest.fixture(scope="session")
def token_eval_records(token_fixture):
    return ingest_conll(token_fixture["eval"])


@pytest.fixture(scope="session")
def token_model(token_train_records, token_eval_records, vocab):
    return train_reference(token_train_records, TinyTransformerSpec(), 0, vocab,
                           "TOKEN", epochs=12, eval_dataset=token_eval_records)


# A deliberately small vocabulary for oracle-vs-attack comparisons: the only
# attachable pieces are the fixture's signal and suffix subtokens, so
# exhaustive substitution search stays cheap and the candidate set is dense
# in label-flipping options.

@pytest.fixture(scope="session")
def small_vocab_path(work_dir):
    tokens = ["[PAD]", "[UNK]", "."] + list(data._FILLERS) + list(data._STARTS2)
    tokens += ["##" + s for s in data._SIGNALS2 + data._SIGNALS3 + data._ENDS]
    path = work_dir / "small_vocab.txt"
    path.write_text("\n".join(tokens) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_vocab(small_vocab_path):
    return load_vocab(small_vocab_path)


@pytest.fixture(scope="session")
def small_model(train_records, eval_records, small_vocab):
    return train_reference(train_records, TinyTransformerSpec(), 0, small_vocab,
                           "SENTENCE", epochs=8, eval_dataset=eval_records)


@pytest.fixture(scope="session")
def small_tables(small_vocab, work_dir):
    return build_tables(small_vocab, None, "flat",
                        cache_path=work_dir / "small_tables.bin")


@pytest.fixture(scope="session")
def bert_vocab():
    return load_vocab(DATA_DIR / "bert_base_uncased_vocab.txt")
