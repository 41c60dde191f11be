"""Campaign runner and metrics: success rates, query counts, edit distances,
re-tokenization accounting, and the adversarial retraining loop.

Each attacked example becomes one JSONL row; the report is a pure fold over
those rows, so it can always be recomputed from the persisted results.
"""

import json
import multiprocessing
import warnings
from dataclasses import asdict, replace

import numpy as np

from . import kernels
from .data import SentenceRecord, TokenRecord, decode_bio, span_f1
from .model import TinyTransformer, TinyTransformerSpec, train_reference
from .search import (AttackConfig, AttackInfeasible, AttackResult, TokenTarget,
                     attack_sentence)
from .vocab import Vocabulary, encode_words, tokenize
from .visual import Tables

SCHEMA_VERSION = 1
QUERY_DEFINITION = (
    "a query is one forward evaluation of the victim model on a fully discrete "
    "token sequence: the post-optimization hard-sample check for each attempted "
    "word count, plus the re-tokenized verification whenever that check reaches "
    "zero margin; relaxed forward passes inside the optimizer are not queries"
)


class CampaignError(RuntimeError):
    pass


def edit_distance(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance."""
    ca = np.array([ord(c) for c in a], dtype=np.int32)
    cb = np.array([ord(c) for c in b], dtype=np.int32)
    return int(kernels.levenshtein_codes(ca, cb))


def sentence_edit_distance(result) -> int:
    """Sum of per-word edit distances over the modified words of a result."""
    subs = result["substitutions"] if isinstance(result, dict) else result.substitutions
    return sum(edit_distance(s["original"], s["replacement"]) for s in subs)


def retokenization_check(result, vocab: Vocabulary) -> dict:
    """Compare attack-time subtoken ids with a fresh tokenization per modified word."""
    subs = result["substitutions"] if isinstance(result, dict) else result.substitutions
    success = result["success"] if isinstance(result, dict) else result.success
    words = []
    for s in subs:
        if s["replacement"] == s["original"]:
            continue
        fresh = tokenize(s["replacement"], vocab)
        words.append({
            "original": s["original"],
            "replacement": s["replacement"],
            "attack_ids": list(s["subtoken_ids"]),
            "retokenized_ids": [int(t) for t in fresh],
            "consistent": list(s["subtoken_ids"]) == [int(t) for t in fresh],
        })
    any_inconsistent = any(not w["consistent"] for w in words)
    return {
        "words": words,
        "any_inconsistent": any_inconsistent,
        "coincided_with_failure": any_inconsistent and not success,
    }


def predict_sentence(model: TinyTransformer, vocab: Vocabulary, text: str) -> int:
    enc = encode_words(text.split(), vocab)
    return int(model.predict_ids(np.array(enc.ids, dtype=np.int64)))


def predict_word_tags(model: TinyTransformer, vocab: Vocabulary, tokens: list[str]) -> list[int]:
    """Per-word tag predictions read off each word's first subtoken."""
    enc = encode_words(tokens, vocab)
    preds = model.predict_ids(np.array(enc.ids, dtype=np.int64))
    return [int(preds[s]) for s, _ in enc.word_spans]


def _sentence_units(dataset, model, vocab):
    units = []
    for idx, rec in enumerate(dataset):
        if predict_sentence(model, vocab, rec.text) == rec.label:
            units.append({"example_index": idx, "entity_index": None})
    return units


def _token_units(dataset, model, vocab):
    tag_index = {t: i for i, t in enumerate(model.tag_names)}
    units = []
    for idx, rec in enumerate(dataset):
        word_preds = predict_word_tags(model, vocab, rec.tokens)
        for ent_i, (s, e, etype) in enumerate(rec.spans):
            label = tag_index[rec.tags[s]]
            if word_preds[s] == label:
                units.append({"example_index": idx, "entity_index": ent_i,
                              "target_word": s, "label": label,
                              "span": [s, e, etype]})
    return units


def _attack_unit(unit, dataset, model, vocab, tables, config, task):
    """One attacked unit to one JSONL row; None when no word is attackable."""
    idx = unit["example_index"]
    rec = dataset[idx]
    try:
        return _attack_unit_inner(unit, rec, model, vocab, tables, config, task)
    except AttackInfeasible:
        return None


def _attack_unit_inner(unit, rec, model, vocab, tables, config, task):
    idx = unit["example_index"]
    if task == "SENTENCE":
        words = rec.text.split()
        result = attack_sentence(model, words, rec.label, config, vocab, tables,
                                 example_key=idx)
        row = {
            "schema_version": SCHEMA_VERSION,
            "task": task,
            "example_index": idx,
            "label": rec.label,
            "result": result.to_dict(config),
        }
        final_pred = predict_sentence(model, vocab, result.adversarial_text)
        row["final_pred"] = final_pred
        row["final_correct"] = final_pred == rec.label
    else:
        target = TokenTarget(unit["target_word"], unit["label"])
        result = attack_sentence(model, rec.tokens, unit["label"], config, vocab,
                                 tables, target=target,
                                 example_key=idx * 256 + unit["entity_index"])
        row = {
            "schema_version": SCHEMA_VERSION,
            "task": task,
            "example_index": idx,
            "entity_index": unit["entity_index"],
            "entity_span": unit["span"],
            "label": unit["label"],
            "result": result.to_dict(config),
        }
        adv_tokens = result.adversarial_text.split()
        word_preds = predict_word_tags(model, vocab, adv_tokens)
        pred_tags = [model.tag_names[p] for p in word_preds]
        pred_spans, _ = decode_bio(pred_tags)
        row["final_pred"] = word_preds[unit["target_word"]]
        row["final_correct"] = row["final_pred"] == unit["label"]
        row["gold_spans"] = [list(s) for s in rec.spans]
        row["adv_pred_spans"] = [list(s) for s in pred_spans]
    row["retokenization"] = retokenization_check(result, vocab)
    row["sentence_edit_distance"] = sentence_edit_distance(result)
    return row


_WORKER: dict = {}


def _init_worker(payload):
    _WORKER.update(payload)


def _worker_attack(unit):
    return _attack_unit(unit, _WORKER["dataset"], _WORKER["model"], _WORKER["vocab"],
                        _WORKER["tables"], _WORKER["config"], _WORKER["task"])


def compute_report(rows: list[dict], meta: dict) -> dict:
    """Aggregate a campaign report from result rows alone."""
    n = len(rows)
    successes = [r for r in rows if r["result"]["success"]]
    failures = [r for r in rows if not r["result"]["success"]]
    breakdown = {"unoptimized": 0, "tokenization_inconsistency": 0}
    for r in failures:
        breakdown[r["result"]["failure_kind"]] += 1
    modified = inconsistent = 0
    for r in rows:
        for w in r["retokenization"]["words"]:
            modified += 1
            inconsistent += int(not w["consistent"])
    dists = [r["sentence_edit_distance"] for r in successes]
    report = {
        "schema_version": SCHEMA_VERSION,
        "query_definition": QUERY_DEFINITION,
        "n_attempted": n,
        "n_success": len(successes),
        "success_rate": len(successes) / n if n else 0.0,
        "mean_queries": float(np.mean([r["result"]["queries"] for r in rows])) if rows else 0.0,
        "mean_edit_distance": float(np.mean(dists)) if dists else None,
        "retokenization_inconsistency_rate": inconsistent / modified if modified else 0.0,
        "failure_breakdown": breakdown,
    }
    report.update(meta)
    if report.get("task") == "SENTENCE":
        report["adv_accuracy"] = sum(r["final_correct"] for r in rows) / n if n else 0.0
        # failures that nonetheless flip the model break adv_accuracy + success_rate = 1
        report["failures_still_flipping"] = sum(
            1 for r in failures if not r["final_correct"])
    else:
        gold = [r["gold_spans"] for r in rows]
        pred = [r["adv_pred_spans"] for r in rows]
        report["adv_f1"] = span_f1(gold, pred)["f1"]
        report["adv_f1_averaging"] = "micro over attacked sentences, exact span match"
    return report


def run_campaign(dataset, model: TinyTransformer, config: AttackConfig, sample_size,
                 seed: int, vocab: Vocabulary, tables: Tables | None = None,
                 parallel: int = 1, dataset_id: str = "", model_id: str = "") -> tuple[dict, list[dict]]:
    """Attack a seeded sample of correctly-classified inputs and fold the metrics.

    SENTENCE campaigns sample sentences; TOKEN campaigns sample entities.
    Deterministic for a fixed seed, independent of the parallelism degree.
    """
    task = model.task
    units = (_sentence_units if task == "SENTENCE" else _token_units)(dataset, model, vocab)
    if not units:
        raise CampaignError("no correctly-classified inputs to attack")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 606]))
    if sample_size is not None and sample_size < len(units):
        keep = sorted(rng.choice(len(units), size=sample_size, replace=False).tolist())
        units = [units[i] for i in keep]

    config = replace(config, seed=seed)
    if parallel > 1:
        payload = {"dataset": dataset, "model": model, "vocab": vocab,
                   "tables": tables, "config": config, "task": task}
        with multiprocessing.Pool(parallel, initializer=_init_worker,
                                  initargs=(payload,)) as pool:
            maybe_rows = pool.map(_worker_attack, units)
    else:
        maybe_rows = [_attack_unit(unit, dataset, model, vocab, tables, config, task)
                      for unit in units]
    rows = [r for r in maybe_rows if r is not None]
    n_infeasible = len(maybe_rows) - len(rows)
    meta = {
        "task": task,
        "dataset_id": dataset_id,
        "model_id": model_id,
        "config": asdict(config),
        "seed": seed,
        "n_infeasible": n_infeasible,
        "n_eligible_pool": len(units),
    }
    return compute_report(rows, meta), rows


def write_results_jsonl(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_results_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def adversarial_records_from_rows(rows: list[dict], dataset, task: str):
    """Successful attacks as new training records carrying the original labels."""
    out = []
    for r in rows:
        if not r["result"]["success"]:
            continue
        rec = dataset[r["example_index"]]
        if task == "SENTENCE":
            out.append(SentenceRecord(r["result"]["adversarial_text"], rec.label))
        else:
            out.append(TokenRecord(r["result"]["adversarial_text"].split(),
                                   list(rec.tags), list(rec.spans)))
    return out


def adversarial_retrain(spec: TinyTransformerSpec, train_set, adv_examples, seed: int,
                        vocab: Vocabulary, task: str, epochs: int = 20,
                        lr: float = 1e-3, tag_names=None) -> TinyTransformer:
    """Retrain from scratch on original plus adversarial examples (labels kept)."""
    if not adv_examples:
        warnings.warn("empty adversarial set; performing a plain retrain")
    combined = list(train_set) + list(adv_examples)
    return train_reference(combined, spec, seed, vocab, task, epochs=epochs, lr=lr,
                           tag_names=tag_names)
