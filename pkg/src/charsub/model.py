"""Desk-scale transformer classifier with explicit forward and backward passes.

The classifier fulfils the differentiable contract the attack needs: an
embedding table, a forward pass that accepts either token ids or per-position
distributions over the vocabulary (mixture embedding), and exact gradients of
the margin loss with respect to those distributions. Everything is numpy;
the per-layer math lives in the jitted kernels module.
"""

import hashlib
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .vocab import Vocabulary, encode_words

TASKS = ("SENTENCE", "TOKEN")
CHECKPOINT_VERSION = 1


class ModelError(RuntimeError):
    pass


@dataclass
class TinyTransformerSpec:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    max_len: int = 64
    dropout: float = 0.0
    vocab_size: int = 0
    num_classes: int = 0

    def validate(self) -> None:
        if min(self.layers, self.heads, self.model_dim, self.ff_dim, self.max_len) <= 0:
            raise ModelError("spec dimensions must be positive")
        if self.model_dim % self.heads != 0:
            raise ModelError("model_dim must be divisible by heads")
        if self.vocab_size <= 0:
            raise ModelError("vocab_size must be set")
        if self.num_classes < 2:
            raise ModelError(f"degenerate classification: K={self.num_classes}")


def margin_loss(logits: np.ndarray, y: int, kappa: float) -> float:
    """max(p_y - max_{k!=y} p_k + kappa, 0) on raw logits."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if not 0 <= y < k:
        raise ValueError(f"class id {y} outside [0, {k})")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    others = np.delete(logits, y)
    return float(max(logits[y] - others.max() + kappa, 0.0))


def margin_grad(logits: np.ndarray, y: int, kappa: float) -> np.ndarray:
    """Gradient of margin_loss w.r.t. logits; zero on the clamp and at the kink."""
    logits = np.asarray(logits, dtype=np.float64)
    g = np.zeros_like(logits)
    others = np.delete(logits, y)
    if logits[y] - others.max() + kappa > 0.0:
        rival = int(np.argmax(np.where(np.arange(logits.shape[0]) == y, -np.inf, logits)))
        g[y] = 1.0
        g[rival] = -1.0
    return g


class TinyTransformer:
    """Post-norm encoder stack with a mean-pool or per-position classification head."""

    def __init__(self, spec: TinyTransformerSpec, task: str, seed: int = 0,
                 tag_names: list[str] | None = None):
        if task not in TASKS:
            raise ModelError(f"unknown task {task!r}")
        spec.validate()
        self.spec = spec
        self.task = task
        self.tag_names = tag_names
        self.vocab_sha256: str | None = None
        self.train_report: dict = {}

        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        d, ff, v, k = spec.model_dim, spec.ff_dim, spec.vocab_size, spec.num_classes
        p: dict[str, np.ndarray] = {
            "embed": rng.normal(0.0, 0.02, (v, d)),
            "pos": rng.normal(0.0, 0.02, (spec.max_len, d)),
        }
        for i in range(spec.layers):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"l{i}_{name}"] = rng.normal(0.0, d ** -0.5, (d, d))
                p[f"l{i}_b{name[1]}"] = np.zeros(d)
            p[f"l{i}_g1"] = np.ones(d)
            p[f"l{i}_c1"] = np.zeros(d)
            p[f"l{i}_w1"] = rng.normal(0.0, d ** -0.5, (d, ff))
            p[f"l{i}_b1"] = np.zeros(ff)
            p[f"l{i}_w2"] = rng.normal(0.0, ff ** -0.5, (ff, d))
            p[f"l{i}_b2"] = np.zeros(d)
            p[f"l{i}_g2"] = np.ones(d)
            p[f"l{i}_c2"] = np.zeros(d)
        p["head_w"] = rng.normal(0.0, d ** -0.5, (d, k))
        p["head_b"] = np.zeros(k)
        self.params = p
        self.param_names = sorted(p)

    # ---- forward ----

    @property
    def embed_table(self) -> np.ndarray:
        return self.params["embed"]

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def _check_len(self, n: int) -> None:
        if n > self.spec.max_len:
            raise ModelError(f"sequence length {n} exceeds max_len {self.spec.max_len}")
        if n == 0:
            raise ModelError("empty sequence")

    def _embed_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        self._check_len(ids.shape[0])
        return self.params["embed"][ids] + self.params["pos"][:ids.shape[0]]

    def _embed_rows(self, rows: np.ndarray) -> np.ndarray:
        self._check_len(rows.shape[0])
        return rows @ self.params["embed"] + self.params["pos"][:rows.shape[0]]

    def _layer_args(self, i: int):
        p = self.params
        return (p[f"l{i}_wq"], p[f"l{i}_bq"], p[f"l{i}_wk"], p[f"l{i}_bk"],
                p[f"l{i}_wv"], p[f"l{i}_bv"], p[f"l{i}_wo"], p[f"l{i}_bo"],
                p[f"l{i}_g1"], p[f"l{i}_c1"], p[f"l{i}_w1"], p[f"l{i}_b1"],
                p[f"l{i}_w2"], p[f"l{i}_b2"], p[f"l{i}_g2"], p[f"l{i}_c2"])

    def _encode(self, x: np.ndarray):
        caches = []
        h = np.ascontiguousarray(x)
        for i in range(self.spec.layers):
            res = kernels.encoder_layer_forward(h, *self._layer_args(i), self.spec.heads)
            caches.append((h, res))
            h = res[0]
        return h, caches

    def _head(self, h: np.ndarray) -> np.ndarray:
        if self.task == "SENTENCE":
            return h.mean(axis=0) @ self.params["head_w"] + self.params["head_b"]
        return h @ self.params["head_w"] + self.params["head_b"]

    def forward_ids(self, ids) -> np.ndarray:
        """Eval-mode logits: (K,) for SENTENCE, (L, K) for TOKEN."""
        h, _ = self._encode(self._embed_ids(ids))
        return self._head(h)

    def forward_dist(self, rows: np.ndarray, validate: bool = True) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.spec.vocab_size:
            raise ModelError(f"distribution shape {rows.shape} does not match V={self.spec.vocab_size}")
        if validate:
            sums = rows.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6) or rows.min() < -1e-9:
                raise ModelError("row not on simplex")
        h, _ = self._encode(self._embed_rows(rows))
        return self._head(h)

    def predict_ids(self, ids):
        logits = self.forward_ids(ids)
        return int(np.argmax(logits)) if self.task == "SENTENCE" else np.argmax(logits, axis=1)

    # ---- gradients ----

    def _backward(self, dh: np.ndarray, caches, grads: dict | None = None) -> np.ndarray:
        for i in reversed(range(len(caches))):
            x_in, res = caches[i]
            out = kernels.encoder_layer_backward(
                np.ascontiguousarray(dh), x_in,
                self.params[f"l{i}_wq"], self.params[f"l{i}_wk"],
                self.params[f"l{i}_wv"], self.params[f"l{i}_wo"],
                self.params[f"l{i}_g1"], self.params[f"l{i}_w1"],
                self.params[f"l{i}_w2"], self.params[f"l{i}_g2"],
                *res[1:], self.spec.heads)
            dh = out[0]
            if grads is not None:
                names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                         "g1", "c1", "w1", "b1", "w2", "b2", "g2", "c2")
                for name, g in zip(names, out[1:]):
                    grads[f"l{i}_{name}"] += g
        return dh

    def margin_and_grad_dist(self, rows: np.ndarray, y: int | None, kappa: float,
                             targets: list[tuple[int, int]] | None = None,
                             validate: bool = True):
        """Margin loss on mixture input and its exact gradient w.r.t. every row.

        SENTENCE uses the pooled logits with class y; TOKEN sums the margin over
        (position, label) targets. Frozen rows get gradients too, the selector
        reads them.
        """
        rows = np.asarray(rows, dtype=np.float64)
        if validate:
            sums = rows.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6) or rows.min() < -1e-9:
                raise ModelError("row not on simplex")
        x = self._embed_rows(rows)
        h, caches = self._encode(x)
        if self.task == "SENTENCE":
            logits = h.mean(axis=0) @ self.params["head_w"] + self.params["head_b"]
            loss = margin_loss(logits, y, kappa)
            dpooled = self.params["head_w"] @ margin_grad(logits, y, kappa)
            dh = np.tile(dpooled / h.shape[0], (h.shape[0], 1))
        else:
            if not targets:
                raise ModelError("TOKEN margin needs (position, label) targets")
            logits = h @ self.params["head_w"] + self.params["head_b"]
            loss = 0.0
            dlogits = np.zeros_like(logits)
            for pos, label in targets:
                loss += margin_loss(logits[pos], label, kappa)
                dlogits[pos] += margin_grad(logits[pos], label, kappa)
            dh = dlogits @ self.params["head_w"].T
        dx = self._backward(dh, caches)
        grad = dx @ self.params["embed"].T
        if not np.all(np.isfinite(grad)):
            raise ModelError(
                f"non-finite gradient: loss={loss}, |dx|max={np.abs(dx).max()}, "
                f"rows sum range [{rows.sum(1).min()}, {rows.sum(1).max()}]")
        return loss, grad

    def margin_on_ids(self, ids, y: int | None, kappa: float,
                      targets: list[tuple[int, int]] | None = None) -> float:
        logits = self.forward_ids(ids)
        if self.task == "SENTENCE":
            return margin_loss(logits, y, kappa)
        return float(sum(margin_loss(logits[p], label, kappa) for p, label in targets))

    # ---- training ----

    def _train_grads(self, ids: np.ndarray, labels, dropout_rng=None):
        """Cross-entropy loss and gradients for every parameter (single example)."""
        ids = np.asarray(ids, dtype=np.int64)
        x = self._embed_ids(ids)
        if dropout_rng is not None and self.spec.dropout > 0.0:
            keep = 1.0 - self.spec.dropout
            x = x * (dropout_rng.random(x.shape) < keep) / keep
        h, caches = self._encode(x)
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}
        if self.task == "SENTENCE":
            pooled = h.mean(axis=0)
            logits = pooled @ self.params["head_w"] + self.params["head_b"]
            z = np.exp(logits - logits.max())
            probs = z / z.sum()
            loss = -np.log(max(probs[labels], 1e-12))
            dlogits = probs.copy()
            dlogits[labels] -= 1.0
            grads["head_w"] += np.outer(pooled, dlogits)
            grads["head_b"] += dlogits
            dh = np.tile((self.params["head_w"] @ dlogits) / h.shape[0], (h.shape[0], 1))
        else:
            labels = np.asarray(labels, dtype=np.int64)
            logits = h @ self.params["head_w"] + self.params["head_b"]
            z = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs = z / z.sum(axis=1, keepdims=True)
            n = ids.shape[0]
            loss = -np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-12)))
            dlogits = probs
            dlogits[np.arange(n), labels] -= 1.0
            dlogits /= n
            grads["head_w"] += h.T @ dlogits
            grads["head_b"] += dlogits.sum(axis=0)
            dh = dlogits @ self.params["head_w"].T
        dx = self._backward(dh, caches, grads)
        np.add.at(grads["embed"], ids, dx)
        grads["pos"][:ids.shape[0]] += dx
        return float(loss), grads

    def weights_hash(self) -> str:
        digest = hashlib.sha256()
        for name in self.param_names:
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()


# ---- spec-level free functions ----

def embed_mixture(dist_rows: np.ndarray, model: TinyTransformer) -> np.ndarray:
    """Per-position mixture of embedding rows, e(pi) = pi @ E."""
    rows = np.asarray(dist_rows, dtype=np.float64)
    sums = rows.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or rows.min() < -1e-9:
        raise ModelError("row not on simplex")
    return rows @ model.embed_table


def grad_wrt_distribution(model: TinyTransformer, dist_rows: np.ndarray, y: int | None,
                          kappa: float, targets=None, validate: bool = True) -> np.ndarray:
    _, grad = model.margin_and_grad_dist(dist_rows, y, kappa, targets, validate)
    return grad


def _continuation_tag(tag: str) -> str:
    return "I-" + tag[2:] if tag[:2] in ("B-", "I-") else tag


def subtoken_labels(word_tags: list[str], spans, tag_names: list[str], n_sub: int) -> np.ndarray:
    """First subtoken carries the word's tag; continuations carry its I- form."""
    index = {t: i for i, t in enumerate(tag_names)}
    out = np.zeros(n_sub, dtype=np.int64)
    for (s, e), tag in zip(spans, word_tags):
        cont = _continuation_tag(tag)
        out[s] = index[tag]
        out[s + 1:e] = index.get(cont, index[tag])
    return out


def encode_dataset(records, vocab: Vocabulary, task: str, tag_names=None):
    encoded = []
    for rec in records:
        if task == "SENTENCE":
            enc = encode_words(rec.text.split(), vocab)
            encoded.append((np.array(enc.ids, dtype=np.int64), int(rec.label)))
        else:
            enc = encode_words(rec.tokens, vocab)
            labels = subtoken_labels(rec.tags, enc.word_spans, tag_names, len(enc.ids))
            encoded.append((np.array(enc.ids, dtype=np.int64), labels, enc.word_spans))
    return encoded


def derive_tag_names(records) -> list[str]:
    tags = {t for rec in records for t in rec.tags}
    tags.discard("O")
    return ["O"] + sorted(tags)


def _accuracy(model: TinyTransformer, encoded) -> float:
    hits = total = 0
    for item in encoded:
        pred = model.predict_ids(item[0])
        if model.task == "SENTENCE":
            hits += int(pred == item[1])
            total += 1
        else:
            hits += int(np.sum(pred == item[1]))
            total += item[1].shape[0]
    return hits / total if total else 0.0


def train_reference(dataset, spec: TinyTransformerSpec, seed: int, vocab: Vocabulary,
                    task: str, epochs: int = 20, lr: float = 1e-3,
                    eval_dataset=None, tag_names: list[str] | None = None) -> TinyTransformer:
    """Adam training from scratch; deterministic given (dataset order, seed)."""
    if not dataset:
        raise ModelError("empty dataset")
    if task == "TOKEN" and tag_names is None:
        tag_names = derive_tag_names(dataset)
    spec = TinyTransformerSpec(**asdict(spec))
    if spec.vocab_size == 0:
        spec.vocab_size = vocab.size
    if spec.num_classes == 0:
        spec.num_classes = (max(int(r.label) for r in dataset) + 1 if task == "SENTENCE"
                            else len(tag_names))
    model = TinyTransformer(spec, task, seed=seed, tag_names=tag_names)
    model.vocab_sha256 = vocab.sha256

    encoded = encode_dataset(dataset, vocab, task, tag_names)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    mstate = {n: np.zeros_like(a) for n, a in model.params.items()}
    vstate = {n: np.zeros_like(a) for n, a in model.params.items()}
    step = 0
    for _ in range(epochs):
        for idx in shuffle_rng.permutation(len(encoded)):
            item = encoded[idx]
            _, grads = model._train_grads(item[0], item[1], dropout_rng)
            step += 1
            for name in model.param_names:
                kernels.adam_update(model.params[name], grads[name], mstate[name],
                                    vstate[name], step, lr, 0.9, 0.999, 1e-8)

    report = {"task": task, "epochs": epochs, "examples": len(encoded),
              "train_accuracy": round(_accuracy(model, encoded), 4)}
    if eval_dataset:
        eval_enc = encode_dataset(eval_dataset, vocab, task, tag_names)
        report["eval_accuracy"] = round(_accuracy(model, eval_enc), 4)
    model.train_report = report
    return model


# ---- checkpoints ----

def save_checkpoint(model: TinyTransformer, path) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "task": model.task,
        "tag_names": model.tag_names,
        "vocab_sha256": model.vocab_sha256,
        "train_report": model.train_report,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **{f"p_{n}": model.params[n] for n in model.param_names})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> TinyTransformer:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {meta['format_version']}")
        spec = TinyTransformerSpec(**meta["spec"])
        model = TinyTransformer(spec, meta["task"], seed=0, tag_names=meta["tag_names"])
        for name in model.param_names:
            model.params[name] = np.ascontiguousarray(data[f"p_{name}"], dtype=np.float64)
    model.vocab_sha256 = meta["vocab_sha256"]
    model.train_report = meta.get("train_report", {})
    return model
