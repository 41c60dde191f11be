"""Substitution search: relax middle subtokens, descend on the combined
objective, and grow the attacked-word count until the margin is beaten.

The relaxed rows are parameterized by unconstrained scores pushed through a
masked softmax, so every iterate stays on the simplex and never leaks mass
outside the candidate set. The discrete side travels along via a
straight-through hard sample whose gradient touches only the argmax coordinate.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .model import TinyTransformer, margin_loss
from .selector import (one_hot_rows, rank_words, select_targets, token_grad_norms,
                       word_eligibility)
from .vocab import Vocabulary, adv_tokenize, detokenize, encode_words, tokenize
from .visual import Tables

NOISE_KINDS = ("gumbel", "uniform")


class AttackInfeasible(Exception):
    """No word in the sentence can be attacked."""


@dataclass
class AttackConfig:
    kappa: float = 7.0
    lambda_adv: float = 1.0
    lambda_vis: float = 0.1
    lambda_len: float = 2.0
    temperature: float = 1.0
    learning_rate: float = 0.3
    max_iter: int = 300
    n1: int = 2
    n2: int = 15
    seed: int = 0
    noise_kind: str = "gumbel"
    resample_noise: bool = False

    def validate(self) -> None:
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if min(self.lambda_adv, self.lambda_vis, self.lambda_len) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.n1 > self.n2 or self.n1 < 1:
            raise ValueError("need 1 <= N1 <= N2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "AttackConfig":
        base = cls() if task == "SENTENCE" else cls(kappa=5.0, max_iter=100, n1=1, n2=2)
        for key, val in overrides.items():
            setattr(base, key, val)
        base.validate()
        return base


@dataclass
class TokenDistribution:
    rows: np.ndarray             # L x V, frozen rows one-hot, relaxed rows on the simplex
    frozen: np.ndarray           # bool per position
    relaxed_positions: list[int]
    temperature: float
    noise_seed: int | None
    candidate_mask: np.ndarray   # bool over V

    def check(self, atol: float = 1e-6) -> None:
        sums = self.rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > atol) or self.rows.min() < -atol:
            raise ValueError("distribution row off the simplex")
        for i in np.nonzero(self.frozen)[0]:
            if np.count_nonzero(self.rows[i]) != 1 or self.rows[i].max() != 1.0:
                raise ValueError(f"frozen row {i} is not one-hot")
        off = ~self.candidate_mask
        for i in self.relaxed_positions:
            if np.any(self.rows[i][off] != 0.0):
                raise ValueError(f"relaxed row {i} has mass outside the candidate set")


@dataclass
class TokenTarget:
    """TOKEN-task attack target: flip the tag of this word's first subtoken."""
    word_index: int
    label: int


def sample_noise(rng: np.random.Generator, shape, kind: str) -> np.ndarray:
    if kind == "gumbel":
        u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
        return -np.log(-np.log(u))
    if kind == "uniform":
        return rng.random(shape)
    raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax over the masked columns only; zero elsewhere."""
    if not mask.any():
        raise ValueError("candidate mask is empty")
    out = np.zeros_like(scores)
    sub = scores[:, mask]
    sub = np.exp(sub - sub.max(axis=1, keepdims=True))
    out[:, mask] = sub / sub.sum(axis=1, keepdims=True)
    return out


def _softmax_backward(pi: np.ndarray, dpi: np.ndarray, mask: np.ndarray,
                      temperature: float) -> np.ndarray:
    inner = (dpi[:, mask] * pi[:, mask]).sum(axis=1, keepdims=True)
    out = np.zeros_like(dpi)
    out[:, mask] = pi[:, mask] * (dpi[:, mask] - inner) / temperature
    return out


def relax_from_scores(score_rows: np.ndarray, noise: np.ndarray | None,
                      temperature: float, candidate_mask: np.ndarray) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scores = np.asarray(score_rows, dtype=np.float64)
    if noise is not None:
        scores = scores + noise
    return masked_softmax(scores / temperature, candidate_mask)


def relax(one_hot: np.ndarray, temperature: float, noise_seed, noise_kind: str,
          candidate_mask: np.ndarray) -> np.ndarray:
    """Gumbel-softmax relaxation of one-hot rows over the candidate set."""
    rows = np.asarray(one_hot, dtype=np.float64)
    if np.any((rows != 0.0) & (rows != 1.0)) or np.any(rows.sum(axis=1) != 1.0):
        raise ValueError("relax expects exact one-hot rows")
    rng = np.random.default_rng(noise_seed)
    g = sample_noise(rng, rows.shape, noise_kind)
    return relax_from_scores(rows, g, temperature, candidate_mask)


def hard_sample(row: np.ndarray) -> np.ndarray:
    """One-hot at the argmax; ties resolve to the lowest id."""
    out = np.zeros_like(row)
    out[int(np.argmax(row))] = 1.0
    return out


def hard_sample_grad(row: np.ndarray, grad_hard: np.ndarray) -> np.ndarray:
    """Straight-through backward: only the argmax coordinate carries gradient,
    scaled by the reciprocal of its own magnitude."""
    am = int(np.argmax(row))
    out = np.zeros_like(row)
    out[am] = grad_hard[am] / abs(row[am])
    return out


def _margin_from_logits(model: TinyTransformer, logits: np.ndarray, y, kappa, targets) -> float:
    if model.task == "SENTENCE":
        return margin_loss(logits, y, kappa)
    return float(sum(margin_loss(logits[p], label, kappa) for p, label in targets))


def _hard_rows(dist: TokenDistribution) -> np.ndarray:
    rows = dist.rows.copy()
    for i in dist.relaxed_positions:
        rows[i] = hard_sample(dist.rows[i])
    return rows


def adv_objective(model: TinyTransformer, dist: TokenDistribution, y, kappa: float,
                  lambda_adv: float, targets=None) -> float:
    """Relaxed margin plus lambda_adv times the hard-sampled margin."""
    soft = _margin_from_logits(model, model.forward_dist(dist.rows), y, kappa, targets)
    hard = _margin_from_logits(model, model.forward_dist(_hard_rows(dist)), y, kappa, targets)
    return soft + lambda_adv * hard


def visual_loss(dist: TokenDistribution, original_ids, visual_table) -> float:
    if visual_table is None:
        raise ValueError("visual table required but absent")
    if not dist.relaxed_positions:
        return 0.0
    vt = np.asarray(visual_table.vectors, dtype=np.float64)
    total = 0.0
    for i in dist.relaxed_positions:
        diff = dist.rows[i] @ vt - vt[int(original_ids[i])]
        total += float(np.linalg.norm(diff))
    return total


def length_loss(dist: TokenDistribution, original_ids, length_table) -> float:
    if length_table is None:
        raise ValueError("length table required but absent")
    lengths = np.asarray(length_table.lengths, dtype=np.float64)
    total = 0.0
    for i in dist.relaxed_positions:
        total += abs(float(dist.rows[i] @ lengths) - lengths[int(original_ids[i])])
    return total


def total_loss(model: TinyTransformer, dist: TokenDistribution, y, config: AttackConfig,
               tables: Tables | None, original_ids=None, targets=None) -> tuple[float, dict]:
    """Weighted objective; the constraint terms are skipped at weight zero."""
    tables = tables or Tables()
    parts = {"adv": adv_objective(model, dist, y, config.kappa, config.lambda_adv, targets),
             "vis": 0.0, "len": 0.0}
    if config.lambda_vis > 0.0:
        parts["vis"] = visual_loss(dist, original_ids, tables.visual)
    if config.lambda_len > 0.0:
        parts["len"] = length_loss(dist, original_ids, tables.length)
    total = parts["adv"] + config.lambda_vis * parts["vis"] + config.lambda_len * parts["len"]
    return total, parts


def _grad_step_terms(model, dist, pi, relaxed, orig_ids, y, cfg, tables, targets):
    """Loss parts and the gradient w.r.t. the relaxed rows pi (R x V)."""
    dist.rows[relaxed] = pi
    soft, grad_soft = model.margin_and_grad_dist(dist.rows, y, cfg.kappa, targets, validate=False)
    dpi = grad_soft[relaxed].copy()

    rows_hat = _hard_rows(dist)
    hard, grad_hard = model.margin_and_grad_dist(rows_hat, y, cfg.kappa, targets, validate=False)
    for r, i in enumerate(relaxed):
        dpi[r] += cfg.lambda_adv * hard_sample_grad(pi[r], grad_hard[i])

    vis = lenl = 0.0
    if cfg.lambda_vis > 0.0:
        vt = np.asarray(tables.visual.vectors, dtype=np.float64)
        emb = pi @ vt - vt[orig_ids[relaxed]]
        norms = np.linalg.norm(emb, axis=1)
        vis = float(norms.sum())
        safe = np.where(norms > 0, norms, 1.0)
        dpi += cfg.lambda_vis * (emb / safe[:, None]) @ vt.T
    if cfg.lambda_len > 0.0:
        lengths = np.asarray(tables.length.lengths, dtype=np.float64)
        s = pi @ lengths - lengths[orig_ids[relaxed]]
        lenl = float(np.abs(s).sum())
        dpi += cfg.lambda_len * np.sign(s)[:, None] * lengths[None, :]

    parts = {"adv": soft + cfg.lambda_adv * hard, "vis": vis, "len": lenl,
             "soft": soft, "hard": hard}
    return parts, dpi


@dataclass
class AttackResult:
    original_text: str
    adversarial_text: str
    success: bool
    queries: int
    k_used: int
    iterations_used: int
    substitutions: list[dict]  # per attacked word: original, replacement, edit_distance, subtoken_ids
    losses: dict
    hard_margin: float
    failure_kind: str | None = None  # "unoptimized" | "tokenization_inconsistency"
    verified_pred: int | None = None
    shortfall: bool = False
    target_word_indices: list[int] = field(default_factory=list)

    def to_dict(self, config: AttackConfig | None = None) -> dict:
        out = asdict(self)
        if config is not None:
            out["config"] = asdict(config)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AttackResult":
        data = {k: v for k, v in data.items() if k != "config"}
        return cls(**data)


def _word_edit_distance(a: str, b: str) -> int:
    ca = np.array([ord(c) for c in a], dtype=np.int32)
    cb = np.array([ord(c) for c in b], dtype=np.int32)
    return int(kernels.levenshtein_codes(ca, cb))


def _build_layout(words, chosen, vocab):
    """Token ids with chosen words adversarially split; others standard."""
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    relaxed: list[int] = []
    attacked: list[tuple[int, int, int]] = []  # (word_index, span_start, span_end)
    chosen_set = set(chosen)
    for wi, w in enumerate(words):
        start = len(ids)
        if wi in chosen_set:
            tw = adv_tokenize(w, vocab)
            ids.extend(tw.subtoken_ids)
            relaxed.extend(start + p for p in tw.replaceable_positions)
            attacked.append((wi, start, len(ids)))
        else:
            ids.extend(tokenize(w, vocab))
        spans.append((start, len(ids)))
    return np.array(ids, dtype=np.int64), spans, relaxed, attacked


def attack_sentence(model: TinyTransformer, words: list[str], y: int | None,
                    config: AttackConfig, vocab: Vocabulary,
                    tables: Tables | None = None, target: TokenTarget | None = None,
                    example_key: int = 0) -> AttackResult:
    """Algorithm: rank words once, then for k = N1..N2 relax the top-k words'
    middles, optimize, and accept only if the re-tokenized sentence still fools
    the model. Queries count discrete full-sentence evaluations only."""
    config.validate()
    if model.task == "TOKEN" and target is None:
        raise ValueError("TOKEN task needs a TokenTarget")
    tables = tables or Tables()
    if config.lambda_vis > 0.0 and tables.visual is None:
        raise ValueError("lambda_vis > 0 requires a visual table")
    if config.lambda_len > 0.0 and tables.length is None:
        raise ValueError("lambda_len > 0 requires a length table")

    eligibility = word_eligibility(words, vocab)
    if not any(eligibility):
        raise AttackInfeasible(f"no attackable word in {words!r}")
    cand_mask = vocab.candidate_mask()
    if not cand_mask.any():
        raise AttackInfeasible("vocabulary has no substitution candidates")

    enc0 = encode_words(words, vocab)

    def margin_targets_for(spans):
        if model.task == "SENTENCE":
            return None
        return [(spans[target.word_index][0], target.label)]

    norms = token_grad_norms(model, enc0, y, config.kappa, margin_targets_for(enc0.word_spans))
    ranking = rank_words(enc0, norms)

    queries = 0
    iterations = 0
    gate_passed = False
    best = None  # (hard_margin, k, attempt dict)
    success_attempt = None

    for k in range(config.n1, config.n2 + 1):
        chosen, shortfall = select_targets(ranking, min(k, len(words)), eligibility)
        ids, spans, relaxed, attacked = _build_layout(words, chosen, vocab)
        targets = margin_targets_for(spans)
        rows = one_hot_rows(ids, vocab.size)
        frozen = np.ones(len(ids), dtype=bool)
        frozen[relaxed] = False
        dist = TokenDistribution(rows, frozen, relaxed, config.temperature,
                                 None, cand_mask)

        phi = rows[relaxed].copy()
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, example_key, k]))
        noise = sample_noise(rng, phi.shape, config.noise_kind)
        mstate = np.zeros_like(phi)
        vstate = np.zeros_like(phi)
        for it in range(config.max_iter):
            if config.resample_noise and it > 0:
                noise = sample_noise(rng, phi.shape, config.noise_kind)
            pi = relax_from_scores(phi, noise, config.temperature, cand_mask)
            _, dpi = _grad_step_terms(model, dist, pi, relaxed, ids, y, config,
                                      tables, targets)
            dphi = _softmax_backward(pi, dpi, cand_mask, config.temperature)
            kernels.adam_update(phi, dphi, mstate, vstate, it + 1,
                                config.learning_rate, 0.9, 0.999, 1e-8)
        iterations += config.max_iter

        pi = relax_from_scores(phi, noise, config.temperature, cand_mask)
        dist.rows[relaxed] = pi
        parts, _ = _grad_step_terms(model, dist, pi, relaxed, ids, y, config, tables, targets)

        ids_hat = ids.copy()
        for r, i in enumerate(relaxed):
            ids_hat[i] = int(np.argmax(pi[r]))
        hard_margin = model.margin_on_ids(ids_hat, y, config.kappa, targets)
        queries += 1

        new_words = list(words)
        subs = []
        for wi, s, e in attacked:
            replacement = detokenize(ids_hat[s:e], vocab)
            new_words[wi] = replacement
            subs.append({
                "original": words[wi],
                "replacement": replacement,
                "edit_distance": _word_edit_distance(words[wi], replacement),
                "subtoken_ids": [int(t) for t in ids_hat[s:e]],
            })
        attempt = {
            "k": k,
            "adv_text": " ".join(new_words),
            "subs": subs,
            "hard_margin": float(hard_margin),
            "losses": {"adv": float(parts["adv"]), "vis": float(parts["vis"]),
                       "len": float(parts["len"])},
            "shortfall": shortfall,
            "chosen": [int(c) for c in chosen],
            "verified_pred": None,
        }

        if hard_margin == 0.0:
            gate_passed = True
            enc2 = encode_words(new_words, vocab)
            pred = model.predict_ids(np.array(enc2.ids, dtype=np.int64))
            queries += 1
            if model.task == "SENTENCE":
                attempt["verified_pred"] = int(pred)
                flipped = int(pred) != y
            else:
                pos2 = enc2.word_spans[target.word_index][0]
                attempt["verified_pred"] = int(pred[pos2])
                flipped = int(pred[pos2]) != target.label
            if flipped:
                success_attempt = attempt
                break

        if best is None or (attempt["hard_margin"], attempt["k"]) < (best["hard_margin"], best["k"]):
            best = attempt

    picked = success_attempt if success_attempt is not None else best
    success = success_attempt is not None
    failure_kind = None
    if not success:
        failure_kind = "tokenization_inconsistency" if gate_passed else "unoptimized"
    return AttackResult(
        original_text=" ".join(words),
        adversarial_text=picked["adv_text"],
        success=success,
        queries=queries,
        k_used=picked["k"],
        iterations_used=iterations,
        substitutions=picked["subs"],
        losses=picked["losses"],
        hard_margin=picked["hard_margin"],
        failure_kind=failure_kind,
        verified_pred=picked["verified_pred"],
        shortfall=picked["shortfall"],
        target_word_indices=picked["chosen"],
    )
