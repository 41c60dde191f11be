"""Character-level adversarial attacks by attachable-subtoken substitution.

Words are re-split into attackable subtoken layouts, interior subtokens are
relaxed to distributions over the attachable vocabulary, and gradient descent
under visual and length constraints searches for substitutions that flip a
bundled transformer classifier.
"""

from .data import (SentenceRecord, TokenRecord, generate_fixture, ingest_conll,
                   ingest_sentence_csv, span_f1)
from .evaluation import (CampaignError, adversarial_retrain, edit_distance,
                         read_results_jsonl, retokenization_check, run_campaign,
                         sentence_edit_distance, write_results_jsonl)
from .kernels import NUMBA_ENABLED
from .model import (ModelError, TinyTransformer, TinyTransformerSpec, embed_mixture,
                    grad_wrt_distribution, load_checkpoint, margin_loss,
                    save_checkpoint, train_reference)
from .search import (AttackConfig, AttackInfeasible, AttackResult, TokenDistribution,
                     TokenTarget, adv_objective, attack_sentence, hard_sample,
                     length_loss, relax, total_loss, visual_loss)
from .selector import rank_words, select_targets, token_grad_norms
from .visual import (FontError, LengthTable, Tables, VisualTable, build_length_table,
                     build_tables, build_visual_table, load_tables, render_glyph,
                     save_tables, visual_embed)
from .vocab import (SplitInfeasible, Vocabulary, VocabError, adv_tokenize, detokenize,
                    encode_words, load_vocab, subword_length_census, tokenize)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackInfeasible", "AttackResult", "CampaignError",
    "FontError", "LengthTable", "ModelError", "NUMBA_ENABLED", "SentenceRecord",
    "SplitInfeasible", "Tables", "TinyTransformer", "TinyTransformerSpec",
    "TokenDistribution", "TokenRecord", "TokenTarget", "VisualTable", "VocabError",
    "Vocabulary", "adv_objective", "adv_tokenize", "adversarial_retrain",
    "attack_sentence", "build_length_table", "build_tables", "build_visual_table",
    "detokenize", "edit_distance", "embed_mixture", "encode_words",
    "generate_fixture", "grad_wrt_distribution", "hard_sample", "ingest_conll",
    "ingest_sentence_csv", "length_loss", "load_checkpoint", "load_tables",
    "load_vocab", "margin_loss", "rank_words", "read_results_jsonl", "relax",
    "render_glyph", "retokenization_check", "run_campaign", "save_checkpoint",
    "save_tables", "select_targets", "sentence_edit_distance", "span_f1",
    "subword_length_census", "token_grad_norms", "tokenize", "total_loss",
    "train_reference", "visual_embed", "visual_loss", "write_results_jsonl",
]
