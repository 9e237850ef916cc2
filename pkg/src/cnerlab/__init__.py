"""Cross-lingual NER training lab.

Train a token-tagging teacher on a source corpus plus aligned translations
with cross-entropy and two contrastive objectives, distill it into a
student on unlabeled target text, and evaluate entity-level F1 — all on a
small from-scratch encoder with a synthetic bilingual corpus generator, so
zero-shot transfer trends are measurable on one CPU core.
"""

__version__ = "0.1.0"

from .bilingen import BilingualCorpora, GenConfig, generate, translate_sentence
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    EntitySpan,
    LabeledSentence,
    LabelSet,
    Vocabulary,
    build_vocabulary,
    extract_entities,
    parse_conll,
    repair_iob2,
    serialize_conll,
    validate_iob2,
)
from .encoder import EncoderConfig, ModelParams, classify, encode, init_params, pool_sentences
from .losses import LossBreakdown, LossWeights, ce_loss, joint_loss, kd_mse_loss, lcl_loss, tcl_loss
from .scoring import F1Report, entity_f1, label_agreement
from .trainer import (
    BilingualBatch,
    TrainConfig,
    build_bilingual_batch,
    distill_student,
    predict,
    predict_corpus,
    train_teacher,
)

__all__ = [
    "BilingualBatch",
    "BilingualCorpora",
    "Checkpoint",
    "Corpus",
    "EncoderConfig",
    "EntitySpan",
    "F1Report",
    "GenConfig",
    "LabeledSentence",
    "LabelSet",
    "LossBreakdown",
    "LossWeights",
    "ModelParams",
    "TrainConfig",
    "Vocabulary",
    "build_bilingual_batch",
    "build_vocabulary",
    "ce_loss",
    "classify",
    "distill_student",
    "encode",
    "entity_f1",
    "extract_entities",
    "generate",
    "init_params",
    "joint_loss",
    "kd_mse_loss",
    "label_agreement",
    "lcl_loss",
    "load_checkpoint",
    "parse_conll",
    "pool_sentences",
    "predict",
    "predict_corpus",
    "repair_iob2",
    "save_checkpoint",
    "serialize_conll",
    "tcl_loss",
    "train_teacher",
    "translate_sentence",
    "validate_iob2",
]
