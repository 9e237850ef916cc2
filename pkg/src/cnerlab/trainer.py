"""Joint teacher training, teacher->student distillation, and inference.

The teacher is trained on the union of the source corpus and its aligned
translation: per step, cross-entropy over all 2N sentences, label contrast
over the batch's unmasked tokens, translation contrast over the 2N pooled
sentence vectors, combined with the configured weights.  Checkpoints are
selected by entity F1 on a source-language dev set.  The student is then
fitted to the frozen teacher's output distributions on unlabeled
target-language text with an MSE objective.

Everything is deterministic given the config seed: shuffles and
initializations draw from streams keyed by (seed, purpose, index).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import GradTape, Tensor
from .bilingen import BilingualCorpora
from .checkpoint import ArchitectureMismatchError, Checkpoint
from .corpus import Corpus, LabelSet, Vocabulary, build_vocabulary, repair_iob2
from .encoder import (
    EncoderConfig,
    ModelParams,
    classify,
    encode,
    init_params,
    pool_sentences,
)
from .losses import LossBreakdown, LossWeights, ce_loss, joint_loss, kd_mse_loss, lcl_loss, tcl_loss
from .optim import AdamW, OptimizerConfig
from .scoring import entity_f1


class MisalignedCorporaError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown, indices):
        super().__init__(
            f"non-finite loss at step {step}: ce={breakdown.l_ce} lcl={breakdown.l_lcl} "
            f"tcl={breakdown.l_tcl} total={breakdown.l_total} batch indices={list(indices)}"
        )
        self.step = step
        self.breakdown = breakdown


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8  # N source sentences; a bilingual batch holds 2N
    epochs: int = 6
    learning_rate: float = 3e-3
    weights: LossWeights = LossWeights()
    eval_every: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    use_lcl: bool = True
    use_tcl: bool = True
    use_kd: bool = True
    use_src: bool = True
    use_tgt: bool = True
    lcl_include_o: bool = True
    kd_epochs: int = 8
    dev_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.epochs < 0 or self.kd_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not (self.use_src or self.use_tgt):
            raise ValueError("at least one of use_src/use_tgt must be on")
        if self.use_tcl and not (self.use_src and self.use_tgt):
            raise ValueError("translation contrast needs both languages in the batch")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ValueError("dev_fraction must lie in [0, 1)")

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )


@dataclass
class BilingualBatch:
    """Padded id/mask/label arrays; source sentences first, translations after."""

    token_ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    pairing: np.ndarray | None
    n_source: int

    @property
    def n_tokens(self) -> int:
        return int(self.mask.sum())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    evals: list


def encode_corpus(corpus: Corpus, vocab: Vocabulary) -> list[np.ndarray]:
    return [np.asarray(vocab.encode_tokens(s.tokens), dtype=np.int64) for s in corpus.sentences]


def _pad_batch(ids: Sequence[np.ndarray], labels: Sequence[Sequence[int]]):
    batch = len(ids)
    length = max(len(x) for x in ids)
    id_mat = np.zeros((batch, length), dtype=np.int64)
    mask = np.zeros((batch, length), dtype=bool)
    label_mat = np.zeros((batch, length), dtype=np.int64)
    for i, (x, y) in enumerate(zip(ids, labels)):
        id_mat[i, : len(x)] = x
        mask[i, : len(x)] = True
        label_mat[i, : len(x)] = y
    return id_mat, mask, label_mat


def build_bilingual_batch(
    d_src: Corpus, d_tgt: Corpus, indices: Sequence[int], vocab: Vocabulary
) -> BilingualBatch:
    """N source sentences followed by their translations; pairing i <-> i+N."""
    if len(d_src) != len(d_tgt):
        raise MisalignedCorporaError(f"{len(d_src)} source vs {len(d_tgt)} translated sentences")
    n = len(indices)
    for i in indices:
        if not 0 <= i < len(d_src):
            raise IndexError(f"sentence index {i} out of range")
    sentences = [d_src[i] for i in indices] + [d_tgt[i] for i in indices]
    ids = [np.asarray(vocab.encode_tokens(s.tokens), dtype=np.int64) for s in sentences]
    id_mat, mask, label_mat = _pad_batch(ids, [s.labels for s in sentences])
    pairing = np.concatenate([np.arange(n) + n, np.arange(n)])
    return BilingualBatch(id_mat, mask, label_mat, pairing, n)


def _monolingual_batch(corpus: Corpus, indices: Sequence[int], vocab: Vocabulary) -> BilingualBatch:
    sentences = [corpus[i] for i in indices]
    ids = [np.asarray(vocab.encode_tokens(s.tokens), dtype=np.int64) for s in sentences]
    id_mat, mask, label_mat = _pad_batch(ids, [s.labels for s in sentences])
    return BilingualBatch(id_mat, mask, label_mat, None, len(sentences))


def _format(value: float) -> str:
    return repr(float(value))


def _train_step(
    params: ModelParams,
    optimizer: AdamW,
    batch: BilingualBatch,
    config: TrainConfig,
    o_index: int,
) -> LossBreakdown:
    weights = config.weights
    with GradTape() as tape:
        h = encode(params, batch.token_ids, batch.mask)
        probs = classify(params, h)
        l_ce = ce_loss(probs, batch.labels, batch.mask)
        l_lcl = Tensor(0.0)
        if config.use_lcl:
            keep = batch.mask.copy()
            if not config.lcl_include_o:
                keep &= batch.labels != o_index
            flat_idx = np.flatnonzero(keep.reshape(-1))
            if flat_idx.size >= 2:
                flat_h = ad.reshape(h, (-1, params.config.embed_dim))
                token_vecs = ad.gather_rows(flat_h, flat_idx)
                token_labels = batch.labels.reshape(-1)[flat_idx]
                l_lcl = lcl_loss(token_vecs, token_labels, weights.tau_lcl)
        l_tcl = Tensor(0.0)
        if config.use_tcl and batch.pairing is not None:
            r = pool_sentences(h, batch.mask)
            l_tcl = tcl_loss(r, batch.pairing, weights.tau_tcl)
        l_total = joint_loss(l_ce, l_lcl, l_tcl, weights)
    names = [name for name, _ in params.named()]
    grads = dict(zip(names, tape.gradients(l_total, params.tensors())))
    breakdown = LossBreakdown(
        l_ce=l_ce.item(), l_lcl=l_lcl.item(), l_tcl=l_tcl.item(), l_total=l_total.item()
    )
    optimizer.step(grads)
    return breakdown


def predict(params: ModelParams, token_ids: np.ndarray, label_set: LabelSet) -> tuple[int, ...]:
    """Per-token argmax labels (ties to the lowest index), IOB2-repaired."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
    mask = np.ones_like(ids, dtype=bool)
    probs = classify(params, encode(params, ids, mask))
    raw = np.argmax(probs.data[0], axis=-1)
    return repair_iob2(raw.tolist(), label_set)


def predict_corpus(
    params: ModelParams,
    label_set: LabelSet,
    vocab: Vocabulary,
    corpus: Corpus,
    batch_size: int = 64,
) -> list[tuple[int, ...]]:
    """Repaired argmax predictions for every sentence; no gradients recorded."""
    encoded = encode_corpus(corpus, vocab)
    out: list[tuple[int, ...]] = []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        id_mat, mask, _ = _pad_batch(chunk, [[0] * len(x) for x in chunk])
        probs = classify(params, encode(params, id_mat, mask)).data
        for row, ids in enumerate(chunk):
            raw = np.argmax(probs[row, : len(ids)], axis=-1)
            out.append(repair_iob2(raw.tolist(), label_set))
    return out


def dev_split(corpora: BilingualCorpora, fraction: float) -> tuple[BilingualCorpora, Corpus]:
    """Hold out the trailing fraction of aligned pairs as a source-language dev set."""
    n = len(corpora.d_src)
    n_dev = max(1, int(round(n * fraction))) if fraction > 0 else 0
    if n_dev >= n:
        raise ValueError("dev fraction leaves no training pairs")
    if n_dev == 0:
        return corpora, corpora.d_src
    keep = slice(0, n - n_dev)
    train = replace(
        corpora,
        d_src=Corpus(corpora.d_src.sentences[keep], corpora.label_set, "src"),
        d_tgt=Corpus(corpora.d_tgt.sentences[keep], corpora.label_set, "tgt"),
        sentence_seeds=corpora.sentence_seeds[keep],
    )
    dev = Corpus(corpora.d_src.sentences[n - n_dev :], corpora.label_set, "src")
    return train, dev


def default_encoder_config(vocab: Vocabulary, label_set: LabelSet, seed: int) -> EncoderConfig:
    return EncoderConfig(vocab_size=len(vocab), label_count=len(label_set), init_seed=seed)


def train_teacher(
    config: TrainConfig,
    corpora: BilingualCorpora,
    dev: Corpus,
    encoder_config: EncoderConfig | None = None,
    vocab: Vocabulary | None = None,
    log_line: Callable[[str], None] | None = None,
) -> TrainResult:
    """Joint-objective training; returns the best dev-F1 checkpoint.

    Partial trailing batches are dropped (the contrastive denominators need
    a stable batch size).  The dev set is scored every ``eval_every`` steps
    and once more after the final step.
    """
    label_set = corpora.label_set
    if vocab is None:
        vocab = build_vocabulary([corpora.d_src, corpora.d_tgt, corpora.d_unlabeled])
    if encoder_config is None:
        encoder_config = default_encoder_config(vocab, label_set, config.seed)
    if encoder_config.vocab_size != len(vocab):
        raise ArchitectureMismatchError(
            f"encoder vocab_size {encoder_config.vocab_size} != vocabulary size {len(vocab)}"
        )
    if encoder_config.label_count != len(label_set):
        raise ArchitectureMismatchError(
            f"encoder label_count {encoder_config.label_count} != label set size {len(label_set)}"
        )

    params = init_params(encoder_config)
    optimizer = AdamW(params.named(), config.optimizer_config())
    emit = log_line or (lambda line: None)

    columns = ["step", "l_ce"]
    if config.use_lcl:
        columns.append("l_lcl")
    if config.use_tcl:
        columns.append("l_tcl")
    columns.append("l_total")
    emit("# columns: " + "\t".join(columns))

    def evaluate() -> float:
        preds = predict_corpus(params, label_set, vocab, dev)
        return entity_f1(dev, preds).micro.f1

    n_pairs = len(corpora.d_src)
    history: list[tuple[int, LossBreakdown]] = []
    evals: list[tuple[int, float]] = []
    best_f1 = -1.0
    best_params = params.copy()
    best_step = 0
    step = 0

    def run_eval() -> None:
        nonlocal best_f1, best_params, best_step
        f1 = evaluate()
        evals.append((step, f1))
        emit(f"eval\t{step}\t{_format(f1)}")
        if f1 > best_f1:
            best_f1 = f1
            best_params = params.copy()
            best_step = step

    for epoch in range(config.epochs):
        order = rng.substream(config.seed, rng.TRAIN_SHUFFLE, epoch).permutation(n_pairs)
        for start in range(0, n_pairs - config.batch_size + 1, config.batch_size):
            indices = order[start : start + config.batch_size].tolist()
            if config.use_src and config.use_tgt:
                batch = build_bilingual_batch(corpora.d_src, corpora.d_tgt, indices, vocab)
            elif config.use_src:
                batch = _monolingual_batch(corpora.d_src, indices, vocab)
            else:
                batch = _monolingual_batch(corpora.d_tgt, indices, vocab)
            step += 1
            breakdown = _train_step(params, optimizer, batch, config, label_set.o_index)
            history.append((step, breakdown))
            values = [str(step), _format(breakdown.l_ce)]
            if config.use_lcl:
                values.append(_format(breakdown.l_lcl))
            if config.use_tcl:
                values.append(_format(breakdown.l_tcl))
            values.append(_format(breakdown.l_total))
            emit("\t".join(values))
            if not np.isfinite(breakdown.l_total):
                raise NonFiniteLossError(step, breakdown, indices)
            if step % config.eval_every == 0:
                run_eval()
    if step % config.eval_every != 0 or step == 0:
        run_eval()

    ckpt = Checkpoint(
        params=best_params, label_set=label_set, vocab=vocab, step=best_step, dev_metric=best_f1
    )
    return TrainResult(checkpoint=ckpt, history=history, evals=evals)


_ARCH_FIELDS = ("vocab_size", "label_count", "embed_dim", "num_layers", "num_heads",
                "ffn_dim", "max_len")


def distill_student(
    teacher: Checkpoint,
    d_unlabeled: Corpus,
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    student_init: ModelParams | None = None,
    max_steps: int | None = None,
    log_line: Callable[[str], None] | None = None,
) -> TrainResult:
    """Fit a fresh student to the frozen teacher's distributions.

    Gold labels on ``d_unlabeled``, if any, are ignored.  All batches are
    used, including the trailing partial one.  The returned checkpoint is
    the final step (there is no target-language dev criterion).
    """
    if encoder_config is not None:
        for name in _ARCH_FIELDS:
            if getattr(encoder_config, name) != getattr(teacher.config, name):
                raise ArchitectureMismatchError(
                    f"{name}: requested {getattr(encoder_config, name)}, "
                    f"teacher has {getattr(teacher.config, name)}"
                )
    if student_init is None:
        student_seed = rng.derive_seed(config.seed, rng.STUDENT_INIT)
        student = init_params(replace(teacher.config, init_seed=student_seed))
    else:
        student = student_init.copy()
    optimizer = AdamW(student.named(), config.optimizer_config())
    emit = log_line or (lambda line: None)
    emit("# columns: step\tl_kd")

    encoded = encode_corpus(d_unlabeled, teacher.vocab)
    names = [name for name, _ in student.named()]
    history: list[tuple[int, LossBreakdown]] = []
    step = 0
    done = False
    for epoch in range(config.kd_epochs):
        if done:
            break
        order = rng.substream(config.seed, rng.KD_SHUFFLE, epoch).permutation(len(encoded))
        for start in range(0, len(encoded), config.batch_size):
            if max_steps is not None and step >= max_steps:
                done = True
                break
            chunk = [encoded[i] for i in order[start : start + config.batch_size]]
            id_mat, mask, _ = _pad_batch(chunk, [[0] * len(x) for x in chunk])
            teacher_probs = classify(teacher.params, encode(teacher.params, id_mat, mask)).data
            with GradTape() as tape:
                student_probs = classify(student, encode(student, id_mat, mask))
                l_kd = kd_mse_loss(student_probs, teacher_probs, mask)
            grads = dict(zip(names, tape.gradients(l_kd, student.tensors())))
            optimizer.step(grads)
            step += 1
            value = l_kd.item()
            history.append((step, LossBreakdown(0.0, 0.0, 0.0, value, l_kd=value)))
            emit(f"{step}\t{_format(value)}")
            if not np.isfinite(value):
                raise NonFiniteLossError(step, history[-1][1], order[start : start + config.batch_size])

    ckpt = Checkpoint(
        params=student,
        label_set=teacher.label_set,
        vocab=teacher.vocab,
        step=step,
        dev_metric=float("nan"),
    )
    return TrainResult(checkpoint=ckpt, history=history, evals=[])
