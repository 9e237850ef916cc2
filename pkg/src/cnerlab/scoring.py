"""Entity-level precision/recall/F1 and token-level agreement.

An entity counts as a true positive only when type, start, and end all
match.  Conventions: P = 0 when nothing was predicted, R = 0 when there is
no gold entity, F1 = 0 when P + R = 0.  Micro scores aggregate counts over
types.  Predicted sequences are repaired to valid IOB2 before scoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Corpus, extract_entities, repair_iob2


class LengthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TypeScore:
    true_positives: int
    predicted_count: int
    gold_count: int

    @property
    def precision(self) -> float:
        return self.true_positives / self.predicted_count if self.predicted_count else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.gold_count if self.gold_count else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class F1Report:
    per_type: dict
    micro: TypeScore


def entity_f1(gold: Corpus, predicted: Sequence[Sequence[int]]) -> F1Report:
    label_set = gold.label_set
    if len(predicted) != len(gold):
        raise LengthMismatchError(
            f"{len(predicted)} predictions for {len(gold)} gold sentences"
        )
    tp = {t: 0 for t in label_set.entity_types}
    n_pred = {t: 0 for t in label_set.entity_types}
    n_gold = {t: 0 for t in label_set.entity_types}
    for i, (sent, pred) in enumerate(zip(gold.sentences, predicted)):
        if len(pred) != len(sent):
            raise LengthMismatchError(
                f"sentence {i}: {len(pred)} predicted labels for {len(sent)} tokens"
            )
        gold_spans = set(extract_entities(sent.labels, label_set))
        pred_spans = set(extract_entities(repair_iob2(pred, label_set), label_set))
        for span in gold_spans:
            n_gold[span.entity_type] += 1
        for span in pred_spans:
            n_pred[span.entity_type] += 1
        for span in gold_spans & pred_spans:
            tp[span.entity_type] += 1
    per_type = {
        t: TypeScore(tp[t], n_pred[t], n_gold[t]) for t in label_set.entity_types
    }
    micro = TypeScore(
        sum(tp.values()), sum(n_pred.values()), sum(n_gold.values())
    )
    return F1Report(per_type=per_type, micro=micro)


def label_agreement(a: Sequence[Sequence[int]], b: Sequence[Sequence[int]]) -> float:
    """Fraction of aligned token positions with equal labels."""
    if len(a) != len(b):
        raise LengthMismatchError(f"{len(a)} vs {len(b)} sequences")
    equal = 0
    total = 0
    for i, (seq_a, seq_b) in enumerate(zip(a, b)):
        if len(seq_a) != len(seq_b):
            raise LengthMismatchError(f"sequence {i}: {len(seq_a)} vs {len(seq_b)} labels")
        for x, y in zip(seq_a, seq_b):
            equal += x == y
            total += 1
    if total == 0:
        raise LengthMismatchError("no token positions to compare")
    return equal / total


def format_report_text(report: F1Report) -> str:
    header = f"{'type':<10}{'tp':>6}{'pred':>7}{'gold':>7}{'prec':>9}{'recall':>9}{'f1':>9}\n"
    lines = [header]
    rows = list(report.per_type.items()) + [("micro", report.micro)]
    for name, s in rows:
        lines.append(
            f"{name:<10}{s.true_positives:>6}{s.predicted_count:>7}{s.gold_count:>7}"
            f"{s.precision:>9.4f}{s.recall:>9.4f}{s.f1:>9.4f}\n"
        )
    return "".join(lines)


def format_report_kv(report: F1Report) -> str:
    rows = list(report.per_type.items()) + [("micro", report.micro)]
    lines = []
    for name, s in rows:
        key = name.lower()
        lines.append(f"{key}.tp={s.true_positives}\n")
        lines.append(f"{key}.predicted={s.predicted_count}\n")
        lines.append(f"{key}.gold={s.gold_count}\n")
        lines.append(f"{key}.precision={s.precision!r}\n")
        lines.append(f"{key}.recall={s.recall!r}\n")
        lines.append(f"{key}.f1={s.f1!r}\n")
    return "".join(lines)
