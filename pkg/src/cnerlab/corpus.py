"""IOB2 sequence-labeling corpora: parsing, validation, spans, vocabularies.

File format is two-column CoNLL text: ``token<TAB>label`` (a single space is
also accepted), one blank line after each sentence.  All corpus values are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class CorpusError(ValueError):
    pass


class UnknownLabelError(CorpusError):
    def __init__(self, line_no: int, label: str):
        super().__init__(f"line {line_no}: unknown label {label!r}")
        self.line_no = line_no
        self.label = label


class MalformedLineError(CorpusError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"line {line_no}: expected 'token<TAB>label', got {line!r}")
        self.line_no = line_no


class EmptySentenceError(CorpusError):
    pass


class InvalidIOB2Error(CorpusError):
    def __init__(self, sentence_index: int, position: int, reason: str):
        super().__init__(f"sentence {sentence_index}, position {position}: {reason}")
        self.sentence_index = sentence_index
        self.position = position
        self.reason = reason


@dataclass(frozen=True)
class LabelSet:
    """An ordered label inventory: one O label plus B-/I- pairs per type."""

    labels: tuple[str, ...]
    entity_types: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise CorpusError("duplicate labels")
        if self.labels.count("O") != 1:
            raise CorpusError("label set must contain exactly one 'O'")
        valid = {"O"} | {f"{p}-{t}" for t in self.entity_types for p in ("B", "I")}
        for name in self.labels:
            if name not in valid:
                raise CorpusError(f"label {name!r} does not match any entity type")

    @classmethod
    def for_types(cls, entity_types: Sequence[str]) -> "LabelSet":
        types = tuple(entity_types)
        labels = tuple(f"B-{t}" for t in types) + tuple(f"I-{t}" for t in types) + ("O",)
        return cls(labels=labels, entity_types=types)

    @classmethod
    def default(cls) -> "LabelSet":
        return cls.for_types(("PER", "LOC", "ORG", "MISC"))

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(0, label) from None

    @property
    def o_index(self) -> int:
        return self.labels.index("O")

    def split(self, index: int) -> tuple[str, str | None]:
        """Decompose a label index into (prefix, entity type); O gives ('O', None)."""
        name = self.labels[index]
        if name == "O":
            return "O", None
        prefix, etype = name.split("-", 1)
        return prefix, etype


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise EmptySentenceError("sentence has no tokens")
        if len(self.tokens) != len(self.labels):
            raise CorpusError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[LabeledSentence, ...]
    label_set: LabelSet
    language_tag: str = ""

    def __post_init__(self):
        for i, sent in enumerate(self.sentences):
            violations = validate_iob2(sent.labels, self.label_set)
            if violations:
                pos, reason = violations[0]
                raise InvalidIOB2Error(i, pos, reason)

    def __len__(self) -> int:
        return len(self.sentences)

    def __getitem__(self, i: int) -> LabeledSentence:
        return self.sentences[i]


@dataclass(frozen=True)
class EntitySpan:
    """Exact-boundary entity: [start, end) token indices of one type."""

    entity_type: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise CorpusError(f"bad span boundaries [{self.start}, {self.end})")


def validate_iob2(labels: Sequence[int], label_set: LabelSet) -> list[tuple[int, str]]:
    """All IOB2 violations in a label index sequence, as (position, reason)."""
    violations = []
    prev_type: str | None = None
    for pos, idx in enumerate(labels):
        if not 0 <= idx < len(label_set):
            raise IndexError(f"label index {idx} out of range at position {pos}")
        prefix, etype = label_set.split(idx)
        if prefix == "I":
            if prev_type is None:
                violations.append((pos, f"I-{etype} with no open entity"))
            elif prev_type != etype:
                violations.append((pos, f"I-{etype} after an open {prev_type} entity"))
        prev_type = etype if prefix in ("B", "I") else None
    return violations


def repair_iob2(labels: Sequence[int], label_set: LabelSet) -> tuple[int, ...]:
    """Rewrite each I-T with no valid predecessor to B-T (CoNLL convention)."""
    repaired: list[int] = []
    prev_type: str | None = None
    for idx in labels:
        prefix, etype = label_set.split(idx)
        if prefix == "I" and prev_type != etype:
            idx = label_set.index(f"B-{etype}")
        repaired.append(idx)
        prev_type = etype
    return tuple(repaired)


def extract_entities(labels: Sequence[int], label_set: LabelSet) -> list[EntitySpan]:
    """Spans of a valid IOB2 sequence, disjoint and sorted by start.

    Callers holding possibly-invalid predictions must run
    :func:`repair_iob2` first; an orphan I- label raises here.
    """
    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_type: str | None = None

    def close(end: int):
        nonlocal open_start, open_type
        if open_start is not None:
            spans.append(EntitySpan(open_type, open_start, end))
        open_start, open_type = None, None

    for pos, idx in enumerate(labels):
        prefix, etype = label_set.split(idx)
        if prefix == "B":
            close(pos)
            open_start, open_type = pos, etype
        elif prefix == "I":
            if open_type != etype:
                raise InvalidIOB2Error(0, pos, f"orphan I-{etype}; repair first")
        else:
            close(pos)
    close(len(labels))
    return spans


def parse_conll(text: str, label_set: LabelSet, language_tag: str = "") -> Corpus:
    """Parse two-column CoNLL text into a validated corpus."""
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    labels: list[int] = []

    def flush():
        if tokens:
            sentences.append(LabeledSentence(tuple(tokens), tuple(labels)))
            tokens.clear()
            labels.clear()

    for line_no, line in enumerate(text.split("\n"), 1):
        line = line.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if "\t" in line:
            parts = line.split("\t")
        else:
            parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedLineError(line_no, line)
        token, label = parts
        if label not in label_set.labels:
            raise UnknownLabelError(line_no, label)
        tokens.append(token)
        labels.append(label_set.index(label))
    flush()
    return Corpus(tuple(sentences), label_set, language_tag)


def serialize_conll(corpus: Corpus) -> str:
    """Canonical text form; re-parsing yields an equal corpus."""
    chunks = []
    for sent in corpus.sentences:
        for token, idx in zip(sent.tokens, sent.labels):
            chunks.append(f"{token}\t{corpus.label_set.labels[idx]}\n")
        chunks.append("\n")
    return "".join(chunks)


@dataclass(frozen=True)
class Vocabulary:
    """token<->id bijection with reserved PAD=0 and UNK=1."""

    tokens: tuple[str, ...]
    _ids: dict = field(repr=False, hash=False, compare=False, default=None)

    def __post_init__(self):
        if self.tokens[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise CorpusError("vocabulary must start with the PAD and UNK tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode_tokens(self, tokens: Iterable[str]) -> list[int]:
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def token_for(self, idx: int) -> str:
        return self.tokens[idx]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocabulary(corpora: Sequence[Corpus], min_count: int = 1) -> Vocabulary:
    """Union token counts over ``corpora``; keep tokens seen >= min_count times.

    Ids are assigned by (count desc, lexicographic) after PAD and UNK, so the
    mapping is stable across runs.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for corpus in corpora:
        for sent in corpus.sentences:
            counts.update(sent.tokens)
    for reserved in (PAD_TOKEN, UNK_TOKEN):
        if reserved in counts:
            raise CorpusError(f"corpus contains the reserved token {reserved!r}")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *kept))
