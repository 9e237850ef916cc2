"""Deterministic synthetic bilingual corpus generation.

Stands in for a real translation pipeline: a "source" and a "target"
language share a fraction of surface forms verbatim (simulating shared
embedding anchors) and are otherwise related by a fixed token bijection.
Target sentences are produced by chunk-level reordering plus token mapping,
which keeps entity spans contiguous and IOB2 labels valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng
from .corpus import Corpus, LabeledSentence, LabelSet, extract_entities

MAX_MENTION_LEN = 3


class InfeasibleConfigError(ValueError):
    pass


class TokenNotInMappingError(KeyError):
    pass


@dataclass(frozen=True)
class GenConfig:
    vocab_size_per_language: int = 200
    overlap_fraction: float = 0.3
    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG", "MISC")
    gazetteer_size_per_type: int = 12
    templates_per_type: int = 3
    n_train: int = 500
    n_unlabeled: int = 500
    n_test: int = 300
    max_sentence_len: int = 14
    seed: int = 0

    def __post_init__(self):
        for name in (
            "vocab_size_per_language",
            "gazetteer_size_per_type",
            "templates_per_type",
            "n_train",
            "n_unlabeled",
            "n_test",
        ):
            if getattr(self, name) < 1:
                raise InfeasibleConfigError(f"{name} must be >= 1")
        if not self.entity_types:
            raise InfeasibleConfigError("entity_types must be non-empty")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise InfeasibleConfigError("overlap_fraction must lie in [0, 1]")
        if self.max_sentence_len < 3:
            raise InfeasibleConfigError("max_sentence_len must be >= 3")


@dataclass(frozen=True, eq=False)
class TokenMapping:
    """The fixed source->target surface-form bijection."""

    forward: dict

    def apply(self, token: str) -> str:
        try:
            return self.forward[token]
        except KeyError:
            raise TokenNotInMappingError(token) from None

    def to_tsv(self) -> str:
        return "".join(f"{s}\t{t}\n" for s, t in sorted(self.forward.items()))

    @classmethod
    def from_tsv(cls, text: str) -> "TokenMapping":
        forward = {}
        for line in text.splitlines():
            if line:
                src, tgt = line.split("\t")
                forward[src] = tgt
        return cls(forward)


@dataclass(frozen=True)
class BilingualCorpora:
    """Aligned source corpus, its translation, and held-out target corpora.

    ``d_unlabeled`` carries generated gold labels for diagnostics; training
    code treats it as unlabeled.  ``sentence_seeds[i]`` reproduces
    ``d_tgt[i]`` via :func:`translate_sentence`.
    """

    d_src: Corpus
    d_tgt: Corpus
    d_unlabeled: Corpus
    d_test: Corpus
    label_set: LabelSet
    mapping: TokenMapping
    sentence_seeds: tuple[int, ...]


@dataclass(frozen=True)
class _Pools:
    """Per-language token pools; index t holds entity tokens for type t."""

    entity_src: tuple[tuple[str, ...], ...]
    entity_tgt: tuple[tuple[str, ...], ...]
    context_src: tuple[str, ...]
    context_tgt: tuple[str, ...]
    mapping: TokenMapping


def _split_pool(prefix: str, size: int, overlap: float) -> tuple[list[str], list[str], dict]:
    """Build one pool: shared forms, then source/target-only aligned pairs."""
    n_shared = int(round(overlap * size))
    src, tgt, forward = [], [], {}
    for i in range(n_shared):
        tok = f"{prefix}{i}s"
        src.append(tok)
        tgt.append(tok)
        forward[tok] = tok
    for i in range(n_shared, size):
        a, b = f"{prefix}{i}a", f"{prefix}{i}b"
        src.append(a)
        tgt.append(b)
        forward[a] = b
    return src, tgt, forward


def _build_pools(config: GenConfig) -> _Pools:
    n_types = len(config.entity_types)
    entity_total = n_types * config.gazetteer_size_per_type
    context_size = config.vocab_size_per_language - entity_total
    if context_size < 2:
        raise InfeasibleConfigError(
            "gazetteer_size_per_type: entity pools leave fewer than 2 context "
            f"tokens in a vocabulary of {config.vocab_size_per_language}"
        )
    forward: dict = {}
    ent_src, ent_tgt = [], []
    for etype in config.entity_types:
        src, tgt, fwd = _split_pool(
            f"{etype.lower()}_", config.gazetteer_size_per_type, config.overlap_fraction
        )
        ent_src.append(tuple(src))
        ent_tgt.append(tuple(tgt))
        forward.update(fwd)
    ctx_src, ctx_tgt, fwd = _split_pool("w", context_size, config.overlap_fraction)
    forward.update(fwd)
    return _Pools(
        entity_src=tuple(ent_src),
        entity_tgt=tuple(ent_tgt),
        context_src=tuple(ctx_src),
        context_tgt=tuple(ctx_tgt),
        mapping=TokenMapping(forward),
    )


# A template is a tuple of slots: an int is that many context tokens, the
# string "E" is one entity mention (1..MAX_MENTION_LEN tokens).
def _build_templates(config: GenConfig) -> tuple[tuple, ...]:
    gen = rng.substream(config.seed, rng.TEMPLATES)
    templates = []
    for _ in range(len(config.entity_types)):
        per_type = []
        for _ in range(config.templates_per_type):
            n_entities = 2 if config.max_sentence_len >= 2 * MAX_MENTION_LEN + 2 and gen.random() < 0.35 else 1
            budget = config.max_sentence_len - MAX_MENTION_LEN * n_entities
            slots: list = []
            for k in range(n_entities):
                gap = int(gen.integers(0, min(4, budget) + 1))
                budget -= gap
                slots.append(gap)
                slots.append("E")
            tail = int(gen.integers(0, min(4, budget) + 1))
            slots.append(tail)
            per_type.append(tuple(s for s in slots if s != 0))
        templates.append(tuple(per_type))
    return tuple(templates)


def _pick(gen: np.random.Generator, pool: Sequence[str], k: int) -> list[str]:
    return [pool[int(gen.integers(0, len(pool)))] for _ in range(k)]


def _make_sentence(
    gen: np.random.Generator,
    type_index: int,
    templates: tuple,
    entity_pool: Sequence[str],
    context_pool: Sequence[str],
    label_set: LabelSet,
) -> LabeledSentence:
    template = templates[type_index][int(gen.integers(0, len(templates[type_index])))]
    etype = label_set.entity_types[type_index]
    b_idx = label_set.index(f"B-{etype}")
    i_idx = label_set.index(f"I-{etype}")
    o_idx = label_set.o_index
    tokens: list[str] = []
    labels: list[int] = []
    for slot in template:
        if slot == "E":
            length = int(gen.integers(1, MAX_MENTION_LEN + 1))
            tokens.extend(_pick(gen, entity_pool, length))
            labels.extend([b_idx] + [i_idx] * (length - 1))
        else:
            tokens.extend(_pick(gen, context_pool, slot))
            labels.extend([o_idx] * slot)
    return LabeledSentence(tuple(tokens), tuple(labels))


def translate_sentence(
    sentence: LabeledSentence, mapping: TokenMapping, seed: int, label_set: LabelSet
) -> LabeledSentence:
    """Chunk-permute and token-map one sentence; labels travel with tokens.

    Chunks are maximal entity spans plus single O tokens, so the output is
    IOB2-valid and the (type, length) entity multiset is preserved.
    """
    spans = extract_entities(sentence.labels, label_set)
    covered = {i for span in spans for i in range(span.start, span.end)}
    chunks: list[tuple[tuple[str, ...], tuple[int, ...]]] = []
    pos = 0
    span_iter = iter(spans)
    next_span = next(span_iter, None)
    while pos < len(sentence):
        if next_span is not None and pos == next_span.start:
            sl = slice(next_span.start, next_span.end)
            chunks.append((sentence.tokens[sl], sentence.labels[sl]))
            pos = next_span.end
            next_span = next(span_iter, None)
        else:
            assert pos not in covered
            chunks.append(((sentence.tokens[pos],), (sentence.labels[pos],)))
            pos += 1
    gen = np.random.default_rng(seed)
    order = gen.permutation(len(chunks))
    tokens: list[str] = []
    labels: list[int] = []
    for j in order:
        chunk_tokens, chunk_labels = chunks[int(j)]
        tokens.extend(mapping.apply(t) for t in chunk_tokens)
        labels.extend(chunk_labels)
    return LabeledSentence(tuple(tokens), tuple(labels))


def generate(config: GenConfig) -> BilingualCorpora:
    """Generate the four corpora as a pure function of the config.

    Raises InfeasibleConfigError when the requested sizes cannot satisfy the
    corpus invariants (every entity type present, test set disjoint).
    """
    n_types = len(config.entity_types)
    for name in ("n_train", "n_unlabeled", "n_test"):
        if getattr(config, name) < n_types:
            raise InfeasibleConfigError(
                f"{name} must be >= {n_types} so every entity type occurs"
            )
    label_set = LabelSet.for_types(config.entity_types)
    pools = _build_pools(config)
    templates = _build_templates(config)

    def sentence_for(stream: int, i: int, side: str) -> LabeledSentence:
        gen = rng.substream(config.seed, stream, i)
        t = i % n_types
        entity_pool = pools.entity_src[t] if side == "src" else pools.entity_tgt[t]
        context_pool = pools.context_src if side == "src" else pools.context_tgt
        return _make_sentence(gen, t, templates, entity_pool, context_pool, label_set)

    src_sents = [sentence_for(rng.SRC_SENTENCE, i, "src") for i in range(config.n_train)]
    seeds = tuple(rng.derive_seed(config.seed, rng.TGT_TRANSLATE, i) for i in range(config.n_train))
    tgt_sents = [
        translate_sentence(s, pools.mapping, seeds[i], label_set)
        for i, s in enumerate(src_sents)
    ]
    unl_sents = [
        sentence_for(rng.UNLABELED_SENTENCE, i, "tgt") for i in range(config.n_unlabeled)
    ]

    taken = {s.tokens for s in tgt_sents} | {s.tokens for s in unl_sents}
    test_sents = []
    for i in range(config.n_test):
        gen = rng.substream(config.seed, rng.TEST_SENTENCE, i)
        t = i % n_types
        for _ in range(200):
            cand = _make_sentence(
                gen, t, templates, pools.entity_tgt[t], pools.context_tgt, label_set
            )
            if cand.tokens not in taken:
                break
        else:
            raise InfeasibleConfigError(
                "n_test: could not draw a test sentence disjoint from the "
                "target training data; enlarge the vocabulary or templates"
            )
        test_sents.append(cand)

    return BilingualCorpora(
        d_src=Corpus(tuple(src_sents), label_set, "src"),
        d_tgt=Corpus(tuple(tgt_sents), label_set, "tgt"),
        d_unlabeled=Corpus(tuple(unl_sents), label_set, "tgt"),
        d_test=Corpus(tuple(test_sents), label_set, "tgt"),
        label_set=label_set,
        mapping=pools.mapping,
        sentence_seeds=seeds,
    )
