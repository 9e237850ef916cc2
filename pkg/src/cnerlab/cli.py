"""Command-line pipeline: gen, train, distill, eval, predict, experiment.

Configuration is plain ``key=value`` lines (see ``parse_kv``); command-line
flags override file values.  Every command writes a ``manifest.txt`` echoing
the fully resolved config plus content hashes of its inputs and outputs, and
never writes timestamps, so identical inputs produce byte-identical
artifacts.  Errors exit non-zero and print ``ErrorClass: message`` on
stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bilingen import BilingualCorpora, GenConfig, TokenMapping, generate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    LabeledSentence,
    LabelSet,
    build_vocabulary,
    parse_conll,
    serialize_conll,
)
from .encoder import EncoderConfig
from .kv import format_kv, parse_kv
from .losses import LossWeights
from .scoring import entity_f1, format_report_kv, format_report_text, label_agreement
from .trainer import (
    TrainConfig,
    default_encoder_config,
    dev_split,
    distill_student,
    predict_corpus,
    train_teacher,
)

CORPUS_FILES = ("d_src", "d_tgt", "d_unlabeled", "d_test")

_GEN_FIELDS = {f.name: f.type for f in fields(GenConfig) if f.name != "seed"}
_ENCODER_FIELDS = ("embed_dim", "num_layers", "num_heads", "ffn_dim", "max_len", "init_scale")
_WEIGHT_FIELDS = ("alpha", "beta", "tau_lcl", "tau_tcl")
_TRAIN_FIELDS = (
    "batch_size", "epochs", "learning_rate", "eval_every", "beta1", "beta2", "eps",
    "weight_decay", "use_lcl", "use_tcl", "use_kd", "use_src", "use_tgt",
    "lcl_include_o", "kd_epochs", "dev_fraction",
)

VARIANTS = (
    ("en", dict(use_src=True, use_tgt=False, use_lcl=False, use_tcl=False)),
    ("trans", dict(use_src=False, use_tgt=True, use_lcl=False, use_tcl=False)),
    ("en_trans", dict(use_src=True, use_tgt=True, use_lcl=False, use_tcl=False)),
    ("en_trans_lcl", dict(use_src=True, use_tgt=True, use_lcl=True, use_tcl=False)),
    ("en_trans_tcl", dict(use_src=True, use_tgt=True, use_lcl=False, use_tcl=True)),
    ("en_trans_lcl_tcl", dict(use_src=True, use_tgt=True, use_lcl=True, use_tcl=True)),
    ("en_trans_lcl_tcl_kd", dict(use_src=True, use_tgt=True, use_lcl=True, use_tcl=True)),
)


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, kind: str, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "types":
            return tuple(t for t in raw.split(",") if t)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def _field_kind(type_str: str) -> str:
    if type_str == "int":
        return "int"
    if type_str == "float":
        return "float"
    if type_str == "bool":
        return "bool"
    return "types"


class ResolvedConfig:
    """Defaults overlaid with config-file values and then CLI flags."""

    def __init__(self, path: str | None, seed: int | None):
        self.entries: dict[str, str] = {}
        if path is not None:
            self.entries = parse_kv(Path(path).read_text(encoding="utf-8"))
        self.seed = seed if seed is not None else int(self.entries.get("seed", "0"))
        known = {"seed"}
        known.update(f"gen.{n}" for n in _GEN_FIELDS)
        known.update(f"encoder.{n}" for n in _ENCODER_FIELDS)
        known.update(f"train.{n}" for n in _TRAIN_FIELDS)
        known.update(f"train.{n}" for n in _WEIGHT_FIELDS)
        unknown = sorted(set(self.entries) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    def gen_config(self) -> GenConfig:
        kwargs = {"seed": self.seed}
        for name, type_str in _GEN_FIELDS.items():
            raw = self.entries.get(f"gen.{name}")
            if raw is not None:
                kwargs[name] = _parse_value(raw, _field_kind(type_str), f"gen.{name}")
        return GenConfig(**kwargs)

    def train_config(self, overrides: dict) -> TrainConfig:
        weight_kwargs = {}
        for name in _WEIGHT_FIELDS:
            raw = self.entries.get(f"train.{name}")
            if raw is not None:
                weight_kwargs[name] = _parse_value(raw, "float", f"train.{name}")
        kwargs = {"seed": self.seed, "weights": LossWeights(**weight_kwargs)}
        for name in _TRAIN_FIELDS:
            raw = self.entries.get(f"train.{name}")
            if raw is not None:
                kind = "bool" if name.startswith(("use_", "lcl_")) else (
                    "int" if name in ("batch_size", "epochs", "eval_every", "kd_epochs") else "float"
                )
                kwargs[name] = _parse_value(raw, kind, f"train.{name}")
        kwargs.update(overrides)
        return TrainConfig(**kwargs)

    def encoder_config(self, vocab_size: int, label_count: int) -> EncoderConfig:
        kwargs = {"vocab_size": vocab_size, "label_count": label_count, "init_seed": self.seed}
        for name in _ENCODER_FIELDS:
            raw = self.entries.get(f"encoder.{name}")
            if raw is not None:
                kind = "float" if name == "init_scale" else "int"
                kwargs[name] = _parse_value(raw, kind, f"encoder.{name}")
        return EncoderConfig(**kwargs)

    def echo(self, train_config: TrainConfig | None = None) -> dict[str, str]:
        """The fully resolved configuration, for the manifest."""
        out = {"seed": str(self.seed)}
        gen = self.gen_config()
        for name in _GEN_FIELDS:
            value = getattr(gen, name)
            out[f"gen.{name}"] = ",".join(value) if isinstance(value, tuple) else repr(value) if isinstance(value, float) else str(value)
        for name in _ENCODER_FIELDS:
            raw = self.entries.get(f"encoder.{name}")
            if raw is not None:
                out[f"encoder.{name}"] = raw
        tc = train_config if train_config is not None else self.train_config({})
        for name in _WEIGHT_FIELDS:
            out[f"train.{name}"] = repr(getattr(tc.weights, name))
        for name in _TRAIN_FIELDS:
            value = getattr(tc, name)
            out[f"train.{name}"] = str(value).lower() if isinstance(value, bool) else (
                repr(value) if isinstance(value, float) else str(value)
            )
        return out


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, entries: dict[str, str]) -> None:
    (out_dir / "manifest.txt").write_text(format_kv(entries), encoding="utf-8")


def _manifest_header(command: str, resolved: ResolvedConfig, train_config=None) -> dict[str, str]:
    entries = {"tool.version": __version__, "command": command}
    for key, value in resolved.echo(train_config).items():
        entries[f"config.{key}"] = value
    return entries


def _load_corpora_dir(data_dir: Path) -> BilingualCorpora:
    manifest_path = data_dir / "manifest.txt"
    if manifest_path.exists():
        manifest = parse_kv(manifest_path.read_text(encoding="utf-8"))
        types = tuple(manifest["config.gen.entity_types"].split(","))
        label_set = LabelSet.for_types(types)
    else:
        label_set = _infer_label_set(data_dir)
    texts = {}
    for name in CORPUS_FILES:
        path = data_dir / f"{name}.conll"
        if not path.exists():
            raise FileNotFoundError(f"missing corpus file {path}")
        texts[name] = path.read_text(encoding="utf-8")
    seeds_path = data_dir / "sentence_seeds.txt"
    seeds = tuple(
        int(line) for line in seeds_path.read_text(encoding="utf-8").split() if line
    ) if seeds_path.exists() else ()
    phi_path = data_dir / "phi.tsv"
    mapping = (
        TokenMapping.from_tsv(phi_path.read_text(encoding="utf-8"))
        if phi_path.exists()
        else TokenMapping({})
    )
    return BilingualCorpora(
        d_src=parse_conll(texts["d_src"], label_set, "src"),
        d_tgt=parse_conll(texts["d_tgt"], label_set, "tgt"),
        d_unlabeled=parse_conll(texts["d_unlabeled"], label_set, "tgt"),
        d_test=parse_conll(texts["d_test"], label_set, "tgt"),
        label_set=label_set,
        mapping=mapping,
        sentence_seeds=seeds,
    )


def _infer_label_set(data_dir: Path) -> LabelSet:
    names: set[str] = set()
    for name in CORPUS_FILES:
        path = data_dir / f"{name}.conll"
        if not path.exists():
            continue
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                names.add(line.replace(" ", "\t").split("\t")[-1])
    types = sorted({n.split("-", 1)[1] for n in names if n != "O"})
    if not types:
        raise ConfigError(f"cannot infer a label set from {data_dir}")
    return LabelSet.for_types(tuple(types))


def cmd_gen(args) -> int:
    resolved = ResolvedConfig(args.config, args.seed)
    config = resolved.gen_config()
    corpora = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = _manifest_header("gen", resolved)
    for name in CORPUS_FILES:
        path = out / f"{name}.conll"
        path.write_text(serialize_conll(getattr(corpora, name)), encoding="utf-8")
        entries[f"corpus.{name}.path"] = path.name
        entries[f"corpus.{name}.sha256"] = _sha256_file(path)
    (out / "phi.tsv").write_text(corpora.mapping.to_tsv(), encoding="utf-8")
    (out / "sentence_seeds.txt").write_text(
        "".join(f"{s}\n" for s in corpora.sentence_seeds), encoding="utf-8"
    )
    entries["phi_table"] = "phi.tsv"
    entries["phi_table.sha256"] = _sha256_file(out / "phi.tsv")
    entries["seeds_file"] = "sentence_seeds.txt"
    entries["seeds_file.sha256"] = _sha256_file(out / "sentence_seeds.txt")
    _write_manifest(out, entries)
    print(f"wrote {len(corpora.d_src)} aligned pairs, {len(corpora.d_unlabeled)} unlabeled, "
          f"{len(corpora.d_test)} test sentences to {out}")
    return 0


def _train_overrides(args) -> dict:
    overrides = {}
    if args.no_lcl:
        overrides["use_lcl"] = False
    if args.no_tcl:
        overrides["use_tcl"] = False
    if args.no_src:
        overrides["use_src"] = False
    if args.no_tgt:
        overrides["use_tgt"] = False
        overrides.setdefault("use_tcl", False)
    if overrides.get("use_src") is False:
        overrides["use_tcl"] = False
    return overrides


def cmd_train(args) -> int:
    resolved = ResolvedConfig(args.config, args.seed)
    config = resolved.train_config(_train_overrides(args))
    data_dir = Path(args.data)
    corpora = _load_corpora_dir(data_dir)
    train_corpora, dev = dev_split(corpora, config.dev_fraction)
    vocab = build_vocabulary([corpora.d_src, corpora.d_tgt, corpora.d_unlabeled])
    encoder_config = resolved.encoder_config(len(vocab), len(corpora.label_set))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.tsv"
    with open(log_path, "w", encoding="utf-8") as log:
        result = train_teacher(
            config, train_corpora, dev, encoder_config, vocab,
            log_line=lambda line: log.write(line + "\n"),
        )
    ckpt_path = out / "teacher.ckpt"
    save_checkpoint(str(ckpt_path), result.checkpoint)

    entries = _manifest_header("train", resolved, config)
    for name in CORPUS_FILES:
        entries[f"corpus.{name}.path"] = str(data_dir / f"{name}.conll")
        entries[f"corpus.{name}.sha256"] = _sha256_file(data_dir / f"{name}.conll")
    entries["vocab.sha256"] = vocab.sha256()
    entries["artifact.checkpoint.path"] = ckpt_path.name
    entries["artifact.checkpoint.sha256"] = _sha256_file(ckpt_path)
    entries["artifact.log.path"] = log_path.name
    entries["artifact.log.sha256"] = _sha256_file(log_path)
    entries["best_dev_f1"] = repr(result.checkpoint.dev_metric)
    entries["best_step"] = str(result.checkpoint.step)
    _write_manifest(out, entries)
    print(f"best dev F1 {result.checkpoint.dev_metric:.4f} at step {result.checkpoint.step}; "
          f"checkpoint at {ckpt_path}")
    return 0


def cmd_distill(args) -> int:
    resolved = ResolvedConfig(args.config, args.seed)
    config = resolved.train_config({})
    teacher_path = Path(args.teacher)
    teacher_hash_before = _sha256_file(teacher_path)
    teacher = load_checkpoint(str(teacher_path))
    data_dir = Path(args.data)
    unlabeled_path = data_dir / "d_unlabeled.conll"
    corpus = parse_conll(unlabeled_path.read_text(encoding="utf-8"), teacher.label_set, "tgt")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "distill_log.tsv"
    with open(log_path, "w", encoding="utf-8") as log:
        result = distill_student(
            teacher, corpus, config, max_steps=args.kd_steps,
            log_line=lambda line: log.write(line + "\n"),
        )
    student = result.checkpoint
    teacher_preds = predict_corpus(teacher.params, teacher.label_set, teacher.vocab, corpus)
    student_preds = predict_corpus(student.params, student.label_set, student.vocab, corpus)
    agreement = label_agreement(teacher_preds, student_preds)
    student.dev_metric = agreement
    student_path = out / "student.ckpt"
    save_checkpoint(str(student_path), student)

    teacher_hash_after = _sha256_file(teacher_path)
    if teacher_hash_after != teacher_hash_before:
        raise RuntimeError("teacher checkpoint changed on disk during distillation")
    entries = _manifest_header("distill", resolved, config)
    entries["corpus.d_unlabeled.path"] = str(unlabeled_path)
    entries["corpus.d_unlabeled.sha256"] = _sha256_file(unlabeled_path)
    entries["teacher.path"] = str(teacher_path)
    entries["teacher.sha256.before"] = teacher_hash_before
    entries["teacher.sha256.after"] = teacher_hash_after
    entries["artifact.checkpoint.path"] = student_path.name
    entries["artifact.checkpoint.sha256"] = _sha256_file(student_path)
    entries["artifact.log.path"] = log_path.name
    entries["artifact.log.sha256"] = _sha256_file(log_path)
    entries["agreement"] = repr(agreement)
    _write_manifest(out, entries)
    print(f"student/teacher agreement {agreement:.4f} over {len(corpus)} sentences; "
          f"checkpoint at {student_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    test_path = Path(args.test)
    text = test_path.read_text(encoding="utf-8")
    _check_label_sets(text, ckpt.label_set, test_path)
    corpus = parse_conll(text, ckpt.label_set, "tgt")
    preds = predict_corpus(ckpt.params, ckpt.label_set, ckpt.vocab, corpus)
    report = entity_f1(corpus, preds)
    rendered = format_report_text(report)
    print(rendered, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(rendered, encoding="utf-8")
        (out / "report.kv").write_text(format_report_kv(report), encoding="utf-8")
        entries = {
            "tool.version": __version__,
            "command": "eval",
            "checkpoint.path": args.ckpt,
            "checkpoint.sha256": _sha256_file(Path(args.ckpt)),
            "corpus.test.path": str(test_path),
            "corpus.test.sha256": _sha256_file(test_path),
            "micro.f1": repr(report.micro.f1),
        }
        _write_manifest(out, entries)
    return 0


def _check_label_sets(text: str, label_set: LabelSet, path: Path) -> None:
    seen = set()
    for line in text.splitlines():
        if line.strip():
            seen.add(line.replace(" ", "\t").split("\t")[-1])
    extra = sorted(seen - set(label_set.labels))
    if extra:
        raise ConfigError(
            f"label set mismatch: {path} uses {sorted(seen)}, "
            f"checkpoint knows {list(label_set.labels)}"
        )


def _read_token_file(text: str) -> list[list[str]]:
    sentences: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        token = line.strip()
        if not token:
            if current:
                sentences.append(current)
                current = []
        else:
            current.append(token)
    if current:
        sentences.append(current)
    return sentences


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    sentences = _read_token_file(Path(args.input).read_text(encoding="utf-8"))
    if not sentences:
        Path(args.out).write_text("", encoding="utf-8")
        return 0
    o_idx = ckpt.label_set.o_index
    corpus = Corpus(
        tuple(LabeledSentence(tuple(s), (o_idx,) * len(s)) for s in sentences),
        ckpt.label_set,
        "input",
    )
    preds = predict_corpus(ckpt.params, ckpt.label_set, ckpt.vocab, corpus)
    labeled = Corpus(
        tuple(
            LabeledSentence(sent.tokens, tuple(pred))
            for sent, pred in zip(corpus.sentences, preds)
        ),
        ckpt.label_set,
        "predicted",
    )
    Path(args.out).write_text(serialize_conll(labeled), encoding="utf-8")
    return 0


def cmd_experiment(args) -> int:
    resolved = ResolvedConfig(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [resolved.seed + i for i in range(args.seeds)]
    scores: dict[str, list[float]] = {name: [] for name, _ in VARIANTS}
    for seed in seeds:
        gen_config = replace(resolved.gen_config(), seed=seed)
        corpora = generate(gen_config)
        train_corpora, dev = dev_split(corpora, resolved.train_config({}).dev_fraction)
        vocab = build_vocabulary([corpora.d_src, corpora.d_tgt, corpora.d_unlabeled])
        encoder_config = replace(
            resolved.encoder_config(len(vocab), len(corpora.label_set)), init_seed=seed
        )
        teachers: dict[tuple, Checkpoint] = {}
        for name, toggles in VARIANTS:
            config = resolved.train_config({**toggles, "seed": seed})
            key = tuple(sorted(toggles.items()))
            if key not in teachers:
                teachers[key] = train_teacher(
                    config, train_corpora, dev, encoder_config, vocab
                ).checkpoint
            model = teachers[key]
            if name.endswith("_kd"):
                model = distill_student(model, corpora.d_unlabeled, config).checkpoint
            preds = predict_corpus(model.params, model.label_set, model.vocab, corpora.d_test)
            f1 = entity_f1(corpora.d_test, preds).micro.f1
            scores[name].append(f1)
            print(f"seed {seed} {name}: target-test F1 {f1:.4f}")
    header = ["variant"] + [f"seed_{s}" for s in seeds] + ["mean"]
    lines = ["\t".join(header) + "\n"]
    for name, _ in VARIANTS:
        values = scores[name]
        cells = [name] + [f"{v:.4f}" for v in values] + [f"{float(np.mean(values)):.4f}"]
        lines.append("\t".join(cells) + "\n")
    table = "".join(lines)
    (out / "results.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnerlab",
        description="cross-lingual NER lab: synthetic bilingual data, contrastive "
        "teacher training, distillation, and entity-F1 evaluation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic bilingual corpora")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the teacher with the joint objective")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", required=True, help="directory produced by gen")
    p.add_argument("--out", required=True)
    p.add_argument("--no-lcl", action="store_true")
    p.add_argument("--no-tcl", action="store_true")
    p.add_argument("--no-src", action="store_true")
    p.add_argument("--no-tgt", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="distill the teacher into a student")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kd-steps", type=int, default=None)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="entity-level F1 of a checkpoint on a test corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label a raw token file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run the variant grid over several seeds")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
