"""Command-line entry point orchestrating the pipeline end to end.

Configuration is a flat, dot-namespaced key set (JSON file via --config,
individual overrides via --set key=value; flags win over the file). Every
run writes a resolved-config snapshot next to its outputs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime
failure. AUTOTRIG_OUT overrides --out.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from autotrig import corpus as C
from autotrig import pipeline as P
from autotrig.classifier import ClassifierConfig, TokenClassifier, token_accuracy, train_classifier
from autotrig.lm import LangModel, LmConfig, perplexity, train_lm
from autotrig.refine import RefineSession, build_app, write_refined
from autotrig.synthgen import SynthConfig, generate
from autotrig.tin import TinConfig, TinModel, TrainConfig, evaluate, train_baseline, train_tin
from autotrig.trigger_extract import SocConfig, extract_dataset, write_scores


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# every config key with (default, help); --help renders this table
CONFIG_KEYS: dict[str, tuple[object, str]] = {
    "synth.n_sentences": (200, "number of generated sentences"),
    "synth.seed": (0, "corpus seed"),
    "synth.entity_types": ("T1,T2,T3", "comma-separated entity type labels"),
    "synth.cues_per_type": (2, "cue phrases per type"),
    "synth.cue_length": (3, "tokens per cue phrase"),
    "synth.entity_vocab_size": (50, "shared entity surface forms"),
    "synth.filler_vocab_size": (200, "filler vocabulary size"),
    "synth.len_min": (8, "minimum sentence length"),
    "synth.len_max": (16, "maximum sentence length"),
    "synth.decoy_phrases": (False, "wrap filler runs as decoy constituents"),
    "enc.embed_dim": (50, "token embedding width"),
    "enc.hidden_dim": (200, "recurrent width per direction (reference setting)"),
    "clf.epochs": (10, "token-classifier epochs (reference setting)"),
    "clf.batch_size": (10, "token-classifier batch size (reference setting)"),
    "clf.lr": (0.01, "token-classifier learning rate (reference setting)"),
    "clf.seed": (0, "token-classifier seed"),
    "lm.epochs": (10, "language-model epochs"),
    "lm.batch_size": (10, "language-model batch size"),
    "lm.lr": (0.01, "language-model learning rate"),
    "lm.temperature": (1.0, "sampling temperature (0 = greedy)"),
    "lm.seed": (0, "language-model seed"),
    "soc.n_samples": (20, "context resamplings per candidate"),
    "soc.context_radius": (4, "resampled neighborhood radius in tokens"),
    "soc.k": (2, "triggers kept per entity (reference setting)"),
    "soc.max_phrase_len": (10, "longest candidate phrase"),
    "soc.candidate_source": ("CP", "candidate source: CP, RS or DP"),
    "soc.rs_num_spans": (10, "random spans drawn for RS"),
    "soc.rs_span_len": (3, "random span length for RS"),
    "soc.seed": (0, "extraction seed"),
    "soc.workers": (1, "parallel scoring threads"),
    "trainer.epochs": (10, "tagger epochs (reference setting)"),
    "trainer.batch_size": (10, "tagger batch size (reference setting)"),
    "trainer.lr": (0.01, "tagger learning rate (reference setting)"),
    "trainer.lr_decay": (1.0, "per-epoch learning-rate multiplier"),
    "trainer.seed": (0, "tagger seed"),
    "tin.lambda": (0.5, "interpolation weight (reference setting)"),
    "tin.ent_keep_prob": (0.0, "entity-mask keep probability"),
    "tin.ent_unk_prob": (0.15, "entity-mask UNK probability"),
    "tin.trig_keep_prob": (0.6, "trigger-mask keep probability"),
    "tin.trig_unk_prob": (0.15, "trigger-mask UNK probability"),
    "tin.decoy_masks": (1, "decoy mask positions per view"),
    "refine.k_shown": (5, "auto triggers shown per entity (reference setting)"),
    "refine.export_k": (2, "triggers kept per entity on export"),
    "refine.port": (8570, "service port"),
}

TIN_ONLY_KEYS = tuple(k for k in CONFIG_KEYS if k.startswith("tin."))


def _coerce(key: str, value, default):
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r} expects {type(default).__name__}, got {value!r}")


def _unknown_key(key: str) -> UsageError:
    near = difflib.get_close_matches(key, CONFIG_KEYS, n=1)
    hint = f"; nearest valid key is {near[0]!r}" if near else ""
    return UsageError(f"unknown config key {key!r}{hint}")


class RunConfig:
    """Flat dot-namespaced config: defaults <- JSON file <- --set flags."""

    def __init__(self, file_path: str | None, overrides: list[str]):
        self.values = {k: v for k, (v, _) in CONFIG_KEYS.items()}
        self.overridden: set[str] = set()
        if file_path:
            path = Path(file_path)
            if not path.exists():
                raise DataError(f"config file not found: {path}")
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {path}: invalid JSON: {exc}")
            if not isinstance(data, dict):
                raise DataError(f"config file {path}: expected an object")
            for key, val in data.items():
                if key not in CONFIG_KEYS:
                    raise _unknown_key(key)
                self.values[key] = _coerce(key, val, CONFIG_KEYS[key][0])
                self.overridden.add(key)
        for item in overrides:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            key, _, val = item.partition("=")
            if key not in CONFIG_KEYS:
                raise _unknown_key(key)
            self.values[key] = _coerce(key, val, CONFIG_KEYS[key][0])
            self.overridden.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def reject(self, keys: tuple[str, ...], context: str) -> None:
        bad = sorted(self.overridden & set(keys))
        if bad:
            raise UsageError(f"{context} does not accept config keys: {', '.join(bad)}")

    def snapshot(self, path: Path, command: str) -> None:
        obj = {"command": command, "config": dict(sorted(self.values.items()))}
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # --- typed sub-configs ----------------------------------------------------

    def synth_config(self) -> SynthConfig:
        size = self["synth.entity_vocab_size"]
        vocab = None
        if size != 50:
            vocab = tuple(
                f"ent{i}" if i % 2 == 0 else f"ent{i}a ent{i}b" for i in range(size)
            )
        return SynthConfig(
            entity_types=tuple(t for t in str(self["synth.entity_types"]).split(",") if t),
            cues_per_type=self["synth.cues_per_type"],
            cue_length=self["synth.cue_length"],
            shared_entity_vocab=vocab,
            filler_vocab_size=self["synth.filler_vocab_size"],
            sentence_length_range=(self["synth.len_min"], self["synth.len_max"]),
            n_sentences=self["synth.n_sentences"],
            seed=self["synth.seed"],
            decoy_phrases=self["synth.decoy_phrases"],
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            embed_dim=self["enc.embed_dim"],
            hidden_dim=self["enc.hidden_dim"],
            epochs=self["clf.epochs"],
            batch_size=self["clf.batch_size"],
            lr=self["clf.lr"],
            seed=self["clf.seed"],
        )

    def lm_config(self) -> LmConfig:
        return LmConfig(
            embed_dim=self["enc.embed_dim"],
            hidden_dim=self["enc.hidden_dim"],
            epochs=self["lm.epochs"],
            batch_size=self["lm.batch_size"],
            lr=self["lm.lr"],
            temperature=self["lm.temperature"],
            seed=self["lm.seed"],
        )

    def soc_config(self) -> SocConfig:
        return SocConfig(
            n_samples=self["soc.n_samples"],
            context_radius=self["soc.context_radius"],
            k=self["soc.k"],
            max_phrase_len=self["soc.max_phrase_len"],
            candidate_source=self["soc.candidate_source"],
            rs_num_spans=self["soc.rs_num_spans"],
            rs_span_len=self["soc.rs_span_len"],
            seed=self["soc.seed"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            embed_dim=self["enc.embed_dim"],
            hidden_dim=self["enc.hidden_dim"],
            epochs=self["trainer.epochs"],
            batch_size=self["trainer.batch_size"],
            lr=self["trainer.lr"],
            lr_decay=self["trainer.lr_decay"],
            seed=self["trainer.seed"],
        )

    def tin_config(self) -> TinConfig:
        return TinConfig(
            embed_dim=self["enc.embed_dim"],
            hidden_dim=self["enc.hidden_dim"],
            epochs=self["trainer.epochs"],
            batch_size=self["trainer.batch_size"],
            lr=self["trainer.lr"],
            lr_decay=self["trainer.lr_decay"],
            seed=self["trainer.seed"],
            lam=self["tin.lambda"],
            ent_keep_prob=self["tin.ent_keep_prob"],
            ent_unk_prob=self["tin.ent_unk_prob"],
            trig_keep_prob=self["tin.trig_keep_prob"],
            trig_unk_prob=self["tin.trig_unk_prob"],
            decoy_masks=self["tin.decoy_masks"],
        )


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("AUTOTRIG_OUT")
    if not out:
        raise UsageError("--out is required (or set AUTOTRIG_OUT)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"missing required --{what}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} file not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    corpus = generate(cfg.synth_config())
    C.write_conll(out / "corpus.conll", corpus.sentences)
    C.write_triggers(out / "gold_triggers.jsonl", corpus.gold)
    C.write_trees(out / "trees.txt", corpus.trees)
    C.write_deps(out / "deps.txt", corpus.dep_heads)
    cfg.snapshot(out / "config.resolved.json", "synth-gen")
    print(f"wrote {len(corpus.sentences)} sentences to {out}")
    return 0


def cmd_train_clf(args, cfg: RunConfig) -> int:
    data = C.read_conll(_need_file(args.data, "data"))
    out = _out_dir(args)
    model = train_classifier(data, cfg.classifier_config())
    model.save(out / "clf.json")
    _write_json(out / "clf.metrics.json", {
        "train_token_accuracy": token_accuracy(model, data),
        "loss_history": model.history,
    })
    cfg.snapshot(out / "config.resolved.json", "train-clf")
    print(f"classifier saved to {out / 'clf.json'}")
    return 0


def cmd_train_lm(args, cfg: RunConfig) -> int:
    data = C.read_conll(_need_file(args.data, "data"))
    out = _out_dir(args)
    model = train_lm(data, cfg.lm_config())
    model.save(out / "lm.json")
    _write_json(out / "lm.metrics.json", {
        "train_perplexity": perplexity(model, data),
        "loss_history": model.history,
    })
    cfg.snapshot(out / "config.resolved.json", "train-lm")
    print(f"language model saved to {out / 'lm.json'}")
    return 0


def cmd_extract(args, cfg: RunConfig) -> int:
    data = C.read_conll(_need_file(args.data, "data"))
    clf = TokenClassifier.load(_need_file(args.clf, "clf"))
    lmodel = LangModel.load(_need_file(args.lm, "lm"))
    soc = cfg.soc_config()
    trees = deps = None
    if soc.candidate_source == "CP":
        if not args.trees:
            raise UsageError("--trees is required with candidate source CP")
        trees = C.read_trees(_need_file(args.trees, "trees"), data)
    if soc.candidate_source == "DP":
        if not args.deps:
            raise UsageError("--deps is required with candidate source DP")
        deps = C.read_deps(_need_file(args.deps, "deps"), data)
    out = _out_dir(args)
    examples, sidecars = extract_dataset(
        data, clf, lmodel, soc, trees=trees, dep_heads=deps,
        workers=cfg["soc.workers"],
    )
    C.write_triggers(out / "triggers.jsonl", examples)
    write_scores(out / "scores.jsonl", sidecars)
    cfg.snapshot(out / "config.resolved.json", "extract")
    n_trig = sum(len(ex.triggers) for ex in examples)
    print(f"extracted {n_trig} triggers over {len(examples)} sentences to {out}")
    return 0


def cmd_serve_refine(args, cfg: RunConfig) -> int:
    import uvicorn

    session = RefineSession(
        _need_file(args.data, "data"),
        args.log or "judgments.jsonl",
        k_shown=cfg["refine.k_shown"],
    )
    app = build_app(session, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=cfg["refine.port"], log_level="warning")
    return 0


def cmd_apply_judgments(args, cfg: RunConfig) -> int:
    session = RefineSession(
        _need_file(args.data, "data"),
        _need_file(args.log, "log"),
        k_shown=cfg["refine.k_shown"],
    )
    out = Path(args.out or "refined.jsonl")
    write_refined(session, out, k=cfg["refine.export_k"])
    print(f"refined dataset written to {out}")
    return 0


def cmd_train_tin(args, cfg: RunConfig) -> int:
    data = C.read_triggers(_need_file(args.data, "data"))
    out = _out_dir(args)
    model = train_tin(data, cfg.tin_config())
    model.save(out / "tin.json")
    _write_json(out / "tin.metrics.json", {"loss_history": model.history})
    cfg.snapshot(out / "config.resolved.json", "train-tin")
    print(f"interpolation tagger saved to {out / 'tin.json'}")
    return 0


def cmd_train_baseline(args, cfg: RunConfig) -> int:
    cfg.reject(TIN_ONLY_KEYS, "train-baseline")
    data = C.read_conll(_need_file(args.data, "data"))
    out = _out_dir(args)
    model = train_baseline(data, cfg.train_config())
    model.save(out / "baseline.json")
    _write_json(out / "baseline.metrics.json", {"loss_history": model.history})
    cfg.snapshot(out / "config.resolved.json", "train-baseline")
    print(f"baseline tagger saved to {out / 'baseline.json'}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = TinModel.load(_need_file(args.model, "model"))
    data = C.read_conll(_need_file(args.data, "data"))
    report = evaluate(model, data)
    out = Path(args.out or "report.json")
    _write_json(out, report.to_dict())
    print(f"f1={report.f1:.4f} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} -> {out}")
    return 0


SWEEP_AXES = ("lambda", "k", "candidate-source", "train-size")


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"--axis must be one of {SWEEP_AXES}")
    values = [v for v in (args.values or "").split(",") if v]
    if not values:
        raise UsageError("--values is required, e.g. --values 0,0.25,0.5")
    out = _out_dir(args)
    base_seed = args.seed
    pcfg = P.PipelineConfig(
        embed_dim=cfg["enc.embed_dim"],
        hidden_dim=cfg["enc.hidden_dim"],
        clf_epochs=cfg["clf.epochs"],
        clf_lr=cfg["clf.lr"],
        lm_epochs=cfg["lm.epochs"],
        lm_lr=cfg["lm.lr"],
        tagger_epochs=cfg["trainer.epochs"],
        tagger_lr=cfg["trainer.lr"],
        tagger_lr_decay=cfg["trainer.lr_decay"],
        batch_size=cfg["trainer.batch_size"],
        lam=cfg["tin.lambda"],
        soc=cfg.soc_config(),
        workers=cfg["soc.workers"],
    )
    test = generate(P.bench_test_config(args.test_size, 990011)).sentences

    rows: list[tuple[str, int, int, float]] = []
    for i in range(args.seeds):
        seed = base_seed + i
        if args.axis == "train-size":
            for v in values:
                size = int(v)
                train = generate(P.bench_train_config(size, 100 + seed))
                f1, _ = P.run_tin_vs_baseline(train, test, pcfg, seed)
                rows.append((v, size, seed, f1))
            continue

        size = args.train_size
        train = generate(P.bench_train_config(size, 100 + seed))
        if args.axis == "lambda":
            run = P.run_extraction(train.sentences, train, pcfg, seed)
            for v in values:
                model = train_tin(run.examples, pcfg.tin_config(seed, float(v)))
                rows.append((v, size, seed, evaluate(model, test).f1))
        elif args.axis == "k":
            soc = replace(pcfg.soc, seed=seed, k=max(int(v) for v in values))
            run = P.run_extraction(train.sentences, train, pcfg, seed, soc=soc)
            for v in values:
                examples = P.reselect_top_k(run.examples, run.sidecars, int(v))
                model = train_tin(examples, pcfg.tin_config(seed))
                rows.append((v, size, seed, evaluate(model, test).f1))
        else:  # candidate-source
            for v in values:
                if v not in ("CP", "RS", "DP"):
                    raise UsageError(f"bad candidate source {v!r}")
                soc = replace(pcfg.soc, seed=seed, candidate_source=v)
                run = P.run_extraction(train.sentences, train, pcfg, seed, soc=soc)
                model = train_tin(run.examples, pcfg.tin_config(seed))
                rows.append((v, size, seed, evaluate(model, test).f1))

    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "size", "seed", "f1"])
        for variant, size, seed, f1 in rows:
            writer.writerow([variant, size, seed, f"{f1:.6f}"])
    cfg.snapshot(out / "config.resolved.json", "sweep")
    print(f"{len(rows)} sweep rows written to {csv_path}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    epilogue = "config keys (defaults in parentheses):\n" + "\n".join(
        f"  {key} ({default!r}): {help_}" for key, (default, help_) in CONFIG_KEYS.items()
    )
    parser = Parser(
        prog="autotrig",
        description="trigger-aware NER: extraction, interpolation training, refinement",
        epilog=epilogue,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flat dot-namespaced keys)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--out", help="output directory (or AUTOTRIG_OUT)")

    p = sub.add_parser("synth-gen", help="generate a planted-trigger synthetic corpus")
    common(p)

    p = sub.add_parser("train-clf", help="train the entity token classifier")
    common(p)
    p.add_argument("--data", help="CoNLL training file")

    p = sub.add_parser("train-lm", help="train the context-sampling language model")
    common(p)
    p.add_argument("--data", help="CoNLL training file")

    p = sub.add_parser("extract", help="extract triggers with saliency scoring")
    common(p)
    p.add_argument("--data", help="CoNLL training file")
    p.add_argument("--clf", help="classifier checkpoint")
    p.add_argument("--lm", help="language model checkpoint")
    p.add_argument("--trees", help="bracketed parse file (CP source)")
    p.add_argument("--deps", help="dependency heads file (DP source)")

    p = sub.add_parser("serve-refine", help="serve the refinement API/UI")
    common(p)
    p.add_argument("--data", help="trigger JSONL dataset")
    p.add_argument("--log", help="judgments log path (default judgments.jsonl)")
    p.add_argument("--ui", help="static UI directory to serve at /")
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("apply-judgments", help="export the refined dataset")
    common(p)
    p.add_argument("--data", help="trigger JSONL dataset")
    p.add_argument("--log", help="judgments log")

    p = sub.add_parser("train-tin", help="train the trigger interpolation tagger")
    common(p)
    p.add_argument("--data", help="trigger JSONL dataset")

    p = sub.add_parser("train-baseline", help="train the plain tagger control")
    common(p)
    p.add_argument("--data", help="CoNLL training file")

    p = sub.add_parser("eval", help="evaluate a tagger checkpoint")
    common(p)
    p.add_argument("--model", help="tagger checkpoint")
    p.add_argument("--data", help="CoNLL evaluation file")

    p = sub.add_parser("sweep", help="comparative sweep, writes sweep.csv")
    common(p)
    p.add_argument("--axis", help="lambda | k | candidate-source | train-size")
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--seeds", type=int, default=5, help="seeds per cell")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--train-size", type=int, default=100, dest="train_size")
    p.add_argument("--test-size", type=int, default=200, dest="test_size")

    return parser


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train-clf": cmd_train_clf,
    "train-lm": cmd_train_lm,
    "extract": cmd_extract,
    "serve-refine": cmd_serve_refine,
    "apply-judgments": cmd_apply_judgments,
    "train-tin": cmd_train_tin,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = RunConfig(getattr(args, "config", None), getattr(args, "set", []))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, C.CorpusError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
