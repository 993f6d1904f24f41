"""``newsfusion`` command line.

Every subcommand resolves a :class:`~newsfusion.config.RunConfig`, writes
its artifacts plus ``config.json`` into a directory under the output root,
and exits 0 on success, 1 on a validation failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from typing import Optional, Sequence

import numpy as np

from . import config as C
from .dataset import (
    ConfigurationError,
    FoldPlan,
    SchemaError,
    drop_invalid,
    load_corpus,
    make_folds,
    synthesize_corpus,
    write_corpus,
)
from .evaluation import (
    REFERENCE_AUC,
    REFERENCE_META_ZOO,
    ScoredPredictions,
    UndefinedMetricError,
    evaluate_files,
    format_table,
    read_scores_csv,
    report,
    report_to_json,
    roc_auc,
    write_scores_csv,
)
from .features import PillowResolver, dimensions_from_name, prepare_split, save_meta_matrix
from .fusion import AssemblyError, StrategyPlan, assemble, inspect_checkpoint, save_checkpoint
from .pipeline import FusionPipeline, TabularPipeline, TextPipeline, fit_fusion, fit_text_submodel
from .tabular import LEARNER_KINDS, BaseLearnerSpec, EnsembleConfig, TabularFitError
from .textenc import predict_proba
from .training import TrainingDivergedError, cross_validate

log = logging.getLogger("newsfusion")

VALIDATION_ERRORS = (
    C.ConfigError,
    SchemaError,
    ConfigurationError,
    AssemblyError,
    TabularFitError,
    UndefinedMetricError,
    TrainingDivergedError,
    FileNotFoundError,
    IndexError,
    ValueError,
)


# ---------------------------------------------------------------------------
# shared plumbing


def _out(cfg: C.RunConfig, *parts: str) -> str:
    path = os.path.join(cfg.out_root, *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _corpus_path(cfg: C.RunConfig) -> str:
    if cfg.paths.corpus:
        return cfg.paths.corpus
    for candidate in (("preprocess", "clean.csv"), ("synth", "corpus.csv")):
        path = os.path.join(cfg.out_root, *candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no corpus: set paths.corpus or run `synth`/`preprocess` into {cfg.out_root!r}")


def _resolver(cfg: C.RunConfig):
    return PillowResolver(cfg.paths.images) if cfg.paths.images else dimensions_from_name


def _load_clean(cfg: C.RunConfig) -> list:
    records, dropped = drop_invalid(load_corpus(_corpus_path(cfg)))
    if dropped:
        log.info("dropped %d invalid rows", len(dropped))
    if any(r.label is None for r in records):
        raise ValueError("training corpus contains unlabeled rows")
    return records


def _fold_plan(cfg: C.RunConfig, records: list) -> FoldPlan:
    saved = os.path.join(cfg.out_root, "preprocess", "folds.json")
    if os.path.exists(saved) and not cfg.paths.corpus:
        with open(saved, encoding="utf-8") as fh:
            plan = FoldPlan.from_json(json.load(fh))
        if len(plan.assignments) == len(records):
            return plan
    return make_folds(records, cfg.split.folds, cfg.seed, cfg.split.stratified)


def _holdout(cfg: C.RunConfig):
    """Train/held-out split used by the single-run training commands."""
    records = _load_clean(cfg)
    plan = _fold_plan(cfg, records)
    f = cfg.split.holdout_fold
    if not 0 <= f < plan.k:
        raise ValueError(f"holdout_fold {f} outside [0, {plan.k})")
    train = [records[i] for i in plan.train_indices(f)]
    test = [records[i] for i in plan.test_indices(f)]
    fold = prepare_split(train, test, _resolver(cfg))
    labels = os.path.join(cfg.out_root, "labels.csv")
    write_scores_csv(labels, [r.id for r in fold.test], fold.y_test.tolist(), column="label")
    return fold


def _finish(cfg, directory, fold, scores, command, metrics=None) -> dict:
    ids = [r.id for r in fold.test]
    write_scores_csv(os.path.join(directory, "predictions.csv"), ids, np.asarray(scores).tolist())
    metrics = dict(metrics or {})
    try:
        metrics["holdout_auc"] = roc_auc(scores, fold.y_test)
    except UndefinedMetricError:
        metrics["holdout_auc"] = None
    with open(os.path.join(directory, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    C.write_config(cfg, directory, {"command": command, "metrics": metrics})
    print(f"{command}: holdout AUC = {metrics['holdout_auc']}  ->  {directory}")
    return metrics


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: C.RunConfig, args) -> int:
    d = _out(cfg, "synth")
    recs = synthesize_corpus(cfg.synth.n, seed=cfg.seed, signal_spec=cfg.synth.signal)
    path = os.path.join(d, "corpus.csv")
    write_corpus(recs, path)
    C.write_config(cfg, d, {"command": "synth", "rows": len(recs)})
    print(f"synth: {len(recs)} rows -> {path}")
    return 0


def cmd_preprocess(cfg: C.RunConfig, args) -> int:
    d = _out(cfg, "preprocess")
    source = cfg.paths.corpus or os.path.join(cfg.out_root, "synth", "corpus.csv")
    records, dropped = drop_invalid(load_corpus(source))
    write_corpus(records, os.path.join(d, "clean.csv"))
    with open(os.path.join(d, "drop_report.json"), "w", encoding="utf-8") as fh:
        json.dump(dropped, fh, indent=2, ensure_ascii=False)
    plan = make_folds(records, cfg.split.folds, cfg.seed, cfg.split.stratified)
    with open(os.path.join(d, "folds.json"), "w", encoding="utf-8") as fh:
        json.dump(plan.to_json(), fh)
    f = cfg.split.holdout_fold
    fold = prepare_split(
        [records[i] for i in plan.train_indices(f)], [records[i] for i in plan.test_indices(f)], _resolver(cfg)
    )
    save_meta_matrix(fold.meta_train, os.path.join(d, "meta_train.npz"))
    save_meta_matrix(fold.meta_test, os.path.join(d, "meta_test.npz"))
    with open(os.path.join(d, "user_scores.json"), "w", encoding="utf-8") as fh:
        json.dump(fold.user_scores.to_json(), fh, indent=2, ensure_ascii=False)
    with open(os.path.join(d, "texts.json"), "w", encoding="utf-8") as fh:
        json.dump({"train": fold.texts_train, "test": fold.texts_test}, fh, ensure_ascii=False)
    if fold.y_test is not None:
        write_scores_csv(os.path.join(cfg.out_root, "labels.csv"), [r.id for r in fold.test], fold.y_test.tolist(), "label")
    C.write_config(cfg, d, {"command": "preprocess", "source": source, "kept": len(records), "dropped": len(dropped)})
    print(f"preprocess: kept {len(records)}, dropped {len(dropped)} -> {d}")
    return 0


def _tabular_run(cfg: C.RunConfig, model: str, directory: str, command: str) -> int:
    fold = _holdout(cfg)
    fitted = TabularPipeline(model, cfg.seed, cfg.tabular.hyperparameters).fit(fold.meta_train.values, fold.y_train)
    scores = fitted.predict_proba(fold.meta_test.values)
    fitted.metrics = {"holdout_auc": roc_auc(scores, fold.y_test)}
    fitted.save(directory)
    est = getattr(fitted, "estimator", None)
    if est is not None and hasattr(est, "model_"):
        # the differentiable MLP doubles as a meta checkpoint for fusion
        save_checkpoint(os.path.join(directory, "checkpoint"), est.model_, {"role": "meta", "seed": cfg.seed})
    _finish(cfg, directory, fold, scores, command)
    return 0


def _ensemble_config(cfg: C.RunConfig, mode: str) -> EnsembleConfig:
    base = [BaseLearnerSpec(k, seed=cfg.seed) for k in cfg.ensemble.base]
    return EnsembleConfig(
        mode=mode,
        base=base,
        stacking_folds=cfg.ensemble.stacking_folds,
        blending_holdout_fraction=cfg.ensemble.blending_holdout_fraction,
        seed=cfg.seed,
    )


def cmd_train_tabular(cfg: C.RunConfig, args) -> int:
    model = cfg.tabular.model
    if model in ("stack", "blend"):
        cfg = C.merge(cfg, {"ensemble": {"mode": "stacking" if model == "stack" else "blending"}})
        return cmd_ensemble(cfg, args)
    if model not in LEARNER_KINDS:
        raise ValueError(f"unknown model {model!r}; choose from {LEARNER_KINDS + ('stack', 'blend')}")
    return _tabular_run(cfg, model, _out(cfg, "tabular", model), "train-tabular")


def cmd_ensemble(cfg: C.RunConfig, args) -> int:
    from .tabular import train_blending, train_stacking

    mode = cfg.ensemble.mode
    d = _out(cfg, "ensemble", mode)
    fold = _holdout(cfg)
    ecfg = _ensemble_config(cfg, mode)
    trainer = train_stacking if mode == "stacking" else train_blending
    fitted = trainer(ecfg, fold.meta_train.values, fold.y_train)
    scores = fitted.predict_proba(fold.meta_test.values)
    fitted.metrics = {"holdout_auc": roc_auc(scores, fold.y_test)}
    fitted.save(d)
    _finish(cfg, d, fold, scores, "ensemble", {"mode": mode, "base": cfg.ensemble.base})
    return 0


def _block_tag(spec: str) -> str:
    return "blocks_" + spec.replace(",", "_").replace(" ", "")


def cmd_train_text(cfg: C.RunConfig, args) -> int:
    settings = cfg.strategy_settings()
    d = _out(cfg, "text", _block_tag(cfg.text.blocks))
    bb = cfg.text.backbone
    head_dim = len(settings.blocks) * bb.hidden
    manifest = {"role": "text", "blocks": list(settings.blocks), "head_input_dim": head_dim, "backbone": asdict(bb)}
    if args.dry_run:
        if max(settings.blocks) > bb.n_blocks:
            raise IndexError(f"blocks {settings.blocks} exceed the backbone's {bb.n_blocks} blocks")
        with open(os.path.join(d, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        C.write_config(cfg, d, {"command": "train-text", "dry_run": True, **manifest})
        print(f"train-text (dry run): head input dim {head_dim} -> {d}")
        return 0
    fold = _holdout(cfg)
    model, hist = fit_text_submodel(fold, settings)
    manifest["head_input_dim"] = model.head_input_dim
    hist.to_jsonl(os.path.join(d, "history.jsonl"))
    save_checkpoint(d, model, manifest)
    scores = predict_proba(model, model.make_inputs(fold.texts_test))
    _finish(cfg, d, fold, scores, "train-text", {"best_epoch": hist.best_epoch, "head_input_dim": model.head_input_dim})
    return 0


def cmd_train_fusion(cfg: C.RunConfig, args) -> int:
    settings = cfg.strategy_settings()
    sid = cfg.fusion.strategy.upper()
    plan = StrategyPlan.for_strategy(
        sid, seed=cfg.seed, text_checkpoint=cfg.paths.text_checkpoint, meta_checkpoint=cfg.paths.meta_checkpoint
    )
    # fail on missing checkpoints before any data work
    assemble(plan, settings.fusion, settings.backbone, settings.blocks)
    d = _out(cfg, "fusion", f"{sid}_{cfg.fusion.model.combine}")
    fold = _holdout(cfg)
    model, hist = fit_fusion(fold, plan, settings)
    hist.to_jsonl(os.path.join(d, "history.jsonl"))
    save_checkpoint(d, model, {"role": "fusion", "strategy": sid, "plan": asdict(plan), "combine": cfg.fusion.model.combine})
    scores = predict_proba(model, model.make_inputs(fold.texts_test, fold.meta_test.values))
    _finish(cfg, d, fold, scores, "train-fusion", {"strategy": sid, "best_epoch": hist.best_epoch})
    return 0


def cmd_cv(cfg: C.RunConfig, args) -> int:
    model = cfg.cv.model
    d = _out(cfg, "cv", model)
    settings = cfg.strategy_settings()
    if model == "text":
        pipeline = TextPipeline(settings)
    elif model.upper() in ("S1", "S2", "S3", "S4"):
        pipeline = FusionPipeline(model.upper(), settings)
    elif model in LEARNER_KINDS or model in ("stack", "blend"):
        pipeline = TabularPipeline(model, cfg.seed, cfg.tabular.hyperparameters)
    else:
        raise ValueError(f"unknown cv model {model!r}")
    records = _load_clean(cfg)
    res = cross_validate(pipeline, records, k=cfg.cv.folds, seed=cfg.seed, stratified=cfg.split.stratified, resolver=_resolver(cfg))
    out = res.to_json()
    with open(os.path.join(d, "cv.json"), "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
    C.write_config(cfg, d, {"command": "cv", **out})
    print(f"cv {model}: mean AUC {res.mean:.4f} (std {res.std:.4f}) over {cfg.cv.folds} folds -> {d}")
    return 0


def _reference_for(name: str) -> Optional[float]:
    key = os.path.basename(name)
    for suffix in ("_concat", "_add"):
        if key.endswith(suffix):
            key = key[: -len(suffix)]
    return REFERENCE_AUC.get(key, REFERENCE_META_ZOO.get(key))


def cmd_evaluate(cfg: C.RunConfig, args) -> int:
    d = _out(cfg, "evaluation")
    if args.predictions:
        labels = args.labels or os.path.join(cfg.out_root, "labels.csv")
        row = evaluate_files(args.predictions, labels)
        rows = [replace(row, name=args.predictions)]
    else:
        labels_path = args.labels or os.path.join(cfg.out_root, "labels.csv")
        if not os.path.exists(labels_path):
            raise FileNotFoundError(f"labels file {labels_path!r} not found; train a model or pass --labels")
        labels = read_scores_csv(labels_path, "label")
        results, configs, refs = {}, {}, {}
        for root, _, files in sorted(os.walk(cfg.out_root)):
            if "predictions.csv" not in files:
                continue
            name = os.path.relpath(root, cfg.out_root)
            scores = read_scores_csv(os.path.join(root, "predictions.csv"), "score")
            if set(scores) != set(labels):
                log.warning("skipping %s: ids differ from the labels file", name)
                continue
            ids = sorted(labels)
            results[name] = ScoredPredictions([scores[i] for i in ids], [int(labels[i]) for i in ids])
            cfg_path = os.path.join(root, "config.json")
            if os.path.exists(cfg_path):
                with open(cfg_path, encoding="utf-8") as fh:
                    configs[name] = json.load(fh)
            refs[name] = _reference_for(name)
        if not results:
            raise FileNotFoundError(f"no predictions.csv under {cfg.out_root!r} matching {labels_path!r}")
        rows = report(results, configs, {k: v for k, v in refs.items() if v is not None})
    with open(os.path.join(d, "auc.json"), "w", encoding="utf-8") as fh:
        json.dump(report_to_json(rows), fh, indent=2)
    table = format_table(rows)
    with open(os.path.join(d, "auc.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    C.write_config(cfg, d, {"command": "evaluate"})
    print(table)
    return 0


def cmd_tabular_report(cfg: C.RunConfig, args) -> int:
    d = _out(cfg, "tabular-report")
    fold = _holdout(cfg)
    kinds = args.models.split(",") if args.models else list(LEARNER_KINDS)
    results, configs = {}, {}
    for kind in kinds:
        spec = BaseLearnerSpec(kind, seed=cfg.seed)
        fitted = TabularPipeline(kind, cfg.seed).fit(fold.meta_train.values, fold.y_train)
        results[kind] = ScoredPredictions(fitted.predict_proba(fold.meta_test.values), fold.y_test)
        configs[kind] = spec.resolved()
    rows = report(results, configs, REFERENCE_META_ZOO)
    with open(os.path.join(d, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report_to_json(rows), fh, indent=2)
    table = format_table(rows)
    with open(os.path.join(d, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    C.write_config(cfg, d, {"command": "tabular-report", "models": kinds})
    print(table)
    return 0


def cmd_fusion_inspect(cfg: C.RunConfig, args) -> int:
    ledger = inspect_checkpoint(args.checkpoint)
    if not ledger:
        raise ValueError(f"checkpoint {args.checkpoint!r} carries no provenance ledger")
    if args.json:
        print(json.dumps(ledger, indent=2, sort_keys=True))
        return 0
    width = max(len(n) for n in ledger)
    for name in sorted(ledger):
        print(f"{name:<{width}}  {ledger[name]}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON or YAML run config")
    p.add_argument("--preset", default="desk", choices=sorted(C.PRESETS))
    p.add_argument("--out", help=f"output root (default ${C.OUT_ENV} or ./runs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", help="input corpus CSV/TSV")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. text.optimizer.epochs=3")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="newsfusion", description="Reliability classification of social-network posts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="clean, split and featurize a corpus")
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-tabular", parents=[common], help="fit a metadata-only model")
    p.add_argument("--model", help="learner kind, 'stack' or 'blend'")
    p.set_defaults(func=cmd_train_tabular)

    p = sub.add_parser("ensemble", parents=[common], help="stacking or blending over tabular learners")
    p.add_argument("--mode", choices=["stacking", "blending"])
    p.add_argument("--base", help="comma-separated learner kinds")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("train-text", parents=[common], help="fine-tune the text classifier")
    p.add_argument("--blocks", help='block selection such as "1-12" or "9,10,11,12"')
    p.add_argument("--backbone", choices=["toy", "pretrained"])
    p.add_argument("--backbone-path", help="local pretrained encoder directory")
    p.add_argument("--dry-run", action="store_true", help="resolve shapes and config without training")
    p.set_defaults(func=cmd_train_text)

    p = sub.add_parser("train-fusion", parents=[common], help="train a fused model under one strategy")
    p.add_argument("--strategy", type=str.upper, choices=["S1", "S2", "S3", "S4"])
    p.add_argument("--combine", choices=["concat", "add"])
    p.add_argument("--blocks")
    p.add_argument("--text-checkpoint")
    p.add_argument("--meta-checkpoint")
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validated AUC")
    p.add_argument("--folds", type=int)
    p.add_argument("--model", help="tabular kind, stack, blend, text, or S1-S4")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("evaluate", parents=[common], help="ROC-AUC table for saved predictions")
    p.add_argument("--predictions", help="predictions CSV (id, score); default: every run under the output root")
    p.add_argument("--labels", help="labels CSV (id, label)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tabular-report", parents=[common], help="compare every metadata learner on the holdout")
    p.add_argument("--models", help="comma-separated subset of learner kinds")
    p.set_defaults(func=cmd_tabular_report)

    p = sub.add_parser("fusion-inspect", parents=[common], help="print a checkpoint's provenance ledger")
    p.add_argument("checkpoint")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fusion_inspect)
    return parser


def _flag_overrides(args) -> list:
    """Translate subcommand flags into config updates (applied after the file)."""
    ups = []
    flat = {
        "seed": ("seed",),
        "out": ("paths", "out"),
        "corpus": ("paths", "corpus"),
        "n": ("synth", "n"),
        "model": ("cv", "model") if args.command == "cv" else ("tabular", "model"),
        "mode": ("ensemble", "mode"),
        "blocks": ("text", "blocks"),
        "strategy": ("fusion", "strategy"),
        "combine": ("fusion", "model", "combine"),
        "text_checkpoint": ("paths", "text_checkpoint"),
        "meta_checkpoint": ("paths", "meta_checkpoint"),
    }
    for attr, path in flat.items():
        value = getattr(args, attr, None)
        if value is not None:
            ups.append(C.dotted(".".join(path), value))
    folds = getattr(args, "folds", None)
    if folds is not None:
        ups.append(C.dotted("cv.folds" if args.command == "cv" else "split.folds", folds))
    if getattr(args, "base", None):
        ups.append(C.dotted("ensemble.base", [b.strip() for b in args.base.split(",") if b.strip()]))
    return ups


def _apply_backbone_flags(cfg: C.RunConfig, args) -> C.RunConfig:
    kind = getattr(args, "backbone", None)
    path = getattr(args, "backbone_path", None)
    if kind == "pretrained" and cfg.text.backbone.kind != "pretrained":
        cfg.text.backbone = C.BackboneConfig.pretrained(path)
    elif kind == "toy" and cfg.text.backbone.kind != "toy":
        cfg.text.backbone = C.desk_backbone()
    if path:
        cfg.text.backbone = replace(cfg.text.backbone, checkpoint_path=path)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = [C.parse_assignment(s) for s in args.overrides]
        cfg = C.resolve(args.preset, args.config, tuple(_flag_overrides(args) + overrides))
        cfg = _apply_backbone_flags(cfg, args)
        return args.func(cfg, args)
    except VALIDATION_ERRORS as exc:
        print(f"newsfusion {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
