from __future__ import annotations
import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from tabemb.adapters import load_tables
from tabemb.analysis import attention_heatmap, export_embeddings, run_ablation_sweep
from tabemb.cache import EmbeddingCache
from tabemb.colgraph import GraphPool, build_graph_pool, load_pool, pool_key, pool_path, save_pool
from tabemb.config import RunConfig, build_run_config, config_hash, load_config_file
from tabemb.embedding import EmbeddingBackend, make_backend
from tabemb.errors import ArgumentError, CheckpointError, PoolMismatchError, TabEmbError, UsageError
from tabemb.evaluation import freq_stratified_f1, per_class_report
from tabemb.pipeline import (TrainedModel, _setup_logger, evaluate, load_model, predict_tables, save_model,
                             train)
from tabemb.reporting import write_report
from tabemb.synth import generate_synthetic
from tabemb.tables import SPLITS, Dataset, Task, dataset_fingerprint, dataset_summary, load_dataset, write_dataset
from tabemb.validators import validate_report

logger = logging.getLogger("tabemb.cli")


# ---- Configuration -----------------------------------------------------------

def _run_config(args: argparse.Namespace) -> RunConfig:
    g = lambda name: getattr(args, name, None)
    flags = {
        "train": {"task": g("task"), "epochs": g("epochs"), "batch_size": g("batch_size"), "lr": g("lr"),
                  "weight_decay": g("weight_decay"), "m": g("m"), "layers": g("layers"), "heads": g("heads"),
                  "hidden": g("hidden"), "variant": g("variant"), "seed": g("seed"), "block_size": g("block_size")},
        "embed": {"kind": g("backend"), "dim": g("dim"), "base_url": g("base_url"), "model": g("embed_model")},
        "synth": {"ambiguity": g("ambiguity"), "seed": g("seed"), "n_train": g("n_train"), "n_valid": g("n_valid"),
                  "n_test": g("n_test")},
        "sweep": {"axes": g("axes"), "tasks": g("tasks")},
        "paths": {"dataset": g("dataset"), "cache_dir": g("cache_dir"), "pool_dir": g("pool_dir"),
                  "checkpoint": g("checkpoint"), "report_dir": g("report_dir")},
        "jobs": g("jobs"),
    }
    file_values = load_config_file(args.config) if g("config") else None
    return build_run_config(file_values, flags)


def _dataset(cfg: RunConfig) -> Tuple[Dataset, Path]:
    if cfg.paths.dataset is None:
        raise ArgumentError("--dataset is required")
    return load_dataset(cfg.paths.dataset), cfg.paths.dataset


def _backend(cfg: RunConfig, model: Optional[TrainedModel] = None, dim_given: bool = True) -> EmbeddingBackend:
    backend_cfg = cfg.backend
    if model is not None and backend_cfg.kind == "local" and not dim_given:
        found = re.fullmatch(r"local-char3-d(\d+)", model.backend_id)
        if found:
            backend_cfg = backend_cfg.model_copy(update={"dim": int(found.group(1))})
    return make_backend(backend_cfg)


# ---- Pools -------------------------------------------------------------------

def _pool_file(cfg: RunConfig, fingerprint: str, backend_id: str, split: str, m: int) -> Tuple[Path, str]:
    t = cfg.train
    key = pool_key(fingerprint, split, backend_id, m, t.seed, t.block_size)
    return pool_path(cfg.paths.pools(), split, key), key


def _build_pools(cfg: RunConfig, dataset: Dataset, root: Path, backend: EmbeddingBackend, cache: EmbeddingCache,
                 m: int, progress: bool = False) -> Dict[str, GraphPool]:
    """Load each non-empty split's pool if present, otherwise embed and save it."""
    fingerprint = dataset_fingerprint(root)
    pools = {}
    for split in SPLITS:
        items = dataset.split(split)
        if not items:
            continue
        path, key = _pool_file(cfg, fingerprint, backend.backend_id, split, m)
        if path.exists():
            pools[split] = load_pool(path, expected_key=key)
            logger.info(f"{split}: cache hit, 0 embeddings computed ({path})")
            continue
        before = backend.texts_embedded
        pool = build_graph_pool(items, backend, m, cfg.train.seed, cache, cfg.train.block_size,
                                dataset.label_spaces, meta={"key": key, "split": split},
                                jobs=cfg.jobs, progress=progress)
        save_pool(pool, path)
        pools[split] = pool
        logger.info(f"{split}: {len(pool)} tables, embedded {backend.texts_embedded - before} columns "
                    f"({cache.hits} cache hits so far), pool written to: {path}")
    return pools


def _load_pools(cfg: RunConfig, root: Path, backend_id: str, splits: List[str]) -> Dict[str, GraphPool]:
    fingerprint = dataset_fingerprint(root)
    pools = {}
    for split in splits:
        path, key = _pool_file(cfg, fingerprint, backend_id, split, cfg.train.m)
        if path.exists():
            pools[split] = load_pool(path, expected_key=key)
        elif any(p.name.startswith(f"{split}-") for p in cfg.paths.pools().glob("*.pool")):
            raise PoolMismatchError(f"No {split} pool matches config hash {key} in {cfg.paths.pools()}; "
                                    f"rerun 'embed' with the same settings")
    if "train" in splits and "train" not in pools:
        raise PoolMismatchError(f"Train pool not found in {cfg.paths.pools()}; run 'embed' first")
    return pools


# ---- Commands ----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    dataset = generate_synthetic(cfg.synth)
    write_dataset(dataset, out)
    logger.info(f"Synthetic dataset written to: {out}")
    return 0


def cmd_embed(args, cfg: RunConfig) -> int:
    dataset, root = _dataset(cfg)
    backend = _backend(cfg)
    cache = EmbeddingCache(cfg.paths.cache_dir)
    _build_pools(cfg, dataset, root, backend, cache, cfg.train.m, args.progress)
    logger.info(f"Embedding done: {backend.texts_embedded} embeddings computed, {backend.calls} backend calls, "
                f"{cache.hits} cache hits")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    dataset, root = _dataset(cfg)
    backend_id = _backend(cfg).backend_id
    pools = _load_pools(cfg, root, backend_id, ["train", "valid"])
    model = train(dataset, cfg.train, pools["train"], pools.get("valid"), progress=args.progress)
    checkpoint = cfg.paths.checkpoint or Path("checkpoints") / f"{cfg.train.task.value}-{model.config_hash}.ckpt"
    save_model(model, checkpoint)
    log = model.history.frame()
    meta = {"task": cfg.train.task.value, "variant": cfg.train.variant.value, "config_hash": model.config_hash,
            "selected_epoch": model.history.selected_epoch, "seconds": round(model.history.seconds, 3),
            "checkpoint": str(checkpoint)}
    if cfg.train.variant.value == "none":
        meta["mode"] = "ablation: no message passing"
    write_report(log, cfg.paths.report_dir, f"train-{cfg.train.task.value}", "Training log", meta, excel=False)
    return 0


def _read_pairs(path: Optional[str]) -> Optional[Dict[str, List[Tuple[int, int]]]]:
    if not path:
        return None
    pairs: Dict[str, List[Tuple[int, int]]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if raw.strip():
            try:
                rec = json.loads(raw)
                pairs[rec["table_id"]] = [(int(i), int(j)) for i, j in rec["pairs"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ArgumentError(f"{path}:{lineno}: bad pairs record ({e})") from None
    return pairs


def cmd_predict(args, cfg: RunConfig) -> int:
    if cfg.paths.checkpoint is None:
        raise ArgumentError("--checkpoint is required")
    model = load_model(cfg.paths.checkpoint)
    backend = _backend(cfg, model, dim_given=args.dim is not None)
    tables = load_tables(args.input)
    cache = EmbeddingCache(cfg.paths.cache_dir)
    preds, latency = predict_tables(tables, model, backend, cache, _read_pairs(args.pairs),
                                    args.allow_backend_mismatch, args.progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(json.dumps(p.record(), sort_keys=True) + "\n" for p in preds), encoding="utf-8")
    logger.info(f"Predictions written to: {out}")
    if args.logits:
        rows = [{"table_id": p.table_id, "logits": p.logits.tolist()} for p in preds]
        Path(args.logits).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        logger.info(f"Logits written to: {args.logits}")
    return 0


def _gold_and_predicted(dataset: Dataset, split: str, task: Task, predictions_path: Path) -> Tuple[List[str], List[str]]:
    predicted = {}
    for raw in predictions_path.read_text(encoding="utf-8").splitlines():
        if raw.strip():
            rec = json.loads(raw)
            predicted[rec["table_id"]] = rec
    preds, golds = [], []
    for item in dataset.split(split):
        rec = predicted.get(item.table_id)
        if rec is None:
            continue
        if task is Task.CTA and item.cta is not None:
            for gold, pred in zip(item.cta, rec.get("cta", [])):
                if gold is not None:
                    golds.append(gold)
                    preds.append(pred)
        elif task is Task.CPA and item.cpa is not None:
            by_pair = {(i, j): l for i, j, l in rec.get("cpa", [])}
            for i, j, gold in item.cpa:
                golds.append(gold)
                preds.append(by_pair.get((i, j), ""))
        elif task is Task.TTA and item.tta is not None:
            golds.append(item.tta)
            preds.append(rec.get("tta", ""))
    return preds, golds


def cmd_eval(args, cfg: RunConfig) -> int:
    dataset, root = _dataset(cfg)
    task = cfg.train.task
    meta: Dict[str, Any] = {"task": task.value, "split": args.split}
    if args.predictions:
        preds, golds = _gold_and_predicted(dataset, args.split, task, Path(args.predictions))
        meta["predictions"] = args.predictions
    else:
        if cfg.paths.checkpoint is None:
            raise ArgumentError("eval needs --checkpoint or --predictions")
        model = load_model(cfg.paths.checkpoint)
        task = model.task
        if dataset.label_space(task).fingerprint != model.label_fingerprint:
            raise CheckpointError(f"{cfg.paths.checkpoint}: label space does not match the dataset's {task.value} labels")
        run_cfg = cfg.model_copy(update={"train": model.config})
        pools = _load_pools(run_cfg, root, model.backend_id, [args.split])
        if args.split not in pools:
            raise PoolMismatchError(f"No {args.split} pool for this checkpoint; run 'embed' first")
        result = evaluate(model, pools[args.split])
        preds, golds = result.predictions, result.golds
        meta.update({"checkpoint": str(cfg.paths.checkpoint), "config_hash": model.config_hash})

    space = dataset.label_space(task)
    report = per_class_report(preds, golds, space.labels)
    frame = report.frame()
    try:
        validate_report(frame, "per_class")
    except Exception:
        logger.warning("Validation failed; continuing with report.")
    meta["micro_f1"] = round(report.micro_f1, 6)
    meta["targets"] = report.n_targets
    extra = {}
    if len(space) >= 3:
        frequencies = {l: 0 for l in space.labels}
        for item in dataset.train:
            for l in item.labels_for(task):
                frequencies[l] += 1
        extra["Strata"] = freq_stratified_f1(preds, golds, frequencies).frame()
    write_report(frame, cfg.paths.report_dir, f"eval-{task.value}-{args.split}", "Per-class F1", meta,
                 extra_sheets=extra)
    if "Strata" in extra:
        write_report(extra["Strata"], cfg.paths.report_dir, f"strata-{task.value}-{args.split}",
                     "Frequency strata", meta, excel=False)
    print(f"micro-F1 ({task.value}, {args.split}): {report.micro_f1:.4f}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    dataset, root = _dataset(cfg)
    backend = _backend(cfg)
    cache = EmbeddingCache(cfg.paths.cache_dir)
    built: Dict[int, Dict[str, GraphPool]] = {}
    scored_on: Dict[int, str] = {}

    def pools(m: int):
        if m not in built:
            built[m] = _build_pools(cfg, dataset, root, backend, cache, m, args.progress)
        p = built[m]
        split = next(s for s in ("test", "valid", "train") if s in p)
        if split != "test" and m not in scored_on:
            logger.warning(f"No test split; sweep cells with m={m} are scored on the {split} pool")
        scored_on[m] = split
        return p["train"], p.get("valid"), p[split]

    grid = run_ablation_sweep(dataset, cfg.train, cfg.sweep, pools, jobs=cfg.jobs, progress=args.progress)
    meta = {"axes": ",".join(cfg.sweep.axes), "seed": cfg.train.seed, "backend": backend.backend_id,
            "config_hash": config_hash(cfg.train, cfg.sweep, backend.backend_id),
            "scored_on": ",".join(sorted(set(scored_on.values())))}
    write_report(grid, cfg.paths.report_dir, "sweep", "Ablation sweep", meta)
    return 0


def _model_and_pool(cfg: RunConfig, split: str) -> Tuple[TrainedModel, GraphPool, Dataset]:
    dataset, root = _dataset(cfg)
    if cfg.paths.checkpoint is None:
        raise ArgumentError("--checkpoint is required")
    model = load_model(cfg.paths.checkpoint)
    run_cfg = cfg.model_copy(update={"train": model.config})
    pools = _load_pools(run_cfg, root, model.backend_id, [split])
    if split not in pools:
        raise PoolMismatchError(f"No {split} pool for this checkpoint; run 'embed' first")
    return model, pools[split], dataset


def cmd_heatmap(args, cfg: RunConfig) -> int:
    model, pool, _ = _model_and_pool(cfg, args.split)
    heat = attention_heatmap(model, pool)
    meta = {"aggregation": "first layer, mean over heads, normalized by source-class column count; "
                           "empty cells are absent", "split": args.split, "checkpoint": str(cfg.paths.checkpoint)}
    write_report(heat.frame(), cfg.paths.report_dir, f"heatmap-{args.split}", "Attention heatmap", meta, index=True)
    return 0


def cmd_export(args, cfg: RunConfig) -> int:
    model, pool, dataset = _model_and_pool(cfg, args.split)
    frame = export_embeddings(model, pool, dataset.label_spaces.get(Task.CTA))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, sep="\t", index=False)
    logger.info(f"Exported {len(frame)} embeddings to: {out}")
    return 0


def cmd_summary(args, cfg: RunConfig) -> int:
    dataset, root = _dataset(cfg)
    frame = dataset_summary(dataset)
    write_report(frame, cfg.paths.report_dir, "summary", "Dataset statistics", {"dataset": str(root)})
    print(frame.to_string(index=False))
    return 0


# ---- Argument parsing --------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with embed/train/synth/sweep/paths sections")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--jobs", type=int, help="Parallel workers (embedding, sweep cells)")
    common.add_argument("--progress", action="store_true", help="Show progress bars")
    common.add_argument("--seed", type=int)
    common.add_argument("--report-dir", dest="report_dir")
    common.add_argument("--cache-dir", dest="cache_dir")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="Dataset directory (labels_*.txt + train/valid/test.jsonl)")
    data.add_argument("--pool-dir", dest="pool_dir")

    embed = argparse.ArgumentParser(add_help=False)
    embed.add_argument("--backend", choices=["local", "remote"])
    embed.add_argument("--dim", type=int)
    embed.add_argument("--base-url", dest="base_url")
    embed.add_argument("--embed-model", dest="embed_model")
    embed.add_argument("--m", type=int, help="Cells sampled per column")
    embed.add_argument("--block-size", dest="block_size", type=int)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--task", choices=[t.value for t in Task])
    model.add_argument("--epochs", type=int)
    model.add_argument("--batch-size", dest="batch_size", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--weight-decay", dest="weight_decay", type=float)
    model.add_argument("--layers", type=int)
    model.add_argument("--heads", type=int)
    model.add_argument("--hidden", type=int)
    model.add_argument("--variant", choices=["none", "gat", "gcn", "ggnn"])
    model.add_argument("--checkpoint")

    ap = argparse.ArgumentParser(description="tabemb: structure-aware column embeddings for table annotation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--ambiguity", type=float)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-valid", dest="n_valid", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", parents=[common, data, embed], help="Precompute graph pools")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common, data, embed, model], help="Train GNN + task head")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common, embed, model], help="Annotate new tables")
    p.add_argument("--input", required=True, help="jsonl:FILE, csv:DIR or a path")
    p.add_argument("--out", required=True, help="Predictions JSONL")
    p.add_argument("--pairs", help="JSONL of {table_id, pairs} for CPA")
    p.add_argument("--logits", help="Optional JSONL dump of logits")
    p.add_argument("--allow-backend-mismatch", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common, data, embed, model], help="Per-class and micro-F1 report")
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--predictions", help="Score a predictions JSONL instead of a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, data, embed, model], help="Ablation / sensitivity sweep")
    p.add_argument("--axes", nargs="+", choices=["variant", "depth", "m"])
    p.add_argument("--tasks", nargs="+", choices=[t.value for t in Task])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", parents=[common, data, embed, model], help="Class-class attention heatmap")
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("export", parents=[common, data, embed, model], help="Export psi0 / psi vectors as TSV")
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("summary", parents=[common, data], help="Dataset statistics")
    p.set_defaults(func=cmd_summary)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    _setup_logger(args.verbose)
    try:
        cfg = _run_config(args)
        return args.func(args, cfg)
    except UsageError as e:
        logger.error(str(e))
        return e.exit_code
    except TabEmbError as e:
        logger.error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
