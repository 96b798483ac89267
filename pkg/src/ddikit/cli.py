"""Command-line pipeline driver.

Subcommands: make-fixture, vocab, kg-train, kg-export, split, pretrain,
train, eval, sts, seqlen. Every run writes a manifest (config fingerprint,
seed, input checksums, outputs, wall time) into --out-dir, and all
randomness derives from --seed, so a run is reproducible from its manifest
at a fixed thread count.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import (CheckpointError, config_fingerprint, load_checkpoint,
                         read_checkpoint, save_checkpoint)
from .data import (DataError, SplitBundle, load_dataset, make_inductive_splits,
                   seqlen_bins, sts_series, verify_split)
from .fixtures import make_dataset_fixture
from .kg import (PairEmbedder, TransEConfig, TripleError, load_table,
                 load_triples, save_table, train_transe)
from .metrics import curves_to_csv, evaluate, roc_auc, aupr
from .model import DdiModel, ModelConfig, PretrainModel, transfer_encoder_weights
from .smiles import SmilesError, Vocabulary
from .training import (FinetuneConfig, PretrainConfig, finetune, mlm_pretrain,
                       predict_scores)


class ConfigError(ValueError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            cfg[key] = json.loads(raw)
        except ValueError:
            cfg[key] = raw
    return cfg


def _take_fields(cfg: dict, dc_type, **fixed):
    """Pull the keys of ``dc_type`` out of cfg and build the dataclass."""
    names = {f.name for f in dataclasses.fields(dc_type)}
    kwargs = {k: cfg[k] for k in list(cfg) if k in names and k not in fixed}
    kwargs.update(fixed)
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _reject_unknown(cfg: dict, *dc_types, extra: set[str] = frozenset()):
    allowed = set(extra)
    for dc in dc_types:
        allowed |= {f.name for f in dataclasses.fields(dc)}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")


def _write_manifest(out_dir, subcommand, config, seed, inputs, outputs, t0):
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": seed,
        "effective_config": config,
        "config_fingerprint": config_fingerprint(config),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [os.path.basename(str(p)) for p in outputs],
        "wall_clock_seconds": round(time.time() - t0, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _read_corpus(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        corpus = [ln.strip() for ln in fh if ln.strip()]
    if not corpus:
        raise DataError(f"{path}: empty corpus")
    return corpus


def _pair_vectors(events, table, id_template) -> tuple[np.ndarray, PairEmbedder]:
    embedder = PairEmbedder(table, id_template=id_template)
    vecs = np.stack([embedder.pair_embedding(ev.drug_a, ev.drug_b) for ev in events])
    return vecs, embedder


def _build_model(cfg: dict, vocab_size: int, n_classes: int, kg_dim: int,
                 seed: int) -> tuple[ModelConfig, DdiModel]:
    mcfg = _take_fields(cfg, ModelConfig, vocab_size=vocab_size,
                        n_classes=n_classes, kg_dim=kg_dim)
    return mcfg, DdiModel(mcfg, seed=seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_make_fixture(args, cfg):
    _reject_unknown(cfg, extra={"n_drugs", "n_events", "n_classes"})
    paths = make_dataset_fixture(args.out_dir,
                                 n_drugs=cfg.get("n_drugs", 40),
                                 n_events=cfg.get("n_events", 300),
                                 n_classes=cfg.get("n_classes", 8),
                                 seed=args.seed)
    return [], list(paths.values())


def cmd_vocab(args, cfg):
    _reject_unknown(cfg, extra={"min_count"})
    corpus = _read_corpus(args.corpus)
    vocab = Vocabulary.build(corpus, min_count=cfg.get("min_count", 1))
    out = _out(args, "vocab.txt")
    vocab.save(out)
    return [args.corpus], [out]


def cmd_kg_train(args, cfg):
    _reject_unknown(cfg, TransEConfig)
    tcfg = _take_fields(cfg, TransEConfig, seed=args.seed)
    triples, index = load_triples(args.triples)
    table, history = train_transe(triples, index, tcfg)
    bin_path = _out(args, "kg_table.bin")
    idx_path = _out(args, "kg_table.index")
    save_table(table, bin_path, idx_path)
    loss_path = _out(args, "kg_loss.csv")
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{v:.10g}\n")
    return [args.triples], [bin_path, idx_path, loss_path]


def cmd_kg_export(args, cfg):
    _reject_unknown(cfg, extra={"id_template"})
    table = load_table(args.table, args.index)
    embedder = PairEmbedder(table, id_template=cfg.get("id_template", "Compound::{id}"))
    out = _out(args, "drug_vectors.tsv")
    with open(args.drugs, encoding="utf-8") as fh:
        ids = [ln.split("\t")[0] for ln in fh if ln.strip()]
    with open(out, "w", encoding="utf-8") as fh:
        for d in ids:
            vec = embedder.entity_vector(d)
            fh.write(d + "\t" + " ".join(f"{x:.8g}" for x in vec) + "\n")
    print(f"exported {len(ids)} drugs, miss rate {embedder.miss_rate:.3f}")
    return [args.table, args.index, args.drugs], [out]


def cmd_split(args, cfg):
    _reject_unknown(cfg, extra={"test_drug_fraction", "n_folds"})
    drugs, events, _ = load_dataset(args.drugs, args.events, args.labels)
    rng = np.random.default_rng(args.seed)
    bundle = make_inductive_splits(events, drugs,
                                   cfg.get("test_drug_fraction", 0.15), rng,
                                   n_folds=cfg.get("n_folds", 5))
    verify_split(bundle, events)
    out = _out(args, "splits.json")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(bundle.to_json())
        fh.write("\n")
    return [args.drugs, args.events, args.labels], [out]


def cmd_pretrain(args, cfg):
    _reject_unknown(cfg, ModelConfig, PretrainConfig)
    corpus = _read_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    pcfg = _take_fields(cfg, PretrainConfig, seed=args.seed)
    mcfg = _take_fields(cfg, ModelConfig, vocab_size=len(vocab),
                        n_classes=2, max_len=pcfg.max_len)
    model = PretrainModel(mcfg, seed=args.seed)
    history = mlm_pretrain(model, corpus, vocab, pcfg,
                           progress=lambda e, l: print(f"epoch {e}: mlm loss {l:.4f}"))
    ckpt = _out(args, "pretrained.ckpt")
    save_checkpoint(ckpt, model, epoch=pcfg.epochs)
    loss_path = _out(args, "pretrain_loss.csv")
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{v:.10g}\n")
    return [args.corpus, args.vocab], [ckpt, loss_path]


def _load_training_world(args):
    drugs, events, label_map = load_dataset(args.drugs, args.events, args.labels)
    with open(args.splits, encoding="utf-8") as fh:
        bundle = SplitBundle.from_json(fh.read())
    vocab = Vocabulary.load(args.vocab)
    table = load_table(args.kg_table, args.kg_index)
    return drugs, events, label_map, bundle, vocab, table


def _transfer_from(path, model: DdiModel, seed: int):
    meta, _ = read_checkpoint(path)
    pcfg = ModelConfig(**meta["config"])
    src = PretrainModel(pcfg, seed=seed)
    load_checkpoint(path, src)
    transfer_encoder_weights(src, model)


def cmd_train(args, cfg):
    _reject_unknown(cfg, ModelConfig, FinetuneConfig,
                    extra={"eval_fold", "id_template"})
    drugs, events, label_map, bundle, vocab, table = _load_training_world(args)
    pair_vecs, embedder = _pair_vectors(events, table, cfg.get("id_template", "Compound::{id}"))
    fcfg = _take_fields(cfg, FinetuneConfig, seed=args.seed)
    mcfg, model = _build_model(cfg, len(vocab), len(label_map), 2 * table.dim, args.seed)
    if fcfg.max_len != mcfg.max_len:
        fcfg.max_len = mcfg.max_len
    if args.pretrained:
        _transfer_from(args.pretrained, model, args.seed)
    eval_fold = cfg.get("eval_fold", 0)
    eval_idx = bundle.folds[eval_fold]
    train_idx = [i for f, fold in enumerate(bundle.folds) if f != eval_fold for i in fold]
    ckpt = _out(args, "model.ckpt")
    history, best = finetune(model, train_idx, eval_idx, events, drugs, vocab,
                             pair_vecs, fcfg, checkpoint_path=ckpt,
                             progress=lambda r: print(
                                 f"epoch {r.epoch}: loss {r.train_loss:.4f} "
                                 f"train_acc {r.train_accuracy:.3f} eval_acc {r.eval_accuracy:.3f}"))
    hist_path = _out(args, "history.csv")
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,train_accuracy,eval_accuracy\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss:.10g},{r.train_accuracy:.10g},{r.eval_accuracy:.10g}\n")
    print(f"best eval accuracy {best:.4f}; kg miss rate {embedder.miss_rate:.3f}")
    inputs = [args.drugs, args.events, args.labels, args.splits, args.vocab,
              args.kg_table, args.kg_index]
    if args.pretrained:
        inputs.append(args.pretrained)
    return inputs, [ckpt, hist_path]


def _select_split(bundle: SplitBundle, name: str) -> list[int]:
    if name == "train":
        return bundle.train
    if name == "u1":
        return bundle.u1
    if name == "u2":
        return bundle.u2
    if name.startswith("fold"):
        return bundle.folds[int(name[4:])]
    raise ConfigError(f"unknown split {name!r} (use train, u1, u2 or foldK)")


def _restore_model(path, seed: int) -> DdiModel:
    meta, _ = read_checkpoint(path)
    mcfg = ModelConfig(**meta["config"])
    model = DdiModel(mcfg, seed=seed)
    load_checkpoint(path, model)
    model.eval()
    return model


def cmd_eval(args, cfg):
    _reject_unknown(cfg, extra={"id_template", "batch_size"})
    drugs, events, label_map, bundle, vocab, table = _load_training_world(args)
    pair_vecs, _ = _pair_vectors(events, table, cfg.get("id_template", "Compound::{id}"))
    model = _restore_model(args.checkpoint, args.seed)
    indices = _select_split(bundle, args.split)
    if not indices:
        raise DataError(f"split {args.split!r} is empty")
    scores = predict_scores(model, indices, events, drugs, vocab, pair_vecs,
                            batch_size=cfg.get("batch_size", 32),
                            max_len=model.cfg.max_len)
    truths = np.array([events[i].label for i in indices])
    report = evaluate(scores, truths, len(label_map))
    metrics_path = _out(args, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    roc_pc, roc_micro = roc_auc(scores, truths)
    pr_pc, pr_micro = aupr(scores, truths)
    roc_path = _out(args, "roc.csv")
    with open(roc_path, "w", encoding="utf-8") as fh:
        fh.write(curves_to_csv(roc_pc, roc_micro, "roc"))
    pr_path = _out(args, "pr.csv")
    with open(pr_path, "w", encoding="utf-8") as fh:
        fh.write(curves_to_csv(pr_pc, pr_micro, "pr"))
    print(report.to_json())
    return ([args.checkpoint, args.drugs, args.events, args.labels, args.splits,
             args.vocab, args.kg_table, args.kg_index],
            [metrics_path, roc_path, pr_path])


def cmd_sts(args, cfg):
    _reject_unknown(cfg, ModelConfig, FinetuneConfig,
                    extra={"eval_fold", "id_template", "min_class_count"})
    drugs, events, label_map, bundle, vocab, table = _load_training_world(args)
    pair_vecs, _ = _pair_vectors(events, table, cfg.get("id_template", "Compound::{id}"))
    rng = np.random.default_rng(args.seed)
    eval_fold = cfg.get("eval_fold", 0)
    eval_idx = bundle.folds[eval_fold]
    train_idx = [i for f, fold in enumerate(bundle.folds) if f != eval_fold for i in fold]
    series = sts_series(train_idx, events, rng,
                        min_class_count=cfg.get("min_class_count", 5))
    fcfg = _take_fields(cfg, FinetuneConfig, seed=args.seed)
    rows = []
    start = len(series[0])
    for step, subset in enumerate(series):
        mcfg, model = _build_model(cfg, len(vocab), len(label_map), 2 * table.dim,
                                   args.seed + step)
        if args.pretrained:
            _transfer_from(args.pretrained, model, args.seed)
        fcfg_step = dataclasses.replace(fcfg, max_len=mcfg.max_len)
        finetune(model, subset, [], events, drugs, vocab, pair_vecs, fcfg_step)
        accs = {}
        for name, idx in (("eval", eval_idx), ("u1", bundle.u1), ("u2", bundle.u2)):
            if not idx:
                accs[name] = float("nan")
                continue
            scores = predict_scores(model, idx, events, drugs, vocab, pair_vecs,
                                    fcfg.batch_size, mcfg.max_len)
            truth = np.array([events[i].label for i in idx])
            accs[name] = float((scores.argmax(axis=1) == truth).mean())
        rows.append((step, len(subset) / start, len(subset),
                     accs["eval"], accs["u1"], accs["u2"]))
        print(f"sts step {step}: size {len(subset)} eval {accs['eval']:.3f}")
    out = _out(args, "sts.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("step,train_fraction,train_size,eval_accuracy,u1_accuracy,u2_accuracy\n")
        for row in rows:
            fh.write(",".join(f"{x:.10g}" if isinstance(x, float) else str(x)
                              for x in row) + "\n")
    inputs = [args.drugs, args.events, args.labels, args.splits, args.vocab,
              args.kg_table, args.kg_index]
    return inputs, [out]


def cmd_seqlen(args, cfg):
    _reject_unknown(cfg, extra={"id_template", "bin_width", "batch_size"})
    drugs, events, label_map, bundle, vocab, table = _load_training_world(args)
    pair_vecs, _ = _pair_vectors(events, table, cfg.get("id_template", "Compound::{id}"))
    model = _restore_model(args.checkpoint, args.seed)
    indices = _select_split(bundle, args.split)
    bins = seqlen_bins(indices, events, drugs, cfg.get("bin_width", 25),
                       max_len=model.cfg.max_len)
    out = _out(args, "seqlen.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,mean_accuracy,count\n")
        for lo in sorted(bins):
            idx = bins[lo]
            scores = predict_scores(model, idx, events, drugs, vocab, pair_vecs,
                                    cfg.get("batch_size", 32), model.cfg.max_len)
            truth = np.array([events[i].label for i in idx])
            acc = float((scores.argmax(axis=1) == truth).mean())
            fh.write(f"{lo},{acc:.10g},{len(idx)}\n")
    return ([args.checkpoint, args.drugs, args.events, args.labels, args.splits,
             args.vocab, args.kg_table, args.kg_index], [out])


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)


def _add_dataset_args(p):
    p.add_argument("--drugs", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--kg-table", required=True)
    p.add_argument("--kg-index", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddikit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("make-fixture", help="generate a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("vocab", help="build the token vocabulary")
    p.add_argument("--corpus", required=True)
    _add_common(p)

    p = sub.add_parser("kg-train", help="train KG embeddings")
    p.add_argument("--triples", required=True)
    _add_common(p)

    p = sub.add_parser("kg-export", help="export per-drug KG vectors")
    p.add_argument("--table", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--drugs", required=True)
    _add_common(p)

    p = sub.add_parser("split", help="build CV + inductive splits")
    p.add_argument("--drugs", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    _add_common(p)

    p = sub.add_parser("pretrain", help="masked-token pretraining")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="supervised fine-tuning")
    _add_dataset_args(p)
    p.add_argument("--pretrained", default=None)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    _add_dataset_args(p)
    _add_common(p)

    p = sub.add_parser("sts", help="shrinking-training-set analysis")
    _add_dataset_args(p)
    p.add_argument("--pretrained", default=None)
    _add_common(p)

    p = sub.add_parser("seqlen", help="accuracy by input token length")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    _add_dataset_args(p)
    _add_common(p)

    return parser


_HANDLERS = {
    "make-fixture": cmd_make_fixture,
    "vocab": cmd_vocab,
    "kg-train": cmd_kg_train,
    "kg-export": cmd_kg_export,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "sts": cmd_sts,
    "seqlen": cmd_seqlen,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    t0 = time.time()
    try:
        cfg = _load_config(args)
        inputs, outputs = _HANDLERS[args.subcommand](args, cfg)
        os.makedirs(args.out_dir, exist_ok=True)
        _write_manifest(args.out_dir, args.subcommand, cfg, args.seed,
                        inputs, outputs, t0)
        return 0
    except ConfigError as exc:
        print(f"ddikit:error:config: {exc}", file=sys.stderr)
        return 2
    except (DataError, TripleError, SmilesError, CheckpointError, OSError) as exc:
        print(f"ddikit:error:data: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"ddikit:error:numeric: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
