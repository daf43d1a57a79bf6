"""Command-line front end.

Subcommands: train | embed | extract | attack | evaluate | ablate.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from .codec import Watermark
from .config import RunConfig, parse_run_config, run_config_text
from .errors import DataError, NumericError, UsageError
from .metrics import (bit_accuracy, corpus_hashes, default_bond_table,
                      evaluate_corpus, molecular_weight)
from .molecule import load_corpus, resolve_vocabulary, write_xyz
from .reports import stats
from .training import (ScheduleParams, Trainer, codec_from_checkpoint,
                       load_checkpoint, save_checkpoint)
from .transforms import apply, sweep


def _read_config(path: str) -> RunConfig:
    if not path:
        raise UsageError("--config is required for this command")
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_run_config(fh.read())


def _load_codec(path: str):
    if not path:
        raise UsageError("--checkpoint is required for this command")
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    return codec_from_checkpoint(load_checkpoint(path))


def _molecule_ids(n: int) -> list[str]:
    return [f"mol{i:05d}" for i in range(n)]


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.corpus:
        cfg.corpus = args.corpus
    if not cfg.corpus:
        raise UsageError("no corpus path in config or --corpus")
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    mols = load_corpus(cfg.corpus, cfg.vocabulary)
    with open(os.path.join(out, "config_snapshot.txt"), "w") as fh:
        fh.write(run_config_text(cfg))
    trainer = Trainer(cfg.codec, cfg.schedule, resolve_vocabulary(cfg.vocabulary),
                      seed=cfg.seed, batch_size=cfg.batch_size, lr=cfg.lr)
    ckpt_path = os.path.join(out, "checkpoint.mwm")
    metrics_path = os.path.join(out, "metrics.jsonl")
    trainer.train(mols, cfg.epochs, checkpoint_path=ckpt_path, metrics_path=metrics_path)
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_embed(args) -> int:
    codec, vocabulary = _load_codec(args.checkpoint)
    if not args.corpus:
        raise UsageError("--corpus is required")
    out = args.out or "embedded"
    os.makedirs(out, exist_ok=True)
    mols = load_corpus(args.corpus, vocabulary)
    ids = _molecule_ids(len(mols))
    if args.watermark:
        fixed = Watermark.from_string(args.watermark)
        if fixed.length != codec.cfg.L:
            raise UsageError(
                f"payload length {fixed.length} != checkpoint capacity {codec.cfg.L}")
        payloads = [fixed] * len(mols)
    else:
        rng = np.random.default_rng([args.seed if args.seed is not None else 0, 10])
        payloads = [Watermark.random(rng, codec.cfg.L) for _ in mols]
    manifest_rows = []
    with ad.no_grad():
        for mol_id, mol, payload in zip(ids, mols, payloads):
            marked = codec.embed(mol, payload)
            with open(os.path.join(out, f"{mol_id}.xyz"), "w") as fh:
                fh.write(write_xyz(marked, comment=mol_id))
            manifest_rows.append((mol_id, payload.to_string()))
    manifest_path = os.path.join(out, "manifest.csv")
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["molecule_id", "bits"])
        writer.writerows(manifest_rows)
    print(f"watermarked corpus: {out} ({len(mols)} molecules)")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_extract(args) -> int:
    codec, vocabulary = _load_codec(args.checkpoint)
    if not args.corpus:
        raise UsageError("--corpus is required")
    mols = load_corpus(args.corpus, vocabulary)
    ids = _molecule_ids(len(mols))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["molecule_id", "bits"])
    with ad.no_grad():
        for mol_id, mol in zip(ids, mols):
            writer.writerow([mol_id, codec.extract(mol).to_string()])
    text = buf.getvalue()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "extracted.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"extracted payloads: {path}")
    else:
        sys.stdout.write(text)
    return 0


def _read_manifest(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise UsageError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["molecule_id", "bits"]:
        raise DataError(f"{path}: expected header 'molecule_id,bits'")
    return {mol_id: bits for mol_id, bits in rows[1:]}


def cmd_attack(args) -> int:
    codec, vocabulary = _load_codec(args.checkpoint)
    if not args.corpus:
        raise UsageError("--corpus (watermarked) is required")
    if not args.manifest:
        raise UsageError("--manifest is required")
    mols = load_corpus(args.corpus, vocabulary)
    ids = _molecule_ids(len(mols))
    manifest = _read_manifest(args.manifest)
    missing = [i for i in ids if i not in manifest]
    if missing:
        raise DataError(f"manifest does not cover corpus: missing {missing[:3]}...")
    sweeps = (_read_config(args.config).resolved_sweeps() if args.config
              else RunConfig().resolved_sweeps())
    out = args.out or "attack_report"
    os.makedirs(out, exist_ok=True)

    truth = {i: Watermark.from_string(manifest[i]) for i in ids}
    baseline = {}
    with ad.no_grad():
        for mol_id, mol in zip(ids, mols):
            baseline[mol_id] = bit_accuracy(truth[mol_id], codec.extract(mol))
    rows, per_sweep, constancy = [], [], {i: True for i in ids}
    with ad.no_grad():
        for spec in sweeps:
            transforms = sweep(spec)
            sweep_accs = []
            for value, t in zip(spec.values, transforms):
                accs = []
                for mol_id, mol in zip(ids, mols):
                    moved = mol.with_positions(apply(mol.positions, t))
                    got = codec.extract(moved)
                    acc = bit_accuracy(truth[mol_id], got)
                    accs.append(acc)
                    if acc != baseline[mol_id]:
                        constancy[mol_id] = False
                sweep_accs.extend(accs)
                st = stats(accs)
                rows.append([spec.kind, spec.axis, value, st.median, st.q1, st.q3,
                             st.iqr, st.whisker_low, st.whisker_high])
            per_sweep.append({"kind": spec.kind, "axis": spec.axis,
                              "n_transforms": len(transforms),
                              "stats": stats(sweep_accs).as_dict()})

    csv_path = os.path.join(out, "robustness.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "axis", "value", "median", "q1", "q3",
                         "iqr", "whisker_low", "whisker_high"])
        writer.writerows(rows)
    report = {
        "baseline": {"stats": stats(list(baseline.values())).as_dict()},
        "sweeps": per_sweep,
        "constancy": {i: bool(v) for i, v in sorted(constancy.items())},
        "all_constant": all(constancy.values()),
    }
    json_path = os.path.join(out, "robustness.json")
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"robustness report: {json_path}")
    print(f"per-transform table: {csv_path}")
    print(f"all molecules constant across sweeps: {report['all_constant']}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.corpus or not args.watermarked:
        raise UsageError("--corpus (original) and --watermarked are required")
    vocabulary = args.vocabulary or "qm9"
    originals = load_corpus(args.corpus, vocabulary)
    marked = load_corpus(args.watermarked, vocabulary)
    if len(originals) != len(marked):
        raise DataError(
            f"corpus size mismatch: {len(originals)} original vs {len(marked)} watermarked")
    table = default_bond_table()
    reference = corpus_hashes(originals, table)
    rep_orig = evaluate_corpus(originals, table, reference_hashes=reference)
    rep_mark = evaluate_corpus(marked, table, reference_hashes=reference)
    metric_names = ["atom_stability", "mol_stability", "validity", "uniqueness", "novelty"]
    deltas = {name: getattr(rep_mark, name) - getattr(rep_orig, name) for name in metric_names}
    mw_orig = stats([molecular_weight(m, table) for m in originals])
    mw_mark = stats([molecular_weight(m, table) for m in marked])
    out = args.out or "evaluation"
    os.makedirs(out, exist_ok=True)
    report = {
        "original": rep_orig.as_dict(), "watermarked": rep_mark.as_dict(),
        "delta_watermarked_minus_original": deltas,
        "molecular_weight": {"original": mw_orig.as_dict(), "watermarked": mw_mark.as_dict()},
    }
    json_path = os.path.join(out, "quality.json")
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    csv_path = os.path.join(out, "quality.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "original", "watermarked", "delta"])
        for name in metric_names:
            writer.writerow([name, getattr(rep_orig, name), getattr(rep_mark, name),
                             deltas[name]])
    print(f"quality report: {json_path}")
    print(f"summary table: {csv_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    if args.corpus:
        cfg.corpus = args.corpus
    if not cfg.corpus:
        raise UsageError("no corpus path in config or --corpus")
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    mols = load_corpus(cfg.corpus, cfg.vocabulary)
    vocabulary = resolve_vocabulary(cfg.vocabulary)
    table = default_bond_table()
    reference = corpus_hashes(mols, table)
    comparison = []
    for variant in ("original", "variant1", "variant2", "variant3"):
        vcfg = cfg.codec.for_variant(variant)
        trainer = Trainer(vcfg, cfg.schedule, vocabulary, seed=cfg.seed,
                          batch_size=cfg.batch_size, lr=cfg.lr)
        ckpt_path = os.path.join(out, f"checkpoint_{variant}.mwm")
        metrics_path = os.path.join(out, f"metrics_{variant}.jsonl")
        records = trainer.train(mols, cfg.epochs, checkpoint_path=ckpt_path,
                                metrics_path=metrics_path)
        rng = np.random.default_rng([cfg.seed, 20])
        marked = []
        correct = total = 0
        with ad.no_grad():
            for mol in mols:
                payload = Watermark.random(rng, vcfg.L)
                wm = trainer.codec.embed(mol, payload)
                marked.append(wm)
                got = trainer.codec.extract(wm)
                correct += int((got.bits == payload.bits).sum())
                total += vcfg.L
        quality = evaluate_corpus(marked, table, reference_hashes=reference)
        comparison.append({
            "variant": variant,
            "use_atom_embedder": vcfg.use_atom_embedder,
            "use_edge_embedder": vcfg.use_edge_embedder,
            "encoder_channels": vcfg.encoder_channels,
            "bit_accuracy": correct / total,
            "atom_stability": quality.atom_stability,
            "mol_stability": quality.mol_stability,
            "validity": quality.validity,
            "uniqueness": quality.uniqueness,
            "novelty": quality.novelty,
            "final_train_accuracy": records[-1].bit_acc if records else None,
        })
    json_path = os.path.join(out, "ablation.json")
    with open(json_path, "w") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
    csv_path = os.path.join(out, "ablation.csv")
    cols = ["variant", "bit_accuracy", "atom_stability", "mol_stability",
            "validity", "uniqueness", "novelty", "encoder_channels"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in comparison:
            writer.writerow([row[c] for c in cols])
    print(f"ablation comparison: {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molmark",
        description="Embed, extract, and evaluate digital watermarks in 3D molecules.")
    sub = parser.add_subparsers(dest="command")
    for name, fn, extra in [
        ("train", cmd_train, "train a codec from a run config"),
        ("embed", cmd_embed, "watermark a corpus with a trained checkpoint"),
        ("extract", cmd_extract, "read payloads back out of a corpus"),
        ("attack", cmd_attack, "run transform sweeps and report robustness"),
        ("evaluate", cmd_evaluate, "compare molecule quality before/after embedding"),
        ("ablate", cmd_ablate, "train all four architecture variants and compare"),
    ]:
        p = sub.add_parser(name, help=extra)
        p.add_argument("--config", default=None)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--corpus", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--watermark", default=None)
        p.add_argument("--capacity", type=int, default=None)
        p.add_argument("--manifest", default=None)
        p.add_argument("--watermarked", default=None)
        p.add_argument("--vocabulary", default=None)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return 1 if exc.code else 0


if __name__ == "__main__":
    sys.exit(main())
