"""Command-line surface: train, ablate, sweep-delta, heatmap.

Exit codes are stable across commands: 0 success, 2 usage/configuration,
3 data or file-format problems, 4 numeric failure. Every run writes a
manifest.json capturing the resolved configuration, seed, and input
digests; re-running the same manifest reproduces all metrics bit-for-bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import load_precomputed, split_text, tokenize
from .data import LabeledCorpus, make_synthetic, parse_tsv
from .errors import ConfigError, DataError, FormatError, NumericError, SeqattnError
from .model import Batch, load_checkpoint, save_checkpoint
from .sam import Order, SamConfig
from .svg import line_chart, token_heatmap
from .tensor import no_grad
from .train import (
    ABLATION_SETTINGS,
    TrainConfig,
    ablation_suite,
    default_delta_grid,
    delta_sweep,
    train_run,
)


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", help="TSV corpus: one 'label<TAB>text' per line")
    sub.add_argument("--synthetic", metavar="SPEC",
                     help="synthetic corpus 'rule[:n[:vocab]]', rule is trigger|cooc")
    sub.add_argument("--emb", default="table",
                     help="'table' (trainable lookup) or 'precomputed:PATH' (SAMEMB1 file)")
    sub.add_argument("--dim", type=int, default=32, help="embedding width D")
    sub.add_argument("--max-len", type=int, default=16, help="padded sequence length L")
    sub.add_argument("--delta", type=float, default=None, help="feature-gate threshold in [0, 1]")
    sub.add_argument("--order", choices=[o.value for o in Order], default=Order.FAM_THEN_TAM.value)
    sub.add_argument("--no-fam", action="store_true", help="disable the feature-wise module")
    sub.add_argument("--no-tam", action="store_true", help="disable the token-wise module")
    sub.add_argument("--bottleneck-ratio", type=int, default=4)
    sub.add_argument("--pool", choices=["mean", "max", "first"], default="mean")
    sub.add_argument("--lr", type=float, default=0.02)
    sub.add_argument("--weight-decay", type=float, default=1e-2)
    sub.add_argument("--dropout", type=float, default=0.0)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--batch", type=int, default=32)
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--lookahead-k", type=int, default=5)
    sub.add_argument("--lookahead-alpha", type=float, default=0.5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqattn",
        description="Train and probe the sequential attention re-weighting stage.",
    )
    parser.add_argument("--version", action="version", version=f"seqattn {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="k-fold training with per-epoch metrics")
    _add_model_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ablate = subs.add_parser("ablate", help="train every ablation setting and tabulate")
    _add_model_flags(p_ablate)
    p_ablate.add_argument("--settings", help=f"comma list from {list(ABLATION_SETTINGS)}")
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = subs.add_parser("sweep-delta", help="train across a threshold grid")
    _add_model_flags(p_sweep)
    p_sweep.add_argument("--grid", default="0.0:0.8:0.05", help="start:stop:step")
    p_sweep.set_defaults(func=cmd_sweep_delta)

    p_heat = subs.add_parser("heatmap", help="export attention maps for one input")
    p_heat.add_argument("--checkpoint", required=True)
    p_heat.add_argument("--text", help="raw input text (table-mode checkpoints)")
    p_heat.add_argument("--data", help="corpus file to pick an example from")
    p_heat.add_argument("--index", type=int, default=0, help="record index within --data")
    p_heat.add_argument("--out", required=True, help="output path prefix (.json and .svg)")
    p_heat.set_defaults(func=cmd_heatmap)
    return parser


def _parse_synthetic(spec: str, parser: argparse.ArgumentParser) -> LabeledCorpus:
    parts = spec.split(":")
    rule = parts[0]
    if rule not in ("trigger", "cooc"):
        parser.error(f"unknown synthetic rule {rule!r}: use trigger or cooc")
    try:
        n = int(parts[1]) if len(parts) > 1 else 2000
        vocab = int(parts[2]) if len(parts) > 2 else 50
    except ValueError:
        parser.error(f"bad synthetic spec {spec!r}: expected rule[:n[:vocab]]")
    return make_synthetic(n=n, vocab_size=vocab, trigger_rule=rule, seed=0)


def _resolve_inputs(args, parser) -> tuple[LabeledCorpus, list | None, dict[str, str]]:
    """Returns (corpus, emb_seqs or None, input digests)."""
    digests: dict[str, str] = {}
    precomputed = args.emb.startswith("precomputed:")
    if precomputed:
        if args.data or args.synthetic:
            parser.error("--emb precomputed:PATH carries its own labels; drop --data/--synthetic")
        path = args.emb.split(":", 1)[1]
        digests[path] = _sha256(path)
        seqs = load_precomputed(path)
        mapping: dict[str, int] = {}
        for _, label in seqs:
            mapping.setdefault(str(label), len(mapping))
        if len(mapping) < 2:
            raise DataError("precomputed file holds fewer than 2 distinct labels")
        seqs = [(vec, mapping[str(label)]) for vec, label in seqs]
        corpus = LabeledCorpus(
            records=[("", label) for _, label in seqs],
            num_classes=len(mapping),
            label_mapping=mapping,
        )
        return corpus, seqs, digests
    if args.emb != "table":
        parser.error(f"--emb must be 'table' or 'precomputed:PATH', got {args.emb!r}")
    if bool(args.data) == bool(args.synthetic):
        parser.error("exactly one of --data or --synthetic is required")
    if args.data:
        digests[args.data] = _sha256(args.data)
        return parse_tsv(args.data), None, digests
    return _parse_synthetic(args.synthetic, parser), None, digests


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _build_configs(args, parser) -> tuple[SamConfig, TrainConfig]:
    if args.no_fam and args.delta is not None:
        parser.error("--delta configures the feature-wise filter; it conflicts with --no-fam")
    delta = 0.0 if args.delta is None else args.delta
    if not 0.0 <= delta <= 1.0:
        parser.error(f"delta must lie in [0, 1], got {delta}")
    sam_cfg = SamConfig(
        d_model=args.dim,
        max_len=args.max_len,
        delta=delta,
        bottleneck_ratio=args.bottleneck_ratio,
        order=Order(args.order),
        fam_enabled=not args.no_fam,
        tam_enabled=not args.no_tam,
    )
    train_cfg = TrainConfig(
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch,
        max_epochs=args.epochs,
        lookahead_k=args.lookahead_k,
        lookahead_alpha=args.lookahead_alpha,
        seed=args.seed,
        folds=args.folds,
        dropout=args.dropout,
    )
    return sam_cfg, train_cfg


def _write_manifest(out_dir: Path, command: str, args, digests: dict, artifacts: list[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "tool": "seqattn",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "input_digests": digests,
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _report_dict(result) -> dict:
    folds = []
    for fo in result.fold_outcomes:
        if fo.diverged:
            folds.append({"fold": fo.fold, "diverged": True})
            continue
        folds.append(
            {
                "fold": fo.fold,
                "diverged": False,
                "best_epoch": fo.best_epoch,
                "accuracy": fo.report.accuracy,
                "macro_f1": fo.report.macro_f1,
                "binary_f1": fo.report.binary_f1,
                "per_class": fo.report.per_class,
                "confusion": fo.report.confusion.tolist(),
                "n": fo.report.n,
            }
        )
    return {
        "metric_name": result.metric_name,
        "mean_metric": result.mean_metric,
        "seconds_per_epoch": result.seconds_per_epoch,
        "folds": folds,
    }


def cmd_train(args, parser) -> int:
    corpus, emb_seqs, digests = _resolve_inputs(args, parser)
    if emb_seqs:
        file_dim = emb_seqs[0][0].shape[1]
        if file_dim != args.dim:
            parser.error(f"--dim {args.dim} does not match the embedding file width {file_dim}")
    sam_cfg, train_cfg = _build_configs(args, parser)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = train_run(corpus, sam_cfg, train_cfg, pooling=args.pool, emb_seqs=emb_seqs)

    with open(out_dir / "epochs.jsonl", "w") as fh:
        for record in result.history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    report = _report_dict(result)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    save_checkpoint(out_dir / "checkpoint.npz", result.model,
                    extra={"metric_name": result.metric_name, "metric": result.mean_metric})
    _write_manifest(out_dir, "train", args, digests,
                    ["epochs.jsonl", "report.json", "checkpoint.npz"])
    print(f"{result.metric_name}={result.mean_metric:.4f} "
          f"(mean over {len(result.fold_outcomes)} fold(s))")
    return 0


def cmd_ablate(args, parser) -> int:
    corpus, emb_seqs, digests = _resolve_inputs(args, parser)
    if emb_seqs is not None:
        parser.error("ablate currently drives the table-embedding path only")
    sam_cfg, train_cfg = _build_configs(args, parser)
    settings = None
    if args.settings:
        settings = [s.strip() for s in args.settings.split(",") if s.strip()]
        unknown = [s for s in settings if s not in ABLATION_SETTINGS]
        if unknown:
            parser.error(f"unknown setting(s) {unknown}; valid: {list(ABLATION_SETTINGS)}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = ablation_suite(corpus, sam_cfg, train_cfg, settings=settings, pooling=args.pool)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "metric", "seconds_per_epoch"])
        for row in rows:
            if row.diverged:
                writer.writerow([row.setting, "diverged", ""])
            else:
                writer.writerow([row.setting, f"{row.metric:.6f}", f"{row.seconds_per_epoch:.4f}"])
    _write_manifest(out_dir, "ablate", args, digests, ["ablation.csv"])
    for row in rows:
        shown = "diverged" if row.diverged else f"{row.metric:.4f}"
        print(f"{row.setting}: {row.metric_name}={shown}")
    return 0


def cmd_sweep_delta(args, parser) -> int:
    corpus, emb_seqs, digests = _resolve_inputs(args, parser)
    if emb_seqs is not None:
        parser.error("sweep-delta currently drives the table-embedding path only")
    if args.delta is not None:
        parser.error("--delta is swept; use --grid to control the range")
    sam_cfg, train_cfg = _build_configs(args, parser)
    try:
        start, stop, step = (float(v) for v in args.grid.split(":"))
    except ValueError:
        parser.error(f"bad --grid {args.grid!r}: expected start:stop:step")
    if step <= 0:
        parser.error(f"grid step must be positive, got {step}")
    if not (0.0 <= start <= stop <= 1.0):
        parser.error(f"grid range must satisfy 0 <= start <= stop <= 1, got {args.grid!r}")
    deltas = default_delta_grid(start, stop, step)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    points = delta_sweep(corpus, sam_cfg, train_cfg, deltas, pooling=args.pool)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "metric"])
        for pt in points:
            writer.writerow([f"{pt.delta:.10g}", f"{pt.metric:.6f}"])
    chart = line_chart(
        {"metric": [(pt.delta, pt.metric) for pt in points]},
        title="threshold sweep",
        x_label="delta",
        y_label="dev metric",
    )
    (out_dir / "sweep.svg").write_text(chart + "\n")
    _write_manifest(out_dir, "sweep-delta", args, digests, ["sweep.csv", "sweep.svg"])
    for pt in points:
        print(f"delta={pt.delta:.2f}: {pt.metric:.4f}")
    return 0


def cmd_heatmap(args, parser) -> int:
    if bool(args.text) == bool(args.data):
        parser.error("exactly one of --text or --data is required")
    model = load_checkpoint(args.checkpoint)
    digests = {args.checkpoint: _sha256(args.checkpoint)}

    if model.vocab is not None:
        if args.text:
            text = args.text
        else:
            digests[args.data] = _sha256(args.data)
            corpus = parse_tsv(args.data)
            if not 0 <= args.index < len(corpus):
                raise DataError(f"--index {args.index} outside corpus of {len(corpus)} records")
            text = corpus.records[args.index][0]
        tokens = split_text(text)[: model.cfg.max_len] or ["<unk>"]
        ids, mask_row = tokenize(text, model.vocab, model.cfg.max_len)
        batch = Batch(mask=mask_row[None, :], labels=np.zeros(1, dtype=np.int64), ids=ids[None, :])
    else:
        if not args.data:
            parser.error("this checkpoint consumes precomputed embeddings; pass --data SAMEMB1_FILE")
        digests[args.data] = _sha256(args.data)
        seqs = load_precomputed(args.data)
        if not 0 <= args.index < len(seqs):
            raise DataError(f"--index {args.index} outside embedding file of {len(seqs)} records")
        vectors, _ = seqs[args.index]
        if vectors.shape[1] != model.cfg.d_model:
            raise FormatError(
                f"embedding width {vectors.shape[1]} does not match the checkpoint's {model.cfg.d_model}"
            )
        length = min(max(len(vectors), 1), model.cfg.max_len)
        tokens = [f"t{i}" for i in range(length)]
        embs = np.zeros((1, model.cfg.max_len, model.cfg.d_model))
        embs[0, : len(vectors[: model.cfg.max_len])] = vectors[: model.cfg.max_len]
        mask_row = np.zeros((1, model.cfg.max_len))
        mask_row[0, :length] = 1.0
        batch = Batch(mask=mask_row, labels=np.zeros(1, dtype=np.int64), embs=embs)

    with no_grad():
        _, trace = model.forward(batch)
    token_weights = trace.tam_map[0, : len(tokens)].tolist()
    feature_weights = trace.fam_map[0].tolist()

    warning = None
    if max(feature_weights, default=0.0) == 0.0:
        warning = "all feature gates are zero (threshold saturated): shading carries no signal"

    payload = {
        "tokens": tokens,
        "token_weights": token_weights,
        "feature_weights": feature_weights,
    }
    prefix = Path(args.out)
    if prefix.suffix == ".json":
        prefix = prefix.with_suffix("")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    Path(f"{prefix}.svg").write_text(token_heatmap(tokens, token_weights, warning) + "\n")
    if warning:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {prefix}.json and {prefix}.svg")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, parser)
    except SystemExit as exc:  # argparse usage errors carry code 2
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SeqattnError as exc:  # shape/contract problems from flag combinations
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
