"""Command-line entry point.

Subcommands: gen-data, train, infer, eval, ablate, dump-embeddings,
dump-cam. Every command resolves one flat config (file + ``--set``
overrides), writes the resolved snapshot next to its outputs, and exits
non-zero with a one-line machine-parsable error on failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .config import RunConfig
from .errors import (
    ConfigError,
    DataError,
    MissingInputError,
    RefvosError,
    ShapeMismatchError,
)
from .grounding import channel_activation_map, dump_cam
from .metrics import build_report
from .trainer import (
    Dataset,
    evaluate_checkpoint,
    load_model,
    run_inference,
    train,
)

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SHAPE = 4
EXIT_DATA = 5


def _load_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        cfg = RunConfig.from_file(path)
    else:
        cfg = RunConfig()
    cfg.apply_overrides(args.set or [])
    return cfg


def _require(path, kind: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{kind} not found: {path}")
    return path


def _write_resolved(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / "config.resolved")


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    clips, records, manifest = data_mod.build_dataset(cfg)
    data_mod.write_archive(out, clips, records, manifest)
    _write_resolved(cfg, out)
    print(f"wrote {len(clips)} videos, {len(records)} expressions to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_root = _require(args.data, "dataset directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    dataset = Dataset.load(data_root)
    result = train(cfg, dataset, out)
    print(f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def _write_predictions(out: Path, predictions: list) -> None:
    (out / "masks").mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.tsv", "w", encoding="utf-8") as fh:
        fh.write("video_id\texpression_id\tselected_slot\tsum_scores\talignment_probability\n")
        for pred in predictions:
            data_mod.write_rle(
                out / "masks" / f"{pred['video_id']}_{pred['expression_id']}.rle",
                pred["masks"],
            )
            fh.write(
                f"{pred['video_id']}\t{pred['expression_id']}\t{pred['slot']}"
                f"\t{pred['sum_scores']:.6f}\t{pred['prob']:.6f}\n"
            )


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    data_root = _require(args.data, "dataset directory")
    ckpt = _require(args.checkpoint, "checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    dataset = Dataset.load(data_root)
    model = load_model(cfg, ckpt)
    predictions = run_inference(model, dataset, cfg, split=args.split, gate_mode=args.gate)
    _write_predictions(out, predictions)
    print(f"wrote {len(predictions)} pair predictions to {out}")
    return EXIT_OK


def _read_prediction_probs(pred_dir: Path) -> dict:
    path = pred_dir / "predictions.tsv"
    probs = {}
    if path.exists():
        lines = path.read_text(encoding="utf-8").splitlines()
        for line in lines[1:]:
            parts = line.split("\t")
            if len(parts) == 5:
                probs[(parts[0], parts[1])] = float(parts[4])
    return probs


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    data_root = _require(args.data, "dataset directory")
    pred_dir = _require(args.pred, "prediction directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    dataset = Dataset.load(data_root)
    probs = _read_prediction_probs(pred_dir)
    rows = []
    from .metrics import video_F, video_J

    for entry in dataset.manifest.split(args.split):
        mask_path = pred_dir / "masks" / f"{entry.video_id}_{entry.expression_id}.rle"
        if not mask_path.exists():
            raise MissingInputError(f"predicted masks not found: {mask_path}")
        pred_masks = data_mod.read_rle(mask_path)
        row = {
            "video_id": entry.video_id,
            "expression_id": entry.expression_id,
            "is_positive": entry.is_positive,
            "pred_area": int(pred_masks.sum()),
            "prob": probs.get((entry.video_id, entry.expression_id)),
            "J": None,
            "F": None,
        }
        if entry.is_positive:
            gt = dataset.clips[entry.video_id].masks_for(
                dataset.records[entry.expression_id].target_attrs
            )
            if gt.shape != pred_masks.shape:
                raise ShapeMismatchError(
                    f"prediction shape {pred_masks.shape} vs ground truth {gt.shape} "
                    f"for {entry.video_id}/{entry.expression_id}"
                )
            row["J"] = video_J(pred_masks, gt)
            row["F"] = video_F(pred_masks, gt)
        rows.append(row)
    report = build_report(rows)
    _write_eval_outputs(out, rows, report)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def _write_eval_outputs(out: Path, rows: list, report) -> None:
    with open(out / "pairs.tsv", "w", encoding="utf-8") as fh:
        fh.write("video_id\texpression_id\tis_positive\tJ\tF\tpred_area\tprob\n")
        for row in rows:
            def fmt(x):
                return "" if x is None else (f"{x:.6f}" if isinstance(x, float) else str(x))

            fh.write(
                f"{row['video_id']}\t{row['expression_id']}\t{int(row['is_positive'])}"
                f"\t{fmt(row['J'])}\t{fmt(row['F'])}\t{row['pred_area']}\t{fmt(row['prob'])}\n"
            )
    (out / "summary.txt").write_text(
        "\n".join(report.summary_lines()) + "\n", encoding="utf-8"
    )


ABLATION_CELLS = {
    # cycle-consistency constraint axis
    "none": {"loss.constraint": "none"},
    "pw": {"loss.constraint": "pw"},
    "ra": {"loss.constraint": "ra"},
    "rd": {"loss.constraint": "rd"},
    "rd+ra": {"loss.constraint": "rd+ra"},
    # instance query count axis
    "n1": {"model.queries": 1},
    "n5": {"model.queries": 5},
    "n9": {"model.queries": 9},
    # window size axis
    "t1": {"data.window": 1},
    "t3": {"data.window": 3},
    "t5": {"data.window": 5},
}


def run_ablation(cfg: RunConfig, out_dir, cells, seeds) -> list:
    """Train and evaluate each requested cell for each seed. Returns result
    rows (cell, seed, and the metric report)."""
    out_dir = Path(out_dir)
    results = []
    for cell in cells:
        if cell not in ABLATION_CELLS:
            raise ConfigError(f"unknown ablation cell {cell!r} (choices: {sorted(ABLATION_CELLS)})")
        for seed in seeds:
            run_cfg = cfg.copy()
            for key, value in ABLATION_CELLS[cell].items():
                run_cfg.set(key, value)
            run_cfg.set("data.seed", seed)
            run_cfg.set("train.seed", seed)
            cell_dir = out_dir / f"{cell.replace('+', '_')}_seed{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            _write_resolved(run_cfg, cell_dir)
            dataset = Dataset.generate(run_cfg)
            result = train(run_cfg, dataset, cell_dir)
            report, _, _ = evaluate_checkpoint(run_cfg, result.final_checkpoint, dataset)
            results.append({"cell": cell, "seed": seed, "report": report})
    return results


def _summarize_ablation(results: list) -> str:
    by_cell = {}
    for row in results:
        by_cell.setdefault(row["cell"], []).append(row["report"])
    lines = ["cell\tseeds\tJ_mean\tF_mean\tJF_mean\tR\tconsensus_accuracy"]
    for cell in sorted(by_cell):
        reports = by_cell[cell]
        J = np.mean([r.J_mean for r in reports])
        F = np.mean([r.F_mean for r in reports])
        JF = np.mean([r.JF_mean for r in reports])
        R = np.mean([r.R for r in reports if r.R is not None]) if reports else float("nan")
        acc = np.mean([r.consensus_accuracy for r in reports])
        lines.append(f"{cell}\t{len(reports)}\t{J:.4f}\t{F:.4f}\t{JF:.4f}\t{R:.4f}\t{acc:.4f}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    cells = args.cells.split(",") if args.cells else sorted(ABLATION_CELLS)
    seeds = list(range(args.seeds))
    results = run_ablation(cfg, out, cells, seeds)
    rows = ["cell\tseed\tJ_mean\tF_mean\tJF_mean\tR\tconsensus_accuracy"]
    for row in results:
        r = row["report"]
        R = "missing" if r.R is None else f"{r.R:.4f}"
        rows.append(
            f"{row['cell']}\t{row['seed']}\t{r.J_mean:.4f}\t{r.F_mean:.4f}"
            f"\t{r.JF_mean:.4f}\t{R}\t{r.consensus_accuracy:.4f}"
        )
    (out / "ablation.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    summary = _summarize_ablation(results)
    (out / "ablation_summary.tsv").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    cfg = _load_config(args)
    data_root = _require(args.data, "dataset directory")
    ckpt = _require(args.checkpoint, "checkpoint")
    dataset = Dataset.load(data_root)
    model = load_model(cfg, ckpt)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    entries = dataset.manifest.split(args.split)
    channels = cfg["model.channels"]
    with open(out_path, "w", encoding="utf-8") as fh:
        header = ["expression_id", "video_id", "is_positive"]
        header += [f"e{i}" for i in range(channels)] + [f"ep{i}" for i in range(channels)]
        fh.write("\t".join(header) + "\n")
        with torch.no_grad():
            from .trainer import collate, pair_tensors

            for entry in entries:
                record = dataset.records[entry.expression_id]
                batch = collate(
                    [(*pair_tensors(dataset.clips[entry.video_id], record, False), entry.is_positive)]
                )
                outputs = model(batch["frames"], batch["tokens"], batch["pad_mask"])
                e = outputs["e"][0].tolist()
                ep = outputs["e_prime"][0].tolist()
                row = [entry.expression_id, entry.video_id, str(int(entry.is_positive))]
                row += [f"{v:.6f}" for v in e] + [f"{v:.6f}" for v in ep]
                fh.write("\t".join(row) + "\n")
    print(f"wrote embeddings for {len(entries)} pairs to {out_path}")
    return EXIT_OK


def cmd_dump_cam(args) -> int:
    cfg = _load_config(args)
    data_root = _require(args.data, "dataset directory")
    ckpt = _require(args.checkpoint, "checkpoint")
    dataset = Dataset.load(data_root)
    if args.video_id not in dataset.clips:
        raise MissingInputError(f"video {args.video_id} not in dataset")
    if args.expression_id not in dataset.records:
        raise MissingInputError(f"expression {args.expression_id} not in dataset")
    model = load_model(cfg, ckpt)
    from .trainer import collate, pair_tensors

    record = dataset.records[args.expression_id]
    batch = collate([(*pair_tensors(dataset.clips[args.video_id], record, False), True)])
    with torch.no_grad():
        outputs = model(batch["frames"], batch["tokens"], batch["pad_mask"])
    shape = outputs["feature_shape"]
    paths = dump_cam(outputs["f_early"][0], shape, args.out, prefix=f"{args.video_id}_{args.expression_id}")
    # keep the raw activations around for offline comparison
    cam = channel_activation_map(outputs["f_early"][0], shape)
    np.save(Path(args.out) / f"{args.video_id}_{args.expression_id}_cam.npy", cam)
    print(f"wrote {len(paths)} CAM frames to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refvos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset archive")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset archive")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run gated inference and write mask archive")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--gate", default=None, choices=["auto", "open", "closed"])
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a prediction archive against ground truth")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation grid (constraint, queries, window)")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--cells", help="comma-separated cells, default all")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-embeddings", help="dump original/reconstructed embeddings as TSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.set_defaults(func=cmd_dump_embeddings)

    p = sub.add_parser("dump-cam", help="dump grounded-feature activation maps as PGM")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video-id", required=True)
    p.add_argument("--expression-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_cam)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ShapeMismatchError as exc:
        print(f"error: shape-mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RefvosError as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
