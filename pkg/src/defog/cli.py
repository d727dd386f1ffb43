"""Command line entry point: gen-data, train, eval, predict.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure.  DEFOG_THREADS caps worker threads (default 1, which keeps
every code path deterministic).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .errors import DataError, NumericError
from .fogsim import (
    SimConfig,
    dataset_stats,
    format_stats,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .kernel import load_checkpoint, restore_checkpoint
from .metrics import evaluate, evaluate_baseline, report_json, report_table
from .network import DiscriminatorSpec, Generator, GeneratorSpec
from .render import RenderSpec, figure_metrics, figure_prediction, figure_training, render_grid
from .schema import load_schema
from .trainer import TrainConfig, apply_ablation, checkpoint_paths, predict_batches, train

ABLATION_FLAGS = (
    "drop_partial",
    "drop_accumulated",
    "drop_adv",
    "drop_rec",
    "plain_l2",
    "drop_obconn",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract here is 1
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    raw = os.environ.get("DEFOG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise DataError(f"DEFOG_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise DataError(f"DEFOG_THREADS must be >= 1, got {n}")
    return n


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_stem(path: str) -> str:
    for suffix in (".gen.ckpt", ".disc.ckpt"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def _load_generator(stem: str, dataset) -> tuple[Generator, TrainConfig]:
    """Rebuild the generator recorded in a checkpoint pair."""
    gen_path, _ = checkpoint_paths(stem)
    if not os.path.exists(gen_path):
        raise DataError(f"no checkpoint at {gen_path}")
    meta = load_checkpoint(gen_path)["meta"]
    try:
        gen_spec = GeneratorSpec.from_dict(meta["gen_spec"])
        cfg = TrainConfig.from_dict(meta["config"])
    except KeyError as exc:
        raise DataError(f"{gen_path}: checkpoint meta lacks {exc}") from exc
    gen = Generator.build(gen_spec, dataset.schema, np.random.default_rng(0))
    restore_checkpoint(gen_path, gen.store)
    return gen, cfg


def _model_inputs(dataset, split: str, cfg: TrainConfig):
    xbar, xtilde, y = dataset.split_arrays(split)
    x = apply_ablation(cfg, dataset.schema, np.concatenate([xbar, xtilde], axis=1))
    return x, y


# ------------------------------------------------------------------ gen-data


def _cmd_gen_data(args) -> int:
    if args.config is None:
        raw = {"schema": "desk16"}
    else:
        raw = _read_json(args.config)
    if isinstance(raw.get("schema"), str):
        raw["schema"] = load_schema(raw["schema"]).to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SimConfig.from_dict(raw)
    ds = generate_dataset(cfg, threads=_threads())
    write_dataset(ds, args.out)
    stats = dataset_stats(ds)
    print(format_stats(stats))
    print(f"wrote {ds.n_frames} frames "
          f"({len(ds.splits['train'])}/{len(ds.splits['val'])}/"
          f"{len(ds.splits['test'])} train/val/test episodes) to {args.out}")
    return 0


# --------------------------------------------------------------------- train


def _cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    cfg = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    for flag in args.ablate or []:
        cfg = dataclasses.replace(cfg, **{flag: True})
    gen_spec = GeneratorSpec.from_dict(_read_json(args.gen_spec)) if args.gen_spec else None
    disc_spec = (DiscriminatorSpec.from_dict(_read_json(args.disc_spec))
                 if args.disc_spec else None)

    report = train(dataset, cfg, gen_spec=gen_spec, disc_spec=disc_spec,
                   out_dir=args.out, resume=args.resume)

    _write_json(os.path.join(args.out, "train_report.json"), report.to_dict())
    if report.epochs_run > 0:
        epochs = list(range(report.start_epoch,
                            report.start_epoch + report.epochs_run))
        figure_training(epochs, report.loss_d, report.loss_g, report.loss_rec,
                        report.loss_adv, report.val_epochs, report.val_mse,
                        os.path.join(args.out, "train_curves.png"))
        print(f"trained epochs {epochs[0]}..{epochs[-1]}: "
              f"loss_g {report.loss_g[-1]:.6f}, loss_rec {report.loss_rec[-1]:.6f}")
    else:
        print("no epochs to run")
    if report.best_epoch is not None:
        print(f"best validation MSE {report.best_val_mse:.6f} at epoch {report.best_epoch}")
    print(f"checkpoints under {args.out}")
    return 0


# ---------------------------------------------------------------------- eval


def _cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    stem = _checkpoint_stem(args.checkpoint)
    gen, cfg = _load_generator(stem, dataset)
    x, y = _model_inputs(dataset, args.split, cfg)
    if y.shape[0] == 0:
        raise DataError(f"split {args.split!r} holds no frames")
    pred = predict_batches(gen, x, use_observation=not cfg.drop_obconn)

    rows = [("model", evaluate(pred, y, threshold=args.threshold))]
    if args.baselines:
        rows.append(("partial", evaluate_baseline("partial", dataset,
                                                  split=args.split,
                                                  threshold=args.threshold)))
        rows.append(("accumulated", evaluate_baseline("accumulated", dataset,
                                                      split=args.split,
                                                      threshold=args.threshold)))
    print(report_table(rows))

    json_path = args.out if args.out else stem + ".eval.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report_json(rows))
        fh.write("\n")
    png_path = (json_path[:-5] if json_path.endswith(".json") else json_path) + ".png"
    figure_metrics([(name, rep.to_dict()) for name, rep in rows], png_path)
    print(f"wrote {json_path} and {png_path}")
    return 0


# ------------------------------------------------------------------- predict


def _cmd_predict(args) -> int:
    dataset = read_dataset(args.data)
    stem = _checkpoint_stem(args.checkpoint)
    gen, cfg = _load_generator(stem, dataset)
    idx = dataset.split_indices(args.split)
    if not (0 <= args.frame < idx.shape[0]):
        raise DataError(
            f"frame {args.frame} out of range; split {args.split!r} has "
            f"frames in [0, {idx.shape[0]})")
    g = int(idx[args.frame])
    x = np.concatenate([dataset.xbar[g], dataset.xtilde[g]], axis=0)
    x = apply_ablation(cfg, dataset.schema, x)
    xbar_eff = x[: dataset.schema.c_partial]
    xtilde_eff = x[dataset.schema.c_partial :]
    truth = dataset.y[g]
    pred = predict_batches(gen, x[None],
                           use_observation=not cfg.drop_obconn)[0]

    if args.mode == "ascii":
        spec = RenderSpec("ascii", args.scale)
        for title, arr, kind in (
            ("accumulated input", xtilde_eff, "accumulated"),
            ("partial input", xbar_eff, "partial"),
            ("prediction", pred, "truth"),
            ("ground truth", truth, "truth"),
        ):
            print(f"--- {title} ---")
            print(render_grid(arr, dataset.schema, kind, spec))
        return 0

    if args.out is None:
        raise _UsageError(f"--out is required for mode {args.mode}")
    if args.mode == "png":
        figure_prediction(xtilde_eff, xbar_eff, pred, truth, dataset.schema,
                          args.out)
        print(f"wrote {args.out}")
        return 0

    spec = RenderSpec("pgm", args.scale)
    base = args.out[:-4] if args.out.endswith(".pgm") else args.out
    written = []
    for suffix, arr, kind in (
        ("acc", xtilde_eff, "accumulated"),
        ("par", xbar_eff, "partial"),
        ("pred", pred, "truth"),
        ("truth", truth, "truth"),
    ):
        path = f"{base}_{suffix}.pgm"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_grid(arr, dataset.schema, kind, spec))
        written.append(path)
    print("wrote " + ", ".join(written))
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> _Parser:
    parser = _Parser(prog="defog",
                     description="Fog-of-war state prediction toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="simulate episodes and write a dataset")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gen-spec", help="generator spec JSON")
    p.add_argument("--disc-spec", help="discriminator spec JSON")
    p.add_argument("--ablate", action="append", choices=ABLATION_FLAGS,
                   help="switch off one component (repeatable)")
    p.add_argument("--resume", action="store_true",
                   help="continue from the rolling checkpoint in --out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint stem (or one of the pair's files)")
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="existence threshold on predicted counts")
    p.add_argument("--baselines", action="store_true",
                   help="add the partial and accumulated baseline rows")
    p.add_argument("--out", help="report JSON path (figure lands beside it)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="render one frame's prediction")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, required=True,
                   help="frame index within the split")
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("png", "ascii", "pgm"), default="png")
    p.add_argument("--out", help="output path (png figure or pgm basename)")
    p.add_argument("--scale", type=int, default=1,
                   help="cell magnification for ascii/pgm")
    p.set_defaults(func=_cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"defog: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"defog: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"defog: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"defog: invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
