"""Command-line surface: prepare, train-coarse, train-fine, evaluate,
audit-params, export.

Configuration is a flat "key = value" text file mirroring TrainConfig
field names; --set KEY=VALUE flags override the file, which overrides
the documented defaults. The effective config is echoed to the log.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, evalkit
from .trainer import (
    Checkpoint,
    TrainConfig,
    config_from_mapping,
    load_checkpoint,
    propagate_model,
    save_checkpoint,
    train_coarse,
    train_fine,
)

logger = logging.getLogger("c2frec")

CONFIG_ENV_VAR = "C2FREC_CONFIG"


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(Path(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _parse_kv(pairs: list[str], what: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"{what}: expected KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(args) -> TrainConfig:
    values: dict[str, str] = {}
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        values.update(parse_config_file(config_path))
    values.update(_parse_kv(getattr(args, "set", None) or [], "--set"))
    cfg = config_from_mapping(values)
    logger.info("effective config: %s", cfg.to_dict())
    return cfg


def _cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.synthetic is not None:
        params = _parse_kv(args.synthetic, "--synthetic")
        data = corpus.make_synthetic_interactions(
            users=int(params.get("users", 200)),
            items=int(params.get("items", 100)),
            blocks=int(params.get("blocks", 8)),
            density=float(params.get("density", 0.5)),
            seed=int(params.get("seed", 0)),
        )
        corpus.write_split_files(data, out)
    else:
        if not args.train:
            raise ValueError("prepare: need --train FILE or --synthetic KEY=VALUE ...")
        out.mkdir(parents=True, exist_ok=True)
        data = corpus.load_interactions(
            args.train,
            args.format,
            validation_path=args.validation,
            test_path=args.test,
            mapping_dir=out,
        )
        corpus.write_split_files(data, out)
    stats = corpus.dataset_stats(data)
    logger.info("prepared dataset: %s", stats)
    print(
        f"users={stats['num_users']} items={stats['num_items']} "
        f"interactions={stats['num_interactions']} density={stats['density']:.6f}"
    )
    return 0


def _cmd_train_coarse(args) -> int:
    cfg = build_config(args)
    data = corpus.load_split_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state, log = train_coarse(data, cfg, checkpoint_dir=out)
    ck = Checkpoint(
        stage="coarse",
        config=cfg,
        num_users=data.num_users,
        num_items=data.num_items,
        coarse=state,
        epoch=log.best_epoch,
        best_metric=log.best_val_ndcg20,
    )
    save_checkpoint(ck, out / "coarse.ckpt")
    log.to_csv(out / "coarse_log.csv")
    print(f"coarse stage done: best val NDCG@20 = {log.best_val_ndcg20:.6f}")
    return 0


def _cmd_train_fine(args) -> int:
    cfg = build_config(args)
    data = corpus.load_split_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = load_checkpoint(args.coarse_checkpoint)
    state, log = train_fine(data, base.coarse, cfg, checkpoint_dir=out)
    ck = Checkpoint(
        stage="fine",
        config=cfg,
        num_users=data.num_users,
        num_items=data.num_items,
        coarse=base.coarse,
        fine=state,
        epoch=log.best_epoch,
        best_metric=log.best_val_ndcg20,
    )
    save_checkpoint(ck, out / "fine.ckpt")
    log.to_csv(out / "fine_log.csv")
    print(f"fine stage done: best val NDCG@20 = {log.best_val_ndcg20:.6f}")
    return 0


def _cmd_evaluate(args) -> int:
    data = corpus.load_split_dir(args.data)
    ck = load_checkpoint(args.checkpoint)
    cutoffs = tuple(int(c) for c in args.cutoffs.split(","))
    prop = propagate_model(ck, data)
    metrics = evalkit.evaluate(prop.h_full, data, cutoffs=cutoffs, split=args.split)
    evalkit.metrics_to_csv(metrics, args.out)
    for n in sorted(metrics):
        print(f"NDCG@{n}={metrics[n]['ndcg']:.6f} Recall@{n}={metrics[n]['recall']:.6f}")
    return 0


def _cmd_audit_params(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    report = evalkit.audit_params(ck.coarse, ck.fine)
    text = evalkit.audit_to_text(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_export(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "e_meta_c.txt", ck.coarse.e_meta_c)
    np.savetxt(out / "s_c_offsets.txt", ck.coarse.s_c.row_offsets, fmt="%d")
    np.savetxt(out / "s_c_indices.txt", ck.coarse.s_c.col_indices, fmt="%d")
    np.savetxt(out / "s_c_values.txt", ck.coarse.s_c.values)
    if ck.fine is not None:
        np.savetxt(out / "e_meta_r.txt", ck.fine.e_meta_r)
        np.savetxt(out / "s_r_offsets.txt", ck.fine.s_r.row_offsets, fmt="%d")
        np.savetxt(out / "s_r_indices.txt", ck.fine.s_r.col_indices, fmt="%d")
        np.savetxt(out / "s_r_values.txt", ck.fine.s_r.values)
    print(f"exported arrays to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2frec",
        description="Coarse-to-fine lightweight meta-embedding recommender",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load splits or generate a synthetic corpus")
    p.add_argument("--train", help="train split file")
    p.add_argument("--validation", help="validation split file")
    p.add_argument("--test", help="test split file")
    p.add_argument("--format", default="pair-per-line", choices=corpus.FORMATS)
    p.add_argument(
        "--synthetic",
        nargs="*",
        metavar="KEY=VALUE",
        help="generate a clustered corpus (users=, items=, blocks=, density=, seed=)",
    )
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_prepare)

    for name, fn in (("train-coarse", _cmd_train_coarse), ("train-fine", _cmd_train_fine)):
        p = sub.add_parser(name, help=f"run the {name.split('-')[1]} training stage")
        p.add_argument("--data", required=True, help="dataset directory from prepare")
        p.add_argument("--config", help=f"config file (or ${CONFIG_ENV_VAR})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.add_argument("--out", required=True, help="run directory for checkpoint + log")
        if name == "train-fine":
            p.add_argument("--coarse-checkpoint", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="rank and score a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cutoffs", default="5,10,20")
    p.add_argument("--split", default="test", choices=["test", "validation"])
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("audit-params", help="stored-parameter budget of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_audit_params)

    p = sub.add_parser("export", help="dump checkpoint arrays as plain text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
