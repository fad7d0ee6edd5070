"""Command-line surface: generate / stats / train / eval / export-features.

Every command writes a JSON manifest beside its outputs (command, resolved
config, seed, input content hashes, output paths, timestamps). Primary
outputs are byte-stable for a fixed seed; only manifest timestamps vary.

Exit codes: 0 success, 2 usage or configuration, 3 data or precondition,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dump_config, load_config
from .data import generate, read_dataset, write_dataset
from .errors import ConfigError, DsenError, LabelError, NumericError
from .model import DsenNetwork
from .signal import BAND_ORDER
from .synchrony import pair_features, synchrony_table
from .training import Trainer, ablation_csv, ablation_suite, evaluate, prepare_inputs
from .autodiff import Tensor, no_grad

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_ABLATE_FLAGS = {
    "no_cca": "no_cca",
    "no_triplet": "no_triplet",
    "no_attention": "no_attention",
    "raw": "raw_input",
}


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path, command, seed, config: RunConfig | None,
                    inputs: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "seed": seed,
        "config": dump_config(config) if config is not None else None,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "created_unix": time.time(),
        "version": __version__,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _resolve_seed(arg_seed, config_seed: int) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("DSEN_SEED")
    if env is not None:
        return int(env)
    return config_seed


def _load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    if not Path(path).exists():
        raise FileNotFoundError(f"config file {path} not found")
    return load_config(path)


def _require_dataset(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset {path} not found")
    return read_dataset(path)


# -- commands -------------------------------------------------------------


def _cmd_generate(args) -> int:
    cfg = _load_run_config(args.config)
    seed = _resolve_seed(args.seed, cfg.generator.seed)
    cfg = RunConfig(
        generator=dataclasses.replace(cfg.generator, seed=seed),
        model=cfg.model,
        train=cfg.train,
    )
    if args.print_config:
        print(dump_config(cfg))
        return EXIT_OK
    if args.out is None:
        raise ConfigError("generate requires --out")
    out = Path(args.out)
    outputs = []
    if args.rho_sweep:
        rhos = [float(r) for r in args.rho_sweep.split(",")]
        for rho in rhos:
            gcfg = dataclasses.replace(cfg.generator, coupling_rho=rho)
            samples = generate(gcfg)
            target = out.with_name(f"{out.stem}_rho{rho:g}{out.suffix or '.dyad'}")
            write_dataset(samples, target)
            outputs.append(target)
    else:
        samples = generate(cfg.generator)
        write_dataset(samples, out)
        outputs.append(out)
    _write_manifest(outputs[0].with_suffix(".manifest.json"), "generate", seed,
                    cfg, [], outputs)
    return EXIT_OK


def _cmd_stats(args) -> int:
    samples = _require_dataset(args.dataset)
    bands = [b.strip() for b in args.bands.split(",")]
    for band in bands:
        if band not in BAND_ORDER:
            raise ConfigError(f"unknown band '{band}' (choose from {BAND_ORDER})")
    if args.iv == "relation":
        grouping = lambda s: s.label  # noqa: E731
    elif args.iv == "gender":
        grouping = lambda s: s.gender_match  # noqa: E731
    else:
        raise ConfigError(f"unknown independent variable '{args.iv}'")

    rate = _dataset_rate(samples)
    items = [
        (s, pair_features(s, bands=bands, sample_rate_hz=rate,
                          per_window=args.per_window))
        for s in samples
    ]
    report = synchrony_table(items, grouping, iv_name=args.iv, bands=bands)
    report.write_csv(args.out)
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), "stats",
                    None, None, [args.dataset], [args.out])
    return EXIT_OK


def _dataset_rate(samples) -> float:
    seg = samples[0].x.segments[0]
    return seg.shape[1] / samples[0].x.window_seconds


def _cmd_train(args) -> int:
    samples = _require_dataset(args.dataset)
    cfg = _load_run_config(args.config)
    seed = _resolve_seed(args.seed, cfg.train.seed)
    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    if args.ablate:
        if args.ablate not in _ABLATE_FLAGS:
            raise ConfigError(
                f"unknown ablation '{args.ablate}' (choose from {sorted(_ABLATE_FLAGS)})"
            )
        train_cfg = dataclasses.replace(train_cfg, **{_ABLATE_FLAGS[args.ablate]: True})
    cfg = RunConfig(generator=cfg.generator, model=cfg.model, train=train_cfg)

    if args.print_config:
        print(dump_config(cfg))
        return EXIT_OK
    if args.out is None:
        raise ConfigError("train requires --out")
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(samples, cfg.model, train_cfg)
    log_path = run_dir / "epoch_log.csv"
    final_path = run_dir / "checkpoint_final.ckpt"
    best_path = run_dir / "checkpoint_best.ckpt"

    if args.resume:
        if not final_path.exists():
            raise FileNotFoundError(f"no checkpoint to resume in {run_dir}")
        trainer.load_checkpoint(final_path)
    else:
        for stale in (log_path, final_path, best_path):
            if stale.exists():
                stale.unlink()

    (run_dir / "config.txt").write_text(dump_config(cfg))
    with open(run_dir / "split.json", "w") as fh:
        json.dump(
            {
                "train_pairs": sorted({s.pair_id for s in trainer.train_samples}),
                "test_pairs": sorted({s.pair_id for s in trainer.test_samples}),
                "seed": seed,
            },
            fh,
            indent=2,
        )

    best_loss = float("inf")
    while trainer.epoch < train_cfg.max_epochs:
        trainer.fit(max_epochs=trainer.epoch + 1, log_path=log_path)
        epoch_loss = trainer.history[-1]["loss_combined"]
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            trainer.save_checkpoint(best_path)
    trainer.save_checkpoint(final_path)
    _write_manifest(run_dir / "manifest.json", "train", seed, cfg,
                    [args.dataset], [log_path, final_path, best_path])
    return EXIT_OK


def _load_run(run_dir, samples):
    run_dir = Path(run_dir)
    ckpt = run_dir / "checkpoint_final.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt}")
    cfg = load_config(run_dir / "config.txt")
    with open(run_dir / "split.json") as fh:
        split = json.load(fh)
    test_ids = set(split["test_pairs"])
    test_samples = [s for s in samples if s.pair_id in test_ids]
    trainer = Trainer(samples, cfg.model, cfg.train)
    trainer.load_checkpoint(ckpt)
    return cfg, trainer, test_samples


def _cmd_eval(args) -> int:
    samples = _require_dataset(args.dataset)
    cfg, trainer, test_samples = _load_run(args.run, samples)
    result = evaluate(trainer.net, test_samples, raw=cfg.train.raw_input,
                      no_attention=cfg.train.no_attention)
    (tn, fp), (fn, tp) = result.confusion
    lines = [
        "accuracy,f1,tn,fp,fn,tp,pair_accuracy,pair_f1",
        f"{result.accuracy:.6g},{result.f1:.6g},{tn},{fp},{fn},{tp},"
        f"{result.pair_accuracy:.6g},{result.pair_f1:.6g}",
    ]
    Path(args.out).write_text("\n".join(lines) + "\n")
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), "eval",
                    cfg.train.seed, cfg, [args.dataset], [args.out])
    return EXIT_OK


def _cmd_export_features(args) -> int:
    samples = _require_dataset(args.dataset)
    cfg, trainer, test_samples = _load_run(args.run, samples)
    if not test_samples:
        raise DsenError("run has an empty test set")
    inputs = prepare_inputs(test_samples, raw=cfg.train.raw_input)
    fused_dim = cfg.model.fused_dim
    rows = []
    with no_grad():
        for lo in range(0, len(test_samples), 64):
            hi = min(lo + 64, len(test_samples))
            h_x = trainer.net.features(Tensor(inputs[lo:hi, 0]))
            h_y = trainer.net.features(Tensor(inputs[lo:hi, 1]))
            fused = trainer.net.fuse(h_x, h_y,
                                     use_attention=not cfg.train.no_attention)
            rows.append(fused.data)
    fused_all = np.concatenate(rows)
    header = "pair_id,label," + ",".join(f"f{i:03d}" for i in range(fused_dim))
    lines = [header]
    for sample, vec in zip(test_samples, fused_all):
        values = ",".join(f"{v:.10g}" for v in vec)
        lines.append(f"{sample.pair_id},{sample.label},{values}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    _write_manifest(Path(args.out).with_suffix(".manifest.json"),
                    "export-features", cfg.train.seed, cfg,
                    [args.dataset], [args.out])
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsen",
        description="Dyadic-EEG synchrony statistics and relationship classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic dyadic dataset")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", default=None)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--rho-sweep", default=None,
                       help="comma list of coupling_rho values, one file each")
    p_gen.add_argument("--print-config", action="store_true")
    p_gen.set_defaults(func=_cmd_generate)

    p_stats = sub.add_parser("stats", help="band-wise ISC/PLV group tests")
    p_stats.add_argument("--dataset", required=True)
    p_stats.add_argument("--bands", default=",".join(BAND_ORDER))
    p_stats.add_argument("--iv", default="relation", choices=None)
    p_stats.add_argument("--per-window", action="store_true")
    p_stats.add_argument("--out", required=True)
    p_stats.set_defaults(func=_cmd_stats)

    p_train = sub.add_parser("train", help="train the relationship classifier")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--ablate", default=None,
                         help="no_cca | no_triplet | no_attention | raw")
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--resume", action="store_true")
    p_train.add_argument("--print-config", action="store_true")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a training run")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_exp = sub.add_parser("export-features", help="dump fused test features")
    p_exp.add_argument("--run", required=True)
    p_exp.add_argument("--dataset", required=True)
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=_cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, LabelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DsenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
