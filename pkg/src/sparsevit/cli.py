"""Command-line entry point: ``sparsevit {train,prune,eval,sweep,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import checkpoint, gradcheck
from .config import RunConfig, load_config
from .data import Dataset, load_dataset
from .errors import ConfigError, FormatError
from .prune import apply_prune, prune_count
from .report import (mean_result, sweep_markdown, write_manifest, write_sweep_csv,
                     write_sweep_runs_csv)
from .train import evaluate, sweep, train, write_metrics_csv
from .vit import SparsePosition, check_params, init_params

log = logging.getLogger("sparsevit")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        out["train.seed"] = str(args.seed)
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args)).resolved()


def _fingerprint(*datasets: Dataset) -> str:
    h = hashlib.sha256()
    for d in datasets:
        h.update(d.fingerprint().encode())
    return h.hexdigest()


def _threads() -> int:
    text = os.environ.get("SPVT_THREADS", "1")
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"SPVT_THREADS must be an integer, got {text!r}") from None
    if n < 1:
        raise ConfigError("SPVT_THREADS must be >= 1")
    return n


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    train_set, test_set = load_dataset(cfg.dataset())
    vit, tc = cfg.vit(), cfg.train()
    params = init_params(vit, tc.seed)
    trained, records = train(params, train_set, test_set, vit, tc)
    out.mkdir(parents=True, exist_ok=True)
    raw = checkpoint.save_checkpoint(out / "model.spvt", trained)
    write_metrics_csv(records, out / "metrics.csv", with_time=cfg["train.record_time"])
    write_manifest(out / "manifest.json", "train", args.argv,
                   cfg.as_text_dict(), seed=tc.seed,
                   dataset_fingerprint=_fingerprint(train_set, test_set),
                   checkpoint_out=checkpoint.content_hash(raw),
                   epoch_seconds=[r.seconds for r in records])
    last = records[-1]
    print(f"epochs={len(records)} train_acc={last.train_acc:.17g} test_acc={last.test_acc:.17g}")
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = _config(args)
    ratio = args.ratio if args.ratio is not None else cfg["prune.ratio"]
    if ratio is None:
        raise ConfigError("no pruning ratio: pass --ratio or set prune.ratio")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"--ratio must lie in (0, 1), got {ratio}")
    raw_in = Path(args.input).read_bytes()
    params = checkpoint.loads(raw_in)
    prune_count(ratio, params.numel())
    pruned, _, report = apply_prune(params, ratio, cfg["prune.exclude"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    raw_out = checkpoint.save_checkpoint(out, pruned)
    record = report.record()
    with open(args.report or out.with_suffix(".report.jsonl"), "w") as fh:
        fh.write(json.dumps(dict(record, per_tensor=report.breakdown())) + "\n")
    write_manifest(out.with_suffix(".manifest.json"), "prune",
                   args.argv, cfg.as_text_dict(),
                   checkpoint_in=checkpoint.content_hash(raw_in),
                   checkpoint_out=checkpoint.content_hash(raw_out), report=record)
    print(json.dumps(record))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    vit = cfg.vit()
    raw = Path(args.input).read_bytes()
    params = checkpoint.loads(raw)
    check_params(params, vit)
    train_set, test_set = load_dataset(cfg.dataset())
    dataset = test_set if args.split == "test" else train_set
    acc = evaluate(params, dataset, vit)
    results = Path(args.results) if args.results else Path(args.input).parent / "results.csv"
    new = not results.exists()
    with open(results, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["checkpoint", "split", "accuracy"])
        w.writerow([args.input, args.split, format(acc, ".17g")])
    write_manifest(results.with_suffix(".manifest.json"), "eval",
                   args.argv, cfg.as_text_dict(),
                   dataset_fingerprint=_fingerprint(train_set, test_set),
                   checkpoint_in=checkpoint.content_hash(raw), accuracy=acc)
    print(f"accuracy={acc:.17g}")
    return EXIT_OK


def _sweep_job(job):
    vit, tc, train_set, test_set, ratios, with_sparse, exclude = job
    return sweep(vit, tc, train_set, test_set, ratios, with_sparse, exclude)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    vit, base = cfg.vit(), cfg.train()
    ratios = cfg["sweep.ratios"]
    for r in ratios:
        if not 0 < r < 1:
            raise ConfigError(f"sweep.ratios entry {r} outside (0, 1)")
    seeds = cfg["sweep.seeds"] or (base.seed,)
    train_set, test_set = load_dataset(cfg.dataset())
    jobs, keys = [], []
    for seed in seeds:
        for with_sparse in (True, False):
            # both arms share a seed: identical init and batch order
            jobs.append((vit, replace(base, seed=seed), train_set, test_set, ratios,
                         with_sparse, cfg["prune.exclude"]))
            keys.append(seed)
    threads = min(_threads(), len(jobs))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = list(zip(keys, results))
    for seed, res in runs:
        write_metrics_csv(res.records, out / f"metrics_{res.arm}_seed{seed}.csv")
    write_sweep_runs_csv(out / "sweep_runs.csv", runs)
    sparse_mean = mean_result([r for r in results if r.arm == "sparse"])
    base_mean = mean_result([r for r in results if r.arm == "baseline"])
    write_sweep_csv(out / "sweep.csv", sparse_mean, base_mean)
    text, mean_diff = sweep_markdown(sparse_mean, base_mean, cfg["sparse.position"], seeds)
    (out / "sweep.md").write_text(text)
    write_manifest(out / "manifest.json", "sweep",
                   args.argv, cfg.as_text_dict(),
                   seed=base.seed, dataset_fingerprint=_fingerprint(train_set, test_set),
                   seeds=list(seeds), mean_difference=mean_diff)
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    vit = cfg.vit()
    failed = []
    for position in SparsePosition:
        res = gradcheck.check_position(position, vit, seed=cfg["train.seed"], step=args.step,
                                       samples=args.samples, batch=args.batch)
        print(f"position={position.value} max_rel_err={res.max_rel_err:.3e}", flush=True)
        if not res.max_rel_err < args.tol:
            failed.append(f"{position.value} (worst parameter {res.worst_param})")
    if failed:
        print("gradcheck failed at: " + "; ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsevit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", help="key = value config file or a run manifest")
        p.add_argument("--seed", type=int, help="overrides train.seed")
        p.add_argument("--out", help=out_help)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        return p

    p = common(sub.add_parser("train", help="train a model"))
    p.set_defaults(func=cmd_train, need_out=True)

    p = common(sub.add_parser("prune", help="global magnitude pruning of a checkpoint"),
               "pruned checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="checkpoint to prune")
    p.add_argument("--ratio", type=float, help="fraction of parameters to zero, in (0, 1)")
    p.add_argument("--report", help="JSON-lines report path (default: next to --out)")
    p.set_defaults(func=cmd_prune, need_out=True)

    p = common(sub.add_parser("eval", help="accuracy of a checkpoint"))
    p.add_argument("--in", dest="input", required=True, help="checkpoint to evaluate")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--results", help="CSV to append to (default: results.csv beside --in)")
    p.set_defaults(func=cmd_eval, need_out=False)

    p = common(sub.add_parser("sweep", help="sparse-then-prune vs prune-only"))
    p.set_defaults(func=cmd_sweep, need_out=True)

    p = common(sub.add_parser("gradcheck", help="finite-difference check at every hook"))
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=4, help="coordinates checked per tensor")
    p.add_argument("--batch", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck, need_out=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.need_out and not args.out:
        print(f"error: {args.command} requires --out", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
