"""Command-line entry point.

Commands: gen-data, train, eval, predict, ablate, bench-wkv, gradcheck.
Exit code 0 on success; on failure a single machine-parseable line
``error: <Kind>: <message>`` goes to stderr and the exit code is nonzero.
``URWKV_THREADS`` caps worker threads used for data-file I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import kernels
from .config import ConfigError, config_echo, load_config, parse_config_text
from .data import DataError, gen_synthetic, load_dataset, write_dataset, write_png
from .model import build_model, load_checkpoint
from .train import evaluate, predict_masks, predict_probs, train
from .wkv import bench_wkv, loglog_slope, rows_to_csv


def worker_count():
    raw = os.environ.get("URWKV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"URWKV_THREADS must be an integer, got {raw!r}")


def _resolve_configs(args):
    overrides = args.override or []
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    return parse_config_text("", overrides)


def _echo_configs(out_dir, mcfg, tcfg, extra=()):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_echo(mcfg, tcfg, extra))


def cmd_gen_data(args):
    samples = gen_synthetic(args.count, args.size, args.size, args.seed)
    if not samples:
        print("warning: count is 0, writing an empty manifest", file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(samples, args.out, train_fraction=args.train_fraction)
    n_train = int(round(len(samples) * args.train_fraction))
    print(f"wrote {len(samples)} pairs to {args.out} "
          f"(train {n_train} / test {len(samples) - n_train})")
    return 0


def cmd_train(args):
    mcfg, tcfg = _resolve_configs(args)
    train_set = load_dataset(args.data, split="train", size=mcfg.image_size)
    test_set = load_dataset(args.data, split="test", size=mcfg.image_size)
    if not train_set:
        raise DataError(f"no training samples under {args.data}")
    _echo_configs(args.out, mcfg, tcfg, extra=[("dataset", args.data)])
    model = build_model(mcfg, seed=tcfg.seed)
    history, best, best_path = train(model, train_set, test_set, tcfg,
                                     out_dir=args.out, quiet=args.quiet)
    print(f"best test dsc {best:.4f} after {len(history)} epochs; "
          f"checkpoint: {best_path}")
    return 0


def _load_model_for(args):
    expect = None
    if getattr(args, "config", None):
        expect, _ = _resolve_configs(args)
    model, step = load_checkpoint(args.ckpt, expect_cfg=expect)
    return model, step


def cmd_eval(args):
    model, _ = _load_model_for(args)
    samples = load_dataset(args.data, split=args.split, size=model.cfg.image_size)
    if not samples:
        raise DataError(f"no samples for split {args.split!r} under {args.data}")
    rep = evaluate(model, samples, batch_size=args.batch_size)
    print(f"samples: {rep.samples}")
    for c, (d, i) in enumerate(zip(rep.per_class_dsc, rep.per_class_iou)):
        print(f"class {c}: dsc {d:.6f} iou {i:.6f}")
    print(f"foreground mean: dsc {rep.fg_dsc:.6f} iou {rep.fg_iou:.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("class,dsc,iou\n")
            for c, (d, i) in enumerate(zip(rep.per_class_dsc, rep.per_class_iou)):
                fh.write(f"{c},{d:.6f},{i:.6f}\n")
            fh.write(f"foreground_mean,{rep.fg_dsc:.6f},{rep.fg_iou:.6f}\n")
        print(f"wrote {path}")
    return 0


def cmd_predict(args):
    model, _ = _load_model_for(args)
    samples = load_dataset(args.data, split=args.split, size=model.cfg.image_size)
    if not samples:
        raise DataError(f"no samples for split {args.split!r} under {args.data}")
    os.makedirs(args.out, exist_ok=True)
    jobs = []
    for idx in range(0, len(samples), args.batch_size):
        chunk = samples[idx:idx + args.batch_size]
        imgs = np.stack([s.image for s in chunk])
        preds = predict_masks(model, imgs)
        probs = predict_probs(model, imgs) if args.probs else None
        for j, pred in enumerate(preds):
            stem = f"{idx + j:05d}"
            jobs.append((os.path.join(args.out, stem + "_mask.png"),
                         (pred * (255 // max(1, model.cfg.classes - 1))).astype(np.uint8)))
            if probs is not None:
                for c in range(model.cfg.classes):
                    jobs.append((os.path.join(args.out, f"{stem}_prob{c}.png"),
                                 probs[j, c]))
    nw = worker_count()
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            list(pool.map(lambda job: write_png(*job), jobs))
    else:
        for job in jobs:
            write_png(*job)
    print(f"wrote {len(jobs)} files to {args.out}")
    return 0


ABLATION_ROWS = (
    ("base", False, False),
    ("fawa", True, False),
    ("mscf", False, True),
    ("fawa+mscf", True, True),
)


def cmd_ablate(args):
    mcfg, tcfg = _resolve_configs(args)
    train_set = load_dataset(args.data, split="train", size=mcfg.image_size)
    test_set = load_dataset(args.data, split="test", size=mcfg.image_size)
    if not train_set:
        raise DataError(f"no training samples under {args.data}")
    os.makedirs(args.out, exist_ok=True)
    results = []
    for name, use_fawa, use_mscf in ABLATION_ROWS:
        variant = "dagger" if (use_fawa or use_mscf) else "base"
        cfg = replace(mcfg, variant=variant, fawa=use_fawa, mscf=use_mscf).validate()
        run_dir = os.path.join(args.out, name.replace("+", "_"))
        _echo_configs(run_dir, cfg, tcfg, extra=[("dataset", args.data)])
        model = build_model(cfg, seed=tcfg.seed)
        history, best, _ = train(model, train_set, test_set, tcfg,
                                 out_dir=run_dir, quiet=True)
        rep_iou = max(h.iou for h in history)
        results.append((name, use_fawa, use_mscf, best, rep_iou))
        print(f"{name}: dsc {best:.4f} iou {rep_iou:.4f}")
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("config,fawa,mscf,dsc,iou\n")
        for name, fa, ms, dsc, iou in results:
            fh.write(f"{name},{int(fa)},{int(ms)},{dsc:.6f},{iou:.6f}\n")
    md_path = os.path.join(args.out, "ablation.md")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("| config | FAWA | MSCF | DSC | IoU |\n")
        fh.write("|---|---|---|---|---|\n")
        for name, fa, ms, dsc, iou in results:
            check = lambda b: "yes" if b else "-"
            fh.write(f"| {name} | {check(fa)} | {check(ms)} | {dsc:.4f} | {iou:.4f} |\n")
    print(f"wrote {csv_path} and {md_path}")
    return 0


def cmd_bench_wkv(args):
    t_list = [int(x) for x in args.t_list.split(",")]
    backends = ["pure", "ext"] if args.backend == "both" else [args.backend]
    all_rows = []
    for backend in backends:
        rows = bench_wkv(t_list, args.channels, args.reps, backend=backend)
        if len(backends) > 1:
            rows = [(f"{form}[{backend}]", T, C, ns) for form, T, C, ns in rows]
        all_rows.extend(rows)
    csv_text = rows_to_csv(all_rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    if len(t_list) >= 2:
        for backend in backends:
            suffix = f"[{backend}]" if len(backends) > 1 else ""
            for form in ("naive", "scan"):
                slope = loglog_slope(all_rows, form + suffix)
                print(f"log-log slope {form}{suffix}: {slope:.3f}")
    return 0


def cmd_gradcheck(args):
    from .checks import run_all_checks
    failures = run_all_checks(verbose=True)
    if failures:
        print(f"{failures} gradient checks FAILED")
        return 1
    print("all gradient checks passed")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="urwkv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--override", action="append", metavar="KEY=VALUE")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out")
    e.add_argument("--config")
    e.add_argument("--override", action="append", metavar="KEY=VALUE")
    e.add_argument("--batch-size", type=int, default=8)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write argmax masks (and probabilities)")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--split", default="test")
    pr.add_argument("--probs", action="store_true")
    pr.add_argument("--config")
    pr.add_argument("--override", action="append", metavar="KEY=VALUE")
    pr.add_argument("--batch-size", type=int, default=8)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="run the 2x2 fawa/mscf ablation grid")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--override", action="append", metavar="KEY=VALUE")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench-wkv", help="benchmark the attention kernels")
    b.add_argument("--t-list", default="256,512,1024,2048,4096")
    b.add_argument("--channels", type=int, default=8)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--backend", default="active",
                   choices=["active", "pure", "ext", "both"])
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_wkv)

    gc = sub.add_parser("gradcheck", help="run the finite-difference suite")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else still yields one parseable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
