"""Command-line entry point: ``haap <subcommand> [flags]``.

Every primary output goes under ``--out`` with a fixed filename. Wall-clock
numbers (latency, session times) are kept in ``timing.tsv`` and the log
stream so the other files are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from haap import checkpoint, plots
from haap.charset import TRAIN94
from haap.datagen import SPLITS, Split, generate, read_split, render
from haap.inference import DecodeOptions, ar_decode, cost_report, evaluate, latency_ms
from haap.masks import InvalidPermutation, Permutation, format_mask, mask_from_permutation, validate
from haap.model import HAAP, ModelConfig
from haap.runconfig import ConfigError, RunConfig
from haap.runconfig import load as load_config
from haap.training import MODE_K, TrainConfig, multi_session, train, write_metrics

log = logging.getLogger("haap")

CHECKPOINT = "model.ckpt"
IR_RANGE = range(5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, *, mode=False, cha=False, ir=False, sessions=False):
    p.add_argument("--config", help="INI run config; defaults apply when omitted")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--out", help="output directory; overrides [output] dir")
    if mode:
        p.add_argument("--mode", choices=sorted(MODE_K), help="permutation mode")
    if cha:
        p.add_argument("--cha", choices=("on", "off"), help="two-stream decoder on or single-stream off")
    if ir:
        p.add_argument("--ir", type=int, default=0, help="refinement rounds 0..4")
    if sessions:
        p.add_argument("--sessions", type=int, default=5, help="training sessions per mode for the stability report")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="haap", description="Adaptive-permutation scene text recognizer at desk scale.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render the synthetic corpus")
    _common(p)
    p.add_argument("--count", type=int, help="overrides [data] count")

    p = sub.add_parser("train", help="train one model")
    _common(p, mode=True, cha=True)
    p.add_argument("--data", help="dataset directory; overrides [data] path")

    p = sub.add_parser("eval", help="word accuracy, cost and latency of a checkpoint")
    _common(p, ir=True)
    p.add_argument("--ckpt", help=f"checkpoint path (default <out>/{CHECKPOINT})")
    p.add_argument("--data", help="dataset directory; overrides [data] path")
    p.add_argument("--latency-repeats", type=int, default=100)

    p = sub.add_parser("decode", help="decode one image")
    _common(p, ir=True)
    p.add_argument("--ckpt", help=f"checkpoint path (default <out>/{CHECKPOINT})")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--word", help="render this word and decode it")
    src.add_argument("--index", type=int, help="decode sample INDEX of --split")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--data", help="dataset directory; overrides [data] path")
    p.add_argument("--trace", action="store_true", help="print per-step class and confidence")

    p = sub.add_parser("masks", help="print an attention mask")
    p.add_argument("--perm", help="1-based order, e.g. 2,1,3")
    p.add_argument("--kind", choices=("query", "content"), default="query")
    p.add_argument("--ipn", metavar="CKPT", help="use the adaptive permutation learned in this checkpoint")

    p = sub.add_parser("ablate", help="mode grid, CHA x refinement grid and stability report")
    _common(p, sessions=True)
    p.add_argument("--data", help="dataset directory; overrides [data] path")

    p = sub.add_parser("bench", help="accuracy and FLOPs across refinement rounds for one checkpoint")
    _common(p)
    p.add_argument("--ckpt", help=f"checkpoint path (default <out>/{CHECKPOINT})")
    p.add_argument("--data", help="dataset directory; overrides [data] path")
    return ap


def _run_config(args) -> RunConfig:
    rc = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
        rc.corpus = dataclasses.replace(rc.corpus, seed=args.seed)
    if getattr(args, "out", None):
        rc.out_dir = Path(args.out)
    if getattr(args, "data", None):
        rc.data_path = Path(args.data)
    if getattr(args, "cha", None):
        rc.model = dataclasses.replace(rc.model, cha=args.cha == "on")
    if getattr(args, "mode", None):
        rc.training = dataclasses.replace(rc.training, mode=args.mode)
    return rc


def _write_tsv(path: Path, rows: list[list]):
    path.write_text("".join("\t".join(str(c) for c in row) + "\n" for row in rows))


def _load_split(rc: RunConfig, name: str) -> Split:
    p = rc.data_path / f"{name}.haapds"
    if not p.exists():
        raise ConfigError(f"missing dataset split {p}; run gen-data first")
    return read_split(p)


def load_model(path) -> tuple[HAAP, checkpoint.Checkpoint]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"missing checkpoint {p}")
    ck = checkpoint.load(p)
    model = HAAP(ModelConfig.from_dict(ck.config["model"]))
    checkpoint.into_module(model, ck)
    return model.eval(), ck


def cmd_gen_data(args) -> int:
    rc = _run_config(args)
    spec = rc.corpus if args.count is None else dataclasses.replace(rc.corpus, count=args.count)
    out = Path(args.out) if args.out else rc.data_path
    paths = generate(spec, out)
    print(f"wrote {spec.count} samples to {out} (manifest {paths['manifest'].name})")
    return 0


def _fit(cfg: TrainConfig, rc: RunConfig, on_metrics=None):
    tr = _load_split(rc, "train")
    va = _load_split(rc, "val")
    return train(cfg, tr, va, on_metrics=on_metrics)


def cmd_train(args) -> int:
    rc = _run_config(args)
    cfg = rc.train_config()
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)

    def show(rec):
        if rec["val_acc"] is not None:
            log.info("step %d loss %.4f val_acc %.4f", rec["step"], rec["loss"], rec["val_acc"])

    res = _fit(cfg, rc, show)
    ck = res.checkpoint(cfg)
    checkpoint.save(out / CHECKPOINT, ck)
    write_metrics(out / "metrics.jsonl", res.metrics)
    _write_tsv(out / "loss.tsv", [["step", "loss", "lr", "val_acc"]] +
               [[m["step"], f"{m['loss']:.6f}", f"{m['lr']:.6g}", "" if m["val_acc"] is None else f"{m['val_acc']:.4f}"]
                for m in res.metrics])
    plots.loss_curve(out / "loss_curve.svg", {cfg.mode: res.metrics})
    _append_timing(out, [["train", cfg.mode, f"{res.wall_time:.2f}"]])
    print(f"mode={cfg.mode} cha={'on' if cfg.model.cha else 'off'} steps={res.steps} "
          f"val_acc={res.final_val_acc if res.final_val_acc is not None else 'n/a'} ckpt={out / CHECKPOINT}")
    return 0


def _append_timing(out: Path, rows):
    path = out / "timing.tsv"
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write("what\twhich\tvalue\n")
        for r in rows:
            fh.write("\t".join(r) + "\n")


def cmd_eval(args) -> int:
    rc = _run_config(args)
    out = rc.out_dir
    model, _ = load_model(args.ckpt or out / CHECKPOINT)
    opts = DecodeOptions(ir_rounds=args.ir, max_len=model.T)
    cost = cost_report(model)
    records = []
    for name in SPLITS:
        p = rc.data_path / f"{name}.haapds"
        if not p.exists():
            continue
        split = read_split(p)
        acc = evaluate(model, split.images, split.labels, opts) if len(split) else 0.0
        records.append({"split": name, "samples": len(split), "word_accuracy": round(acc, 6),
                        "ir_rounds": args.ir, "parameters": cost.parameters, "flops": cost.flops_by_ir[args.ir]})
    if not records:
        raise ConfigError(f"no dataset splits under {rc.data_path}")
    out.mkdir(parents=True, exist_ok=True)
    cols = ["split", "samples", "word_accuracy", "ir_rounds", "parameters", "flops"]
    _write_tsv(out / "eval.tsv", [cols] + [[r[c] for c in cols] for r in records])
    (out / "eval.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    probe = render("sharp")
    lat = latency_ms(model, probe, opts, repeats=args.latency_repeats)
    _append_timing(out, [["latency_median_ms", f"ir={args.ir}", f"{lat['median_ms']:.3f}"],
                         ["latency_q1_ms", f"ir={args.ir}", f"{lat['q1_ms']:.3f}"],
                         ["latency_q3_ms", f"ir={args.ir}", f"{lat['q3_ms']:.3f}"]])
    print(f"{'split':<6} {'n':>5} {'acc':>7}   params={cost.parameters} flops={cost.flops_by_ir[args.ir]}")
    for r in records:
        print(f"{r['split']:<6} {r['samples']:>5} {r['word_accuracy']:>7.4f}")
    print(f"latency median {lat['median_ms']:.2f} ms (q1 {lat['q1_ms']:.2f}, q3 {lat['q3_ms']:.2f}, n={lat['repeats']})")
    return 0


def cmd_decode(args) -> int:
    rc = _run_config(args)
    model, _ = load_model(args.ckpt or rc.out_dir / CHECKPOINT)
    if args.word is not None:
        image, ref = render(args.word), args.word
    else:
        split = _load_split(rc, args.split)
        if not 0 <= args.index < len(split):
            raise UsageError(f"--index {args.index} outside 0..{len(split) - 1}")
        image, ref = split.images[args.index], split.labels[args.index]
    res = ar_decode(model, image, DecodeOptions(ir_rounds=args.ir, max_len=model.T))
    print(f"{res.texts[0]}\t(reference {ref})")
    if args.trace:
        print("step\tclass\tconfidence")
        names = ["[E]", *TRAIN94.symbols]
        steps = res.classes[0] + [TRAIN94.eos_id]
        for t, (c, p) in enumerate(zip(steps, res.confidences[0])):
            print(f"{t + 1}\t{names[c] if c < len(names) else c}\t{p:.4f}")
    return 0


def cmd_masks(args) -> int:
    if args.ipn:
        model, _ = load_model(args.ipn)
        perm = model.ipn.adaptive_permutation()
        print("adaptive permutation " + ",".join(map(str, perm.order)))
    elif args.perm:
        try:
            perm = Permutation(tuple(int(x) for x in args.perm.split(",")))
        except ValueError as e:
            raise UsageError(f"--perm: {e}") from None
    else:
        raise UsageError("one of --perm or --ipn is required")
    mask = mask_from_permutation(perm, args.kind)
    print(format_mask(mask))
    rep = validate(mask)
    print(f"valid={str(rep.valid).lower()}")
    return 0


def _accuracy_grid(model: HAAP, split: Split) -> dict[int, float]:
    return {k: evaluate(model, split.images, split.labels, DecodeOptions(ir_rounds=k, max_len=model.T))
            for k in IR_RANGE}


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    if args.sessions < 2:
        raise UsageError("--sessions must be at least 2")
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    test = _load_split(rc, "test")
    tr, va = _load_split(rc, "train"), _load_split(rc, "val")
    base = rc.train_config()

    mode_rows = [["mode", "K", "word_accuracy"]]
    curves = {}
    for mode in MODE_K:
        res = train(dataclasses.replace(base, mode=mode), tr, va)
        curves[mode] = res.metrics
        acc = evaluate(res.model, test.images, test.labels, DecodeOptions(max_len=res.model.T))
        mode_rows.append([mode, MODE_K[mode], f"{acc:.4f}"])
        log.info("mode %s acc %.4f", mode, acc)
    _write_tsv(out / "modes.tsv", mode_rows)
    plots.loss_curve(out / "loss_curves.svg", curves)

    cha_rows = [["cha", "metric", *(f"ir={k}" for k in IR_RANGE)]]
    series = {}
    for cha in (True, False):
        cfg = dataclasses.replace(base, model=dataclasses.replace(base.model, cha=cha))
        res = train(cfg, tr, va)
        grid = _accuracy_grid(res.model, test)
        fl = cost_report(res.model).flops_by_ir
        label = "on" if cha else "off"
        cha_rows.append([label, "word_accuracy", *(f"{grid[k]:.4f}" for k in IR_RANGE)])
        cha_rows.append([label, "flops", *(str(fl[k]) for k in IR_RANGE)])
        series[f"CHA {label}"] = ([grid[k] for k in IR_RANGE], [fl[k] for k in IR_RANGE])
    _write_tsv(out / "cha_ir.tsv", cha_rows)
    plots.accuracy_flops_vs_ir(out / "accuracy_flops_vs_ir.svg", list(IR_RANGE), series)

    stab_rows = []
    timing = []
    for mode in ("plm", "ipn"):
        rep = multi_session(dataclasses.replace(base, mode=mode), tr, va, sessions=args.sessions)
        rows = rep.rows(include_time=False)
        stab_rows += [[mode, *r] for r in (rows if not stab_rows else rows[1:])]
        timing += [["session_wall_time_s", f"{mode}#{s.seed}", f"{s.wall_time:.2f}"] for s in rep.sessions]
        log.info("stability %s std %.4f", mode, rep.std("final_accuracy"))
    stab_rows[0][0] = "mode"
    _write_tsv(out / "stability.tsv", stab_rows)
    _append_timing(out, timing)
    print(f"wrote modes.tsv, cha_ir.tsv, stability.tsv and figures to {out}")
    return 0


def cmd_bench(args) -> int:
    rc = _run_config(args)
    out = rc.out_dir
    model, _ = load_model(args.ckpt or out / CHECKPOINT)
    test = _load_split(rc, "test")
    grid = _accuracy_grid(model, test)
    fl = cost_report(model).flops_by_ir
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "bench.tsv", [["ir_rounds", "word_accuracy", "flops"]] +
               [[k, f"{grid[k]:.4f}", fl[k]] for k in IR_RANGE])
    label = f"CHA {'on' if model.cfg.cha else 'off'}"
    plots.accuracy_flops_vs_ir(out / "bench.svg", list(IR_RANGE), {label: ([grid[k] for k in IR_RANGE],
                                                                            [fl[k] for k in IR_RANGE])})
    for k in IR_RANGE:
        print(f"ir={k}\tacc={grid[k]:.4f}\tflops={fl[k]}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "masks": cmd_masks,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    threads = os.environ.get("HAAP_THREADS")
    try:
        if threads:
            torch.set_num_threads(max(1, int(threads)))
        args = build_parser().parse_args(argv)
        if getattr(args, "ir", 0) not in IR_RANGE:
            raise UsageError(f"--ir must lie in 0..4, got {args.ir}")
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: UsageError: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"error: ConfigError: {e}", file=sys.stderr)
        return 2
    except (InvalidPermutation, ValueError) as e:
        print(f"error: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
