"""Command-line surface: train, sample, sweep, bench, analyze.

Exit codes: 0 success, 2 usage (argparse), 3 input validation or file
format, 4 runtime/numeric failure. `DDIT_THREADS` caps intra-op thread
use. Every directory that receives an artifact also gets a
``run_manifest.json`` recording the command, flags, seed, and outputs;
re-running with the same flags reproduces the artifacts bit for bit
(wall-time fields excepted).
"""

import argparse
import csv
import json
import os
import statistics
import sys
import time
from datetime import datetime, timezone

from .errors import (
    DditError,
    NumericError,
    TraceFormatError,
    ValidationError,
    WeightFormatError,
)

VERSION = "0.1.0"

COND_ALIASES = {
    "smooth": "smooth-blobs",
    "gradient": "low-freq-gradient",
    "textured": "checkerboard-texture",
    "noise": "noise-texture",
}


def _threads():
    raw = os.environ.get("DDIT_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"DDIT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError("DDIT_THREADS must be >= 1")
    return n


def _apply_threads():
    n = _threads()
    if n is not None:
        import torch

        torch.set_num_threads(n)


def parse_cond(text):
    from .distill import KINDS, kind_label

    name = COND_ALIASES.get(text, text)
    if name in KINDS:
        return kind_label(name)
    try:
        label = int(text)
    except ValueError:
        raise ValidationError(
            f"unknown condition {text!r}; use one of {list(KINDS)}, "
            f"an alias {sorted(COND_ALIASES)}, or a label index"
        )
    if not 0 <= label < len(KINDS):
        raise ValidationError(f"condition index {label} out of range 0..{len(KINDS) - 1}")
    return label


def _int_list(text):
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip() != "")
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}")


def _float_list(text):
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip() != "")
    except ValueError:
        raise ValidationError(f"expected a comma-separated float list, got {text!r}")


def write_manifest(command, args_dict, outputs, started, wall_s):
    dirs = sorted({os.path.dirname(os.path.abspath(p)) or "." for p in outputs})
    manifest = {
        "command": command,
        "version": VERSION,
        "seed": args_dict.get("seed"),
        "config": {k: v for k, v in sorted(args_dict.items())},
        "outputs": [os.path.abspath(p) for p in outputs],
        "started_utc": started,
        "wall_s": wall_s,
    }
    for d in dirs:
        with open(os.path.join(d, "run_manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, default=str)
            fh.write("\n")


# -- subcommands -------------------------------------------------------------


def cmd_train(args):
    from .distill import KINDS, TrainConfig, generate_dataset, generate_mixed, train
    from .model import ModelConfig, build_model
    from .serialization import save_weights

    config = ModelConfig()
    supported = list(config.multipliers[1:])
    for m in args.multiplier:
        if m not in supported:
            raise ValidationError(
                f"multiplier {m} unsupported for training; supported set: {supported}"
            )

    model = build_model(config, seed=args.seed)
    if args.data == "mixed":
        dataset = generate_mixed(args.samples, args.seed)
    elif args.data in KINDS:
        dataset = generate_dataset(args.data, args.samples, args.seed)
    else:
        raise ValidationError(f"unknown dataset {args.data!r}; use 'mixed' or one of {list(KINDS)}")

    train_cfg = TrainConfig(
        steps=args.steps, batch_size=args.batch, lr=args.lr,
        multipliers=tuple(args.multiplier),
    )
    log_path = args.log or args.out + ".log.csv"
    history = train(model, dataset, train_cfg, seed=args.seed, log_path=log_path)
    save_weights(model, args.out)
    print(
        f"trained multipliers {list(train_cfg.multipliers)} for {args.steps} steps: "
        f"held-out loss {history['init_eval_mean']:.6f} -> {history['final_eval_mean']:.6f}"
    )
    return [args.out, log_path]


def cmd_sample(args):
    from .render import write_image
    from .sampler import sample
    from .scheduler import SchedulerConfig, config_snapshot
    from .serialization import load_weights

    model = load_weights(args.weights)
    cond = parse_cond(args.cond)
    sched_cfg = SchedulerConfig(
        tau=args.tau, rho=args.rho, candidates=_int_list(args.candidates),
        order=args.order, warmup_steps=args.warmup,
    )
    report = sample(
        model, cond, steps=args.steps, scheduler_config=sched_cfg, seed=args.seed,
        force_multiplier=args.force_multiplier,
    )
    outputs = []
    if args.out:
        write_image(report.final_latent, args.out)
        outputs.append(args.out)
    if args.trace:
        report.trace.write_jsonl(args.trace)
        outputs.append(args.trace)
    if args.report:
        payload = report.summary()
        payload["scheduler"] = config_snapshot(sched_cfg)
        payload["weights"] = os.path.abspath(args.weights)
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        outputs.append(args.report)
    print(
        f"sampled cond={args.cond} seed={args.seed}: "
        f"token_steps={report.total_token_steps} speedup={report.speedup_estimate:.3f}"
    )
    return outputs


def cmd_sweep(args):
    from .sampler import compare_to_baseline, sample
    from .scheduler import SchedulerConfig
    from .serialization import load_weights

    taus = _float_list(args.taus)
    orders = _int_list(args.orders)
    if not taus:
        raise ValidationError("tau list must be non-empty")
    if not orders:
        raise ValidationError("order list must be non-empty")

    model = load_weights(args.weights)
    cond = parse_cond(args.cond)
    import numpy as np

    base = sample(model, cond, steps=args.steps, seed=args.seed, force_multiplier=1)
    rows = []
    for order in orders:
        for tau in taus:
            cfg = SchedulerConfig(
                tau=tau, rho=args.rho, candidates=_int_list(args.candidates),
                order=order, warmup_steps=max(order, args.warmup),
            )
            dyn = sample(model, cond, steps=args.steps, scheduler_config=cfg, seed=args.seed)
            diff = dyn.final_latent.astype(np.float64) - base.final_latent.astype(np.float64)
            rows.append({
                "tau": f"{tau:.9g}",
                "order": order,
                "token_steps": dyn.total_token_steps,
                "flop_ratio": f"{base.total_flops / dyn.total_flops:.6g}",
                "rmse": f"{float(np.sqrt(np.mean(diff * diff))):.9g}",
            })
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tau", "order", "token_steps", "flop_ratio", "rmse"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"swept {len(rows)} cells -> {args.out}")
    return [args.out]


def cmd_bench(args):
    import numpy as np

    from . import kernels
    from .model import build_model, count_flops
    from .sampler import initial_noise
    from .serialization import load_weights

    if args.repetitions < 1:
        raise ValidationError("repetitions must be >= 1")

    model = load_weights(args.weights) if args.weights else build_model(seed=args.seed)
    cfg = model.config
    z = initial_noise((cfg.latent_h, cfg.latent_w, cfg.channels), args.seed)

    result = {"flops": {}, "forward_ms": {}, "ratios": {}, "kernels": {}}
    for m in cfg.multipliers:
        result["flops"][f"m{m}"] = count_flops(m, cfg).as_dict()
    f1 = count_flops(1, cfg)
    for m in cfg.multipliers[1:]:
        fm = count_flops(m, cfg)
        result["ratios"][f"attn_scores_m1_vs_m{m}"] = f1.attn_scores / fm.attn_scores
        result["ratios"][f"total_m1_vs_m{m}"] = f1.total / fm.total

    for m in cfg.multipliers:
        for _ in range(args.warmup):
            model.forward(z, 500, 0, m)
        times = []
        for _ in range(args.repetitions):
            t0 = time.perf_counter()
            model.forward(z, 500, 0, m)
            times.append((time.perf_counter() - t0) * 1e3)
        result["forward_ms"][f"m{m}"] = statistics.median(times)
    for m in cfg.multipliers[1:]:
        result["ratios"][f"measured_m1_vs_m{m}"] = (
            result["forward_ms"]["m1"] / result["forward_ms"][f"m{m}"]
        )

    # Kernel core vs NumPy fallback on a representative difference field.
    field = initial_noise((cfg.latent_h, cfg.latent_w, cfg.channels), args.seed + 1)
    field64 = np.ascontiguousarray(field, dtype=np.float64)
    stack = field64.reshape(1, -1).repeat(4, axis=0)
    coeffs = np.array([1.0, -3.0, 3.0, -1.0])
    backends = ["numpy"] + (["cext"] if kernels.backend_name() == "cext" else [])
    for backend in backends:
        entry = {}
        for name, fn in (
            ("per_patch_std", lambda: kernels.per_patch_std(field64, 8, backend=backend)),
            ("window_combine", lambda: kernels.window_combine(stack, coeffs, backend=backend)),
        ):
            for _ in range(args.warmup):
                fn()
            times = []
            for _ in range(args.repetitions):
                t0 = time.perf_counter()
                fn()
                times.append((time.perf_counter() - t0) * 1e3)
            entry[name] = statistics.median(times)
        result["kernels"][backend] = entry
    result["kernels"]["active_backend"] = kernels.backend_name()

    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    for m in cfg.multipliers:
        print(f"forward m={m}: {result['forward_ms'][f'm{m}']:.3f} ms")
    print(f"analytic attention-score ratio m1:m2 = {result['ratios'].get('attn_scores_m1_vs_m2')}")
    print(f"kernel backend: {kernels.backend_name()}")
    return [args.out]


def cmd_analyze(args):
    from .scheduler import ScheduleTrace

    traces = []
    for path in args.trace:
        traces.append((path, ScheduleTrace.read_jsonl(path)))

    outputs = []
    if args.out:
        all_sigma_keys = sorted({
            m for _, trace in traces for d in trace.decisions for m in d.candidate_stats
        })
        fields = ["trace", "step", "t", "m", "reason", "tokens", "cum_flops"] + [
            f"sigma_{m}" for m in all_sigma_keys
        ]
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for path, trace in traces:
                for i, (d, cum) in enumerate(zip(trace.decisions, trace.cum_flops)):
                    row = {
                        "trace": path,
                        "step": i,
                        "t": d.timestep,
                        "m": d.chosen_multiplier,
                        "reason": d.reason,
                        "tokens": d.token_count,
                        "cum_flops": cum,
                    }
                    for m in all_sigma_keys:
                        v = d.candidate_stats.get(m)
                        row[f"sigma_{m}"] = "" if v is None else f"{v:.9g}"
                    writer.writerow(row)
        outputs.append(args.out)

    summary = {}
    for path, trace in traces:
        counts = trace.multiplier_counts()
        n = len(trace)
        summary[path] = {
            "steps": n,
            "total_token_steps": trace.total_token_steps(),
            "total_flops": trace.cum_flops[-1] if n else 0,
            "fraction_per_multiplier": {
                str(m): counts[m] / n for m in sorted(counts)
            },
            "fine_fraction": counts.get(1, 0) / n if n else 0.0,
        }
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        outputs.append(args.summary)
    for path, info in summary.items():
        print(
            f"{path}: steps={info['steps']} token_steps={info['total_token_steps']} "
            f"fine_fraction={info['fine_fraction']:.3f}"
        )
    return outputs


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ddit",
        description="Toy diffusion transformer with dynamic per-step patch sizing.",
    )
    parser.add_argument("--version", action="version", version=f"ddit {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="distill the adaptive pathway from the frozen base")
    p.add_argument("--data", default="mixed",
                   help="dataset kind or 'mixed' (default: mixed)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=80,
                   help="dataset size incl. held-out eval samples")
    p.add_argument("--multiplier", type=int, action="append",
                   help="patch multiplier to train (repeatable; default 2 and 4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--log", default=None, help="training log CSV (default: OUT.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate one latent with dynamic patch sizing")
    p.add_argument("--weights", required=True)
    p.add_argument("--cond", default="smooth-blobs",
                   help="condition: kind name, alias, or label index")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--candidates", default="2,4")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force-multiplier", type=int, default=None,
                   help="bypass the scheduler and use one multiplier everywhere")
    p.add_argument("--out", default=None, help="image output (.pgm or .png)")
    p.add_argument("--trace", default=None, help="schedule trace JSONL output")
    p.add_argument("--report", default=None, help="sample report JSON output")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sweep", help="threshold/order sweep with RMSE vs baseline")
    p.add_argument("--weights", required=True)
    p.add_argument("--cond", default="smooth-blobs")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--taus", default="0.0005,0.001,0.01")
    p.add_argument("--orders", default="3")
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--candidates", default="2,4")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="sweep CSV output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time forward passes per multiplier and kernels")
    p.add_argument("--weights", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out", required=True, help="benchmark JSON output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="per-step variance profile and schedule summary")
    p.add_argument("--trace", action="append", required=True,
                   help="trace JSONL (repeatable)")
    p.add_argument("--out", default=None, help="profile CSV output")
    p.add_argument("--summary", default=None, help="summary JSON output")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and args.repetitions == 0:
        parser.error("repetitions must be a positive integer")
    if args.command == "train" and not args.multiplier:
        args.multiplier = [2, 4]
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        _apply_threads()
        outputs = args.func(args)
    except (ValidationError, WeightFormatError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except DditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    if outputs:
        write_manifest(
            args.command,
            {k: v for k, v in vars(args).items() if k != "func"},
            outputs,
            started,
            time.perf_counter() - t0,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
