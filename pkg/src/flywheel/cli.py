"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness, nonparam
from .core import DegenerateDistribution, NumericalAbort
from .datagen import (DatasetFormatError, GeneratorSpec, NoiseSpec, generate,
                      inject, load_dataset, save_dataset)
from .metrics import refurbishment_accuracy, test_accuracy
from .model import load_checkpoint, predict_proba

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "cycles", None) is not None:
        overrides.append(f"cycles={args.cycles}")
    if getattr(args, "plots", False):
        overrides.append("plots=true")
    return harness.load_config(args.config, overrides)


def cmd_gen_data(args):
    spec = GeneratorSpec(args.kind, args.n_classes, args.n_samples, args.dim,
                         args.separation, args.seed)
    data = generate(spec)
    save_dataset(args.out, data)
    print(f"wrote {data.N} samples, K={data.K}, d={data.d} to {args.out}")


def cmd_inject_noise(args):
    data = load_dataset(args.input, args.n_classes)
    if data.true_labels is None:
        # a file without a true_label column: its labels are taken as truth
        data = type(data)(data.features, data.noisy_labels, data.K, data.noisy_labels)
    mapping = None if args.mapping is None else [m - 1 for m in args.mapping]
    spec = NoiseSpec(args.kind, args.rate, mapping, args.tau_sigma, args.include_self)
    noisy = inject(data, spec, np.random.default_rng(args.seed))
    save_dataset(args.out, noisy)
    print(f"corrupted {int((~noisy.is_clean()).sum())} of {noisy.N} labels; wrote {args.out}")


def cmd_train(args):
    cfg = _config(args)
    out = args.output_dir or cfg.output_dir or harness.default_output_dir()
    summary = harness.run_experiment(cfg, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"artifacts in {out}")


def cmd_eval(args):
    net = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, net.n_classes)
    if data.d != net.input_dim:
        raise DatasetFormatError(
            f"dataset has {data.d} features, checkpoint expects {net.input_dim}")
    result = {"n": data.N, "accuracy": test_accuracy(net, data)}
    if data.true_labels is not None:
        result["accuracy_vs_noisy_labels"] = float(
            np.mean(np.argmax(predict_proba(net, data.features), axis=1) == data.noisy_labels))
        result["refurb_acc"] = refurbishment_accuracy(net, data)
    print(json.dumps(result, indent=2, sort_keys=True))


def cmd_ablate(args):
    cfg = _config(args)
    seeds = args.seeds if args.seeds else list(range(args.n_seeds))
    out = args.output_dir or cfg.output_dir or harness.default_output_dir("ablate")
    table = harness.ablate(cfg, seeds, tuple(args.variants), out)
    print(f"{'variant':<10} {'mean':>8} {'std':>8}  per-seed test accuracy")
    for v, r in table.items():
        per = " ".join(f"{a:.4f}" for a in r["test_acc"])
        print(f"{v:<10} {r['mean']:8.4f} {r['std']:8.4f}  {per}")
    print(f"artifacts in {out}")


def cmd_closed_form_check(args):
    world = nonparam.default_world(args.seed, args.num_x, args.n_classes,
                                   args.gamma_prime, args.temperature)
    lam_star = nonparam.lambda_star(world)
    lambdas = args.lambdas if args.lambdas else [0.0, lam_star / 3, 2 * lam_star / 3, lam_star]
    rows = nonparam.closed_form_check(world, lambdas, args.iters, args.step, args.seed,
                                args.restarts, args.method)
    print(f"lambda* = {lam_star:.6g}")
    print(f"{'lambda':>10} {'bf_loss':>14} {'cf_loss':>14} {'TV(bf,cf)':>11} {'TV(cf,pi)':>11}")
    for r in rows:
        print(f"{r['lambda']:10.6g} {r['bf_loss']:14.8f} {r['cf_loss']:14.8f} "
              f"{r['tv_bf_cf']:11.3e} {r['tv_cf_pi']:11.3e}")
    payload = {"lambda_star": lam_star, "rows": rows}
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(payload, fh, indent=2)
    else:
        print(json.dumps(payload))


def _add_experiment_args(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. noise.rate=0.6 (repeatable)")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--plots", action="store_true", help="also write SVG figures")


def build_parser():
    ap = argparse.ArgumentParser(prog="flywheel", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic noise-free dataset")
    p.add_argument("--kind", default="gaussian_blobs",
                   choices=("gaussian_blobs", "concentric_rings"))
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--n-samples", type=int, default=4000)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inject-noise", help="corrupt the labels of a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="symmetric",
                   choices=("symmetric", "asymmetric", "instance_dependent"))
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--mapping", type=int, nargs="+", help="1-based target class per class")
    p.add_argument("--tau-sigma", type=float, default=0.1)
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("train", help="warm-up plus flywheel cycles")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare full, no_cr, no_aux, eps_fixed")
    _add_experiment_args(p)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--variants", nargs="+", default=list(harness.VARIANTS),
                   choices=harness.VARIANTS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("lemma-check", help="brute force vs closed form on a finite world")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-x", type=int, default=6)
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--gamma-prime", type=float, default=0.7)
    p.add_argument("--temperature", type=float, default=0.3)
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--method", default="mirror", choices=("mirror", "pgd"))
    p.add_argument("--json", help="write the table as JSON here instead of stdout")
    p.set_defaults(func=cmd_closed_form_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (harness.ConfigError, DatasetFormatError, DegenerateDistribution,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
