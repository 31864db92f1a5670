"""Command line entry point: ``tacvi train|sweep|generate|evaluate``."""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from tacvi import data as D
from tacvi import metrics as M
from tacvi.runner import (SWEEP_AXES, ExperimentConfig, TrainingDiverged, _json_safe,
                          models_from_checkpoint, run_experiment, sweep)
from tacvi.stage1 import stage1_infer_features
from tacvi.stage2 import predict

log = logging.getLogger("tacvi")


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        v = float(tok)
        out.append(int(v) if v.is_integer() and "." not in tok and "e" not in tok.lower() else v)
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return out


def _flag_failure(out_dir, exc):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")


def cmd_train(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.out_dir
    try:
        report, _ = run_experiment(config, out)
    except (TrainingDiverged, D.ProtocolError) as exc:
        _flag_failure(out, exc)
        raise
    for k in M.METRICS:
        s = report["metrics"][k]
        print(f"{k:>13s}  {s['mean']:.4f} +- {s['std']:.4f}")
    return 0


def cmd_sweep(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.out_dir
    try:
        rows = sweep(config, args.axis, args.values, out)
    except (TrainingDiverged, D.ProtocolError) as exc:
        _flag_failure(out, exc)
        raise
    for r in rows:
        print(f"{r['axis']}={r['value']}  {r['metric']:>13s}  {r['mean']:.4f} +- {r['std']:.4f}")
    return 0


def cmd_generate(args):
    spec = D.SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    path = D.save_dataset(D.generate_synthetic(spec), args.out)
    print(path)
    return 0


def cmd_evaluate(args):
    s1, s2, meta = models_from_checkpoint(args.checkpoint)
    bundle = D.load_dataset(args.data)
    if bundle.view_dims != meta["view_dims"] or bundle.c != meta["c"]:
        raise ValueError(f"data has view dims {bundle.view_dims} and {bundle.c} labels; "
                         f"checkpoint expects {meta['view_dims']} and {meta['c']}")
    idx = np.arange(bundle.n)
    if bundle.split is not None and np.any(bundle.split == D.TEST) and not args.all:
        idx = bundle.indices(D.TEST)
    feats = stage1_infer_features(bundle, s1)
    scores = predict([f[idx] for f in feats], bundle.view_mask[idx], s2,
                     impute_views=meta["impute_views"])
    result = M.evaluate(scores, bundle.labels[idx])
    print(json.dumps(_json_safe(result), indent=2, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tacvi")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run seeded repeats of the two-stage model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override out_dir from the config")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="one experiment per value of a hyper-parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, type=_parse_values)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("generate", help="write a synthetic multi-view multi-label dataset")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--all", action="store_true", help="use every sample, not just the test split")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, D.ProtocolError, D.LoadError, ValueError, FileNotFoundError) as exc:
        print(f"tacvi: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
