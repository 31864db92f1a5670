"""Two-stage training, seeded repeats, ablations, sweeps and report emission."""
import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tacvi import data as D
from tacvi import metrics as M
from tacvi import nn
from tacvi.stage1 import Stage1Model, stage1_infer_features, stage1_terms, subset
from tacvi.stage2 import Stage2Model, predict, stage2_forward
from tacvi.tensor import Tape

log = logging.getLogger(__name__)

SWEEP_AXES = ("a_percent", "b_percent", "delta", "alpha")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    manifest: str = None
    synthetic: dict = None
    a_percent: float = 50
    b_percent: float = 50
    delta: object = 1e-2            # float or one value per view
    alpha: float = 10.0
    lr: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 128
    epochs_stage1: int = 50
    epochs_stage2: int = 100
    d_v: object = 64                # int or one value per view
    d_e: int = 64
    ta_hidden: int = 512
    cls1_hidden: int = 256
    vs_hidden: int = 256
    cls2_hidden: int = 256
    repeats: int = 10
    seed: int = 0
    disable_Lta: bool = False
    disable_Lre: bool = False
    no_imputation: bool = False
    detach_imputation: bool = False
    out_dir: str = "runs/experiment"
    plots: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.repeats < 1:
            raise ValueError("batch_size and repeats must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        deltas = self.delta if isinstance(self.delta, (list, tuple)) else [self.delta]
        if any(d < 0 for d in deltas) or self.alpha < 0:
            raise ValueError("delta and alpha must be >= 0")
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("set exactly one of 'manifest' and 'synthetic'")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        cfg = json.loads(path.read_text())
        if cfg.get("manifest") and not Path(cfg["manifest"]).is_absolute():
            cfg["manifest"] = str(path.parent / cfg["manifest"])
        return cls.from_dict(cfg)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    seed: int
    stage1_losses: dict = field(default_factory=dict)    # view -> per-epoch mean loss
    stage2_losses: list = field(default_factory=list)    # per-epoch {L_c, L_re, total}
    val_metrics: list = field(default_factory=list)
    selected_epoch: int = 0
    test_metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# optimisation

def sgd_step(params, grads, velocity, lr, momentum):
    """Classical momentum: v <- momentum * v + g; p <- p - lr * v. Returns new lists."""
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"sgd_step: shapes {p.shape}, {g.shape}, {v.shape}")
        v = momentum * v + g
        new_v.append(v)
        new_p.append(p - lr * v)
    return new_p, new_v


class SGD:
    def __init__(self, params, lr, momentum):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        new_p, self.velocity = sgd_step([p.data for p in self.params],
                                        [p.grad for p in self.params],
                                        self.velocity, self.lr, self.momentum)
        for p, arr in zip(self.params, new_p):
            p.data = arr


def derive_seed(seed, *stream):
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


def _batches(idx, batch_size, rng):
    order = idx[rng.permutation(idx.size)]
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


def _check_finite(value, where):
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at {where}")


# ---------------------------------------------------------------------------
# the two procedures

def build_stage1(bundle, config, seed):
    return Stage1Model(bundle.view_dims, config.d_v, bundle.c, delta=config.delta,
                       hidden=config.ta_hidden, cls_hidden=config.cls1_hidden,
                       seed=derive_seed(seed, 1), passthrough=config.disable_Lta)


def build_stage2(stage1_model, bundle, config, seed):
    return Stage2Model(stage1_model.d_v, config.d_e, bundle.c, alpha=config.alpha,
                       hidden=config.vs_hidden, cls_hidden=config.cls2_hidden,
                       seed=derive_seed(seed, 2))


def train_stage1(bundle, config, seed, record=None):
    """Per view, mini-batch SGD on the stage-one loss over the training split."""
    model = build_stage1(bundle, config, seed)
    if config.disable_Lta:
        return model
    train_idx = bundle.indices(D.TRAIN)
    for l in range(model.m):
        params = model.view_parameters(l)
        opt = SGD(params, config.lr, config.momentum)
        rng = np.random.default_rng(derive_seed(seed, 3, l))
        curve = []
        for epoch in range(config.epochs_stage1):
            total = 0.0
            batches = _batches(train_idx, config.batch_size, rng)
            for b, idx in enumerate(batches):
                batch = subset(bundle, idx)
                with Tape() as tape:
                    loss = stage1_terms(batch, model, l, seed=rng.integers(2**63)).loss
                value = loss.item()
                _check_finite(value, f"stage 1, view {l}, epoch {epoch + 1}, batch {b + 1}")
                tape.backward(loss, params)
                opt.step()
                total += value
            curve.append(total / len(batches))
        if record is not None:
            record.stage1_losses[l] = curve
    return model


def _flags(config):
    return dict(impute_views=not config.no_imputation,
                detach_imputation=config.detach_imputation,
                use_reconstruction=not config.disable_Lre)


def train_stage2(bundle, stage1_model, config, seed, truth=None, record=None):
    """Mini-batch SGD on L_c + alpha * L_re; keeps the best-validation-AP epoch."""
    truth = bundle.labels if truth is None else truth
    record = record if record is not None else RunRecord(seed)
    model = build_stage2(stage1_model, bundle, config, seed)
    feats = stage1_infer_features(bundle, stage1_model)
    U, Y, G = bundle.view_mask, bundle.labels, bundle.label_mask
    train_idx, val_idx = bundle.indices(D.TRAIN), bundle.indices(D.VAL)
    params = model.parameters()
    opt = SGD(params, config.lr, config.momentum)
    rng = np.random.default_rng(derive_seed(seed, 4))
    flags = _flags(config)
    best_ap, best_state = -math.inf, nn.state_dict(params)
    for epoch in range(config.epochs_stage2):
        sums = np.zeros(3)
        batches = _batches(train_idx, config.batch_size, rng)
        for b, idx in enumerate(batches):
            with Tape() as tape:
                out = stage2_forward([f[idx] for f in feats], U[idx], Y[idx], G[idx], model, **flags)
            value = out.loss.item()
            _check_finite(value, f"stage 2, epoch {epoch + 1}, batch {b + 1}")
            tape.backward(out.loss, params)
            opt.step()
            sums += (out.L_c.item(), out.L_re.item(), value)
        sums /= len(batches)
        record.stage2_losses.append({"L_c": sums[0], "L_re": sums[1], "total": sums[2]})
        scores = predict([f[val_idx] for f in feats], U[val_idx], model,
                         impute_views=flags["impute_views"])
        val = M.evaluate(scores, truth[val_idx])
        record.val_metrics.append(val)
        if val["ap"] > best_ap:
            best_ap, best_state = val["ap"], nn.state_dict(params)
            record.selected_epoch = epoch + 1
    nn.load_state(params, best_state)
    return model, record


def evaluate_models(bundle, stage1_model, stage2_model, idx, truth, impute_views=True):
    feats = stage1_infer_features(subset(bundle, idx), stage1_model)
    scores = predict(feats, bundle.view_mask[idx], stage2_model, impute_views=impute_views)
    return M.evaluate(scores, truth[idx])


# ---------------------------------------------------------------------------
# experiments

def load_source(config):
    if config.manifest:
        return D.load_dataset(config.manifest)
    spec = dict(config.synthetic)
    spec.setdefault("seed", config.seed)
    return D.generate_synthetic(D.SyntheticSpec.from_dict(spec))


def prepare_run(base, config, seed):
    """Mask views, mask labels, then split. Returns (bundle, labels before masking)."""
    truth = base.labels
    bundle = D.mask_views(base, config.a_percent, derive_seed(seed, 10))
    bundle = D.mask_labels(bundle, config.b_percent, derive_seed(seed, 11))
    if not (config.manifest and base.split is not None):
        bundle = D.split(bundle, derive_seed(seed, 12))
    return bundle, truth


def checkpoint_tensors(stage1_model, stage2_model):
    tensors = nn.state_dict(stage1_model.parameters())
    tensors.update(nn.state_dict(stage2_model.parameters()))
    return tensors


def checkpoint_meta(bundle, stage1_model, config):
    return {"view_dims": bundle.view_dims, "c": bundle.c, "d_v": stage1_model.d_v,
            "d_e": config.d_e, "ta_hidden": config.ta_hidden,
            "cls1_hidden": config.cls1_hidden, "vs_hidden": config.vs_hidden,
            "cls2_hidden": config.cls2_hidden, "delta": stage1_model.delta,
            "alpha": config.alpha, "passthrough": stage1_model.passthrough,
            "impute_views": not config.no_imputation}


def models_from_checkpoint(path):
    tensors, meta = nn.load_checkpoint(path)
    s1 = Stage1Model(meta["view_dims"], meta["d_v"], meta["c"], delta=meta["delta"],
                     hidden=meta["ta_hidden"], cls_hidden=meta["cls1_hidden"],
                     passthrough=meta["passthrough"])
    s2 = Stage2Model(meta["d_v"], meta["d_e"], meta["c"], alpha=meta["alpha"],
                     hidden=meta["vs_hidden"], cls_hidden=meta["cls2_hidden"])
    nn.load_state(s1.parameters(), tensors)
    nn.load_state(s2.parameters(), tensors)
    return s1, s2, meta


def run_once(config, repeat, base=None, checkpoint_dir=None):
    """One seeded repeat: protocol, stage one, stage two, test metrics."""
    seed = config.seed + repeat
    t0 = time.perf_counter()
    base = load_source(config) if base is None else base
    bundle, truth = prepare_run(base, config, seed)
    record = RunRecord(seed)
    s1 = train_stage1(bundle, config, seed, record)
    s2, record = train_stage2(bundle, s1, config, seed, truth, record)
    record.test_metrics = evaluate_models(bundle, s1, s2, bundle.indices(D.TEST), truth,
                                          impute_views=not config.no_imputation)
    if checkpoint_dir is not None:
        nn.save_checkpoint(Path(checkpoint_dir) / f"run_{repeat}.json",
                           checkpoint_tensors(s1, s2), checkpoint_meta(bundle, s1, config))
    record.wall_time = time.perf_counter() - t0
    log.info("run %d (seed %d): test AP %.4f, selected epoch %d, %.1fs", repeat, seed,
             record.test_metrics["ap"], record.selected_epoch, record.wall_time)
    return record


def _run_worker(args):
    cfg_dict, repeat, ckpt = args
    return run_once(ExperimentConfig.from_dict(cfg_dict), repeat, checkpoint_dir=ckpt)


def _threads():
    try:
        return max(1, int(os.environ.get("TACVI_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(config, out_dir=None, write=True):
    """R seeded repeats; writes report.json/csv, losses.csv, checkpoints and plots."""
    out = Path(out_dir or config.out_dir)
    ckpt = out / "checkpoints" if write else None
    if write:
        out.mkdir(parents=True, exist_ok=True)
    workers = min(_threads(), config.repeats)
    if workers > 1:
        jobs = [(config.to_dict(), r, ckpt) for r in range(config.repeats)]
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_worker, jobs))
    else:
        base = load_source(config)
        records = [run_once(config, r, base, ckpt) for r in range(config.repeats)]
    report = {
        "config": config.to_dict(),
        "metrics": M.summarize([r.test_metrics for r in records]),
        "selected_epochs": [r.selected_epoch for r in records],
        "seeds": [r.seed for r in records],
    }
    if write:
        write_report(out, report, records)
        if config.plots:
            from tacvi import plots
            plots.loss_curves(records, out / "losses.png")
    return report, records


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_report(out, report, records):
    out = Path(out)
    (out / "report.json").write_text(json.dumps(_json_safe(report), indent=2, sort_keys=True))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "selected_epoch", *M.METRICS])
        for i, r in enumerate(records):
            w.writerow([i, r.seed, r.selected_epoch, *(repr(r.test_metrics[k]) for k in M.METRICS)])
        for stat in ("mean", "std"):
            w.writerow([stat, "", "", *(repr(report["metrics"][k][stat]) for k in M.METRICS)])
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "stage", "view", "epoch", "term", "value"])
        for i, r in enumerate(records):
            for view, curve in r.stage1_losses.items():
                for e, v in enumerate(curve, 1):
                    w.writerow([i, 1, view, e, "L_ta", repr(v)])
            for e, terms in enumerate(r.stage2_losses, 1):
                for term, v in terms.items():
                    w.writerow([i, 2, "", e, term, repr(float(v))])
            for e, val in enumerate(r.val_metrics, 1):
                w.writerow([i, 2, "", e, "val_ap", repr(val["ap"])])
    (out / "timing.json").write_text(json.dumps([r.wall_time for r in records]))


def sweep(config, axis, values, out_dir=None):
    """One experiment per value of ``axis``; writes trend.csv and metric-vs-axis plots."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        cfg = ExperimentConfig.from_dict({**config.to_dict(), axis: value})
        report, _ = run_experiment(cfg, out / f"{axis}={value}")
        for metric in M.METRICS:
            stats = report["metrics"][metric]
            rows.append({"axis": axis, "value": value, "metric": metric,
                         "mean": stats["mean"], "std": stats["std"]})
    with open(out / "trend.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["axis", "value", "metric", "mean", "std"])
        w.writeheader()
        w.writerows(rows)
    if config.plots:
        from tacvi import plots
        plots.trend(rows, axis, out)
    return rows
