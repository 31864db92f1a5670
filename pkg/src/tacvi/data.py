"""Multi-view multi-label datasets: CSV I/O, incompleteness protocol, splits, synthetic data."""
import csv
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


class LoadError(ValueError):
    pass


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetBundle:
    views: list                 # m arrays, n x d_l
    labels: np.ndarray          # n x c in {0, 1}
    view_mask: np.ndarray       # n x m, 1 = observed
    label_mask: np.ndarray      # n x c, 1 = known
    split: np.ndarray = None    # n ints in {TRAIN, VAL, TEST}
    name: str = "dataset"

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def m(self):
        return len(self.views)

    @property
    def c(self):
        return self.labels.shape[1]

    @property
    def view_dims(self):
        return [v.shape[1] for v in self.views]

    def indices(self, part):
        if self.split is None:
            raise ValueError("bundle has not been split")
        return np.flatnonzero(self.split == part)

    def validate(self):
        n = self.n
        for l, v in enumerate(self.views):
            if v.ndim != 2 or v.shape[0] != n:
                raise ValueError(f"view {l}: {v.shape[0]} rows, labels have {n}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"view {l}: non-finite feature")
        for name, mat, cols in (("labels", self.labels, self.c),
                                ("view_mask", self.view_mask, self.m),
                                ("label_mask", self.label_mask, self.c)):
            if mat.shape != (n, cols):
                raise ValueError(f"{name}: shape {mat.shape}, expected {(n, cols)}")
            if not np.all((mat == 0) | (mat == 1)):
                raise ValueError(f"{name}: entries must be 0 or 1")
        if np.any(self.view_mask.sum(axis=1) < 1):
            raise ValueError("every sample needs at least one observed view")
        for l, v in enumerate(self.views):
            if np.any(v[self.view_mask[:, l] == 0] != 0):
                raise ValueError(f"view {l}: missing samples must be zero-filled")
        if np.any(self.labels[self.label_mask == 0] != 0):
            raise ValueError("unknown labels must be stored as 0")
        if self.split is not None and self.split.shape != (n,):
            raise ValueError("split must assign every sample")
        return self


def _zero_fill(views, labels, view_mask, label_mask):
    views = [np.where(view_mask[:, l:l + 1] == 1, v, 0.0) for l, v in enumerate(views)]
    labels = np.where(label_mask == 1, labels, 0.0)
    return views, labels


# ---------------------------------------------------------------------------
# CSV / manifest

def read_matrix_csv(path, binary=False):
    path = Path(path)
    rows = []
    width = None
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise LoadError(f"{path}: {exc.strerror}") from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise LoadError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            if binary:
                bad = [cell for cell in row if cell.strip() not in ("0", "1")]
                if bad:
                    raise LoadError(f"{path}:{lineno}: non-binary entry {bad[0].strip()!r}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise LoadError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise LoadError(f"{path}: empty file")
    return np.array(rows, dtype=np.float64)


def write_matrix_csv(path, mat, binary=False):
    fmt = "%d" if binary else "%.17g"
    np.savetxt(path, np.asarray(mat), fmt=fmt, delimiter=",")


def load_dataset(manifest_path):
    """Read a JSON manifest ``{views, labels, view_mask?, label_mask?, split?, name}``."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{manifest_path}: {exc}") from exc
    base = manifest_path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    if "views" not in manifest or "labels" not in manifest:
        raise LoadError(f"{manifest_path}: manifest needs 'views' and 'labels'")
    views = [read_matrix_csv(resolve(p)) for p in manifest["views"]]
    labels = read_matrix_csv(resolve(manifest["labels"]), binary=True)
    n = labels.shape[0]
    for p, v in zip(manifest["views"], views):
        if v.shape[0] != n:
            raise LoadError(f"{p}: {v.shape[0]} rows but labels have {n}")
    m, c = len(views), labels.shape[1]
    if manifest.get("view_mask"):
        view_mask = read_matrix_csv(resolve(manifest["view_mask"]), binary=True)
    else:
        view_mask = np.ones((n, m))
    if manifest.get("label_mask"):
        label_mask = read_matrix_csv(resolve(manifest["label_mask"]), binary=True)
    else:
        label_mask = np.ones((n, c))
    split = None
    if manifest.get("split"):
        names = [line.strip() for line in resolve(manifest["split"]).read_text().splitlines()
                 if line.strip()]
        try:
            split = np.array([SPLIT_NAMES.index(s) for s in names], dtype=np.int64)
        except ValueError as exc:
            raise LoadError(f"{manifest['split']}: {exc}") from exc
    views, labels = _zero_fill(views, labels, view_mask, label_mask)
    bundle = DatasetBundle(views, labels, view_mask, label_mask, split,
                           manifest.get("name", manifest_path.stem))
    try:
        return bundle.validate()
    except ValueError as exc:
        raise LoadError(f"{manifest_path}: {exc}") from exc


def save_dataset(bundle, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    views = []
    for l, v in enumerate(bundle.views):
        write_matrix_csv(out_dir / f"view_{l}.csv", v)
        views.append(f"view_{l}.csv")
    write_matrix_csv(out_dir / "labels.csv", bundle.labels, binary=True)
    write_matrix_csv(out_dir / "view_mask.csv", bundle.view_mask, binary=True)
    write_matrix_csv(out_dir / "label_mask.csv", bundle.label_mask, binary=True)
    manifest = {"name": bundle.name, "views": views, "labels": "labels.csv",
                "view_mask": "view_mask.csv", "label_mask": "label_mask.csv"}
    if bundle.split is not None:
        (out_dir / "split.csv").write_text("".join(SPLIT_NAMES[s] + "\n" for s in bundle.split))
        manifest["split"] = "split.csv"
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


# ---------------------------------------------------------------------------
# incompleteness protocol

def percent_count(percent, total):
    """floor(percent * total / 100), exact for decimal percentages."""
    return math.floor(Fraction(str(percent)) * total / 100)


def max_view_missing_percent(n, m):
    """Largest integer a <= 90 whose per-view removals leave every sample a view."""
    best = 0
    for a in range(0, 91):
        if percent_count(a, n) * m <= n * (m - 1):
            best = a
    return best


def mask_views(bundle, a_percent, seed):
    """Remove ``floor(a*n/100)`` samples from every view, keeping >= 1 view per sample.

    Views are visited in a seeded random order; for each view the removed samples are
    drawn uniformly from those still observed elsewhere.
    """
    if not 0 <= a_percent <= 90:
        raise ValueError(f"a_percent must be in [0, 90], got {a_percent}")
    n, m = bundle.n, bundle.m
    U = bundle.view_mask.copy()
    if a_percent == 0:
        return replace(bundle, view_mask=U)
    if m < 2:
        raise ValueError("masking views needs at least two views")
    k = percent_count(a_percent, n)
    rng = np.random.default_rng(seed)
    if k * m > n * (m - 1):
        raise ProtocolError(
            f"cannot hide {a_percent}% of {n} samples in each of {m} views while keeping "
            f"one view per sample; achievable maximum is {max_view_missing_percent(n, m)}%")
    for l in rng.permutation(m):
        eligible = np.flatnonzero((U[:, l] == 1) & (U.sum(axis=1) >= 2))
        if eligible.size < k:
            raise ProtocolError(
                f"view {l}: only {eligible.size} samples can lose this view, need {k}; "
                f"achievable maximum is {max_view_missing_percent(n, m)}% and the draw "
                f"for seed {seed} ran out before reaching it")
        U[rng.choice(eligible, size=k, replace=False), l] = 0
    views, _ = _zero_fill(bundle.views, bundle.labels, U, bundle.label_mask)
    return replace(bundle, views=views, view_mask=U)


def mask_labels(bundle, b_percent, seed):
    """Hide floor(b*#pos/100) positives and floor(b*#neg/100) negatives per label column."""
    if not 0 <= b_percent <= 90:
        raise ValueError(f"b_percent must be in [0, 90], got {b_percent}")
    G = bundle.label_mask.copy()
    rng = np.random.default_rng(seed)
    Y = bundle.labels
    for j in range(bundle.c):
        for value in (1, 0):
            cand = np.flatnonzero((Y[:, j] == value) & (G[:, j] == 1))
            k = percent_count(b_percent, cand.size)
            if k:
                G[rng.choice(cand, size=k, replace=False), j] = 0
    labels = np.where(G == 1, Y, 0.0)
    return replace(bundle, labels=labels, label_mask=G)


def split_counts(n):
    n_train = math.floor(n * 7 / 10)
    n_val = math.floor(n * 15 / 100)
    return n_train, n_val, n - n_train - n_val


def split(bundle, seed):
    if bundle.n < 10:
        raise ValueError(f"need at least 10 samples to split, got {bundle.n}")
    n_train, n_val, _ = split_counts(bundle.n)
    perm = np.random.default_rng(seed).permutation(bundle.n)
    parts = np.full(bundle.n, TEST, dtype=np.int64)
    parts[perm[:n_train]] = TRAIN
    parts[perm[n_train:n_train + n_val]] = VAL
    return replace(bundle, split=parts)


# ---------------------------------------------------------------------------
# synthetic data

@dataclass
class SyntheticSpec:
    n: int = 2000
    m: int = 3
    c: int = 10
    latent_dim: int = 8
    view_dims: list = field(default_factory=lambda: [32, 32, 32])
    noise_std: float = 0.1
    label_quantile: float = 0.7
    view_specificity: float = 0.9
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if isinstance(self.view_dims, int):
            self.view_dims = [self.view_dims] * self.m
        self.view_dims = list(self.view_dims)
        if self.n < 10 or self.m < 2 or self.latent_dim < 1 or self.c < 1:
            raise ValueError("synthetic spec needs n >= 10, m >= 2, latent_dim >= 1, c >= 1")
        if len(self.view_dims) != self.m:
            raise ValueError(f"{len(self.view_dims)} view dims for {self.m} views")
        if not 0 < self.label_quantile < 1:
            raise ValueError("label_quantile must lie in (0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.view_specificity < 1:
            raise ValueError("view_specificity must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _labels_ok(Y, parts):
    for p in (TRAIN, VAL, TEST):
        sub = Y[parts == p]
        if np.any(sub.sum(axis=0) == 0) or np.any(sub.sum(axis=0) == sub.shape[0]):
            return False
    return True


def generate_synthetic(spec):
    """Views are noisy tanh projections of one Gaussian latent; labels threshold W h.

    Latent coordinate j belongs to view ``j % m``; a view's loadings on the other
    coordinates are damped by ``1 - view_specificity``, so views overlap but each
    carries information the others only weakly see.

    The returned bundle is complete (all masks one) and already split with
    ``spec.seed`` so that every label column has both classes in each part.
    """
    rng = np.random.default_rng(spec.seed)
    n, k = spec.n, spec.latent_dim
    h = rng.standard_normal((n, k))
    views = []
    for l, d in enumerate(spec.view_dims):
        emphasis = np.where(np.arange(k) % spec.m == l, 1.0, 1.0 - spec.view_specificity)
        A = rng.standard_normal((k, d)) / math.sqrt(k) * emphasis[:, None]
        b = 0.5 * rng.standard_normal(d)
        X = np.tanh(h @ A + b)
        if spec.noise_std > 0:
            X = X + spec.noise_std * rng.standard_normal((n, d))
        views.append(X)
    base = DatasetBundle(views, np.zeros((n, spec.c)), np.ones((n, spec.m)),
                         np.ones((n, spec.c)), name=spec.name)
    parts = split(base, spec.seed).split
    for _ in range(100):
        scores = h @ rng.standard_normal((k, spec.c))
        thresh = np.quantile(scores, spec.label_quantile, axis=0)
        Y = (scores > thresh).astype(np.float64)
        if _labels_ok(Y, parts):
            return replace(base, labels=Y, split=parts).validate()
    raise ValueError("could not draw non-degenerate labels in 100 attempts")
