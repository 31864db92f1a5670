"""Stage one: per-view variational encoders trained with an information-bottleneck loss.

Each view gets an encoder emitting a mean ``P`` and a positive scale ``Q``;
``V = P + noise * Q`` feeds a small per-view classifier. The loss is the masked
binary cross-entropy of that classifier plus ``delta`` times a Gaussian
compression penalty that pulls ``(P, Q)`` towards ``(0, 1)``.
"""
from dataclasses import dataclass, replace

import numpy as np

from tacvi import tensor as T
from tacvi.nn import MLP, Linear
from tacvi.tensor import Matrix, ShapeError

SCALE_FLOOR = 1e-6


class TAEncoder:
    """Linear trunk + ReLU feeding parallel mean and scale heads."""

    def __init__(self, d_x, d_v, hidden, rng, name):
        self.trunk = Linear(d_x, hidden, rng, f"{name}.trunk")
        self.mean_head = Linear(hidden, d_v, rng, f"{name}.mean")
        self.scale_head = Linear(hidden, d_v, rng, f"{name}.scale")

    def __call__(self, x):
        h = T.relu(self.trunk(x))
        p = self.mean_head(h)
        q = T.shift(T.softplus(self.scale_head(h)), SCALE_FLOOR)
        return p, q

    def parameters(self):
        return (self.trunk.parameters() + self.mean_head.parameters()
                + self.scale_head.parameters())


class Stage1Model:
    """Per-view encoder/classifier pairs plus the per-view compression weights.

    With ``passthrough=True`` the encoders are replaced by a fixed identity-like
    projection of the raw features (used when the stage-one loss is ablated).
    """

    def __init__(self, view_dims, d_v, c, delta=1e-2, hidden=512, cls_hidden=256,
                 seed=0, passthrough=False):
        m = len(view_dims)
        self.view_dims = list(view_dims)
        self.d_v = [d_v] * m if np.isscalar(d_v) else list(d_v)
        self.delta = [float(delta)] * m if np.isscalar(delta) else [float(x) for x in delta]
        if len(self.d_v) != m or len(self.delta) != m:
            raise ValueError("d_v and delta need one entry per view")
        self.c = c
        self.passthrough = passthrough
        rng = np.random.default_rng(seed)
        self.encoders = [TAEncoder(dx, dv, hidden, rng, f"s1.enc{l}")
                         for l, (dx, dv) in enumerate(zip(self.view_dims, self.d_v))]
        self.classifiers = [MLP([dv, cls_hidden, c], rng, f"s1.cls{l}", out_sigmoid=True)
                            for l, dv in enumerate(self.d_v)]

    @property
    def m(self):
        return len(self.view_dims)

    def view_parameters(self, l):
        return self.encoders[l].parameters() + self.classifiers[l].parameters()

    def parameters(self):
        return [p for l in range(self.m) for p in self.view_parameters(l)]


def identity_projection(d_x, d_v):
    """d_x x d_v matrix with ones on the leading diagonal."""
    return np.eye(d_x, d_v)


def _as_matrix(x):
    return x if isinstance(x, Matrix) else Matrix(x)


def ta_encode(X, model, l):
    X = _as_matrix(X)
    if X.cols != model.view_dims[l]:
        raise ShapeError(f"view {l}: expected {model.view_dims[l]} features, got {X.cols}")
    if not np.all(np.isfinite(X.data)):
        raise ValueError(f"view {l}: non-finite input features")
    return model.encoders[l](X)


def draw_noise(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def reparameterize(P, Q, seed=None, deterministic=False, noise=None):
    """``P + noise * Q`` with standard-normal noise; ``P`` itself when deterministic."""
    if P.shape != Q.shape:
        raise ShapeError(f"reparameterize: P {P.shape} vs Q {Q.shape}")
    if deterministic:
        return P
    if np.any(Q.data <= 0):
        raise T.DomainError("reparameterize: scale must be positive")
    if noise is None:
        noise = draw_noise(P.shape, seed)
    return T.add(P, T.mul(Matrix(noise), Q))


def compression_term(P, Q, U_col):
    return T.compression(P, Q, np.asarray(U_col, dtype=np.float64))


def masked_view_bce(Y_pred, Y, U_col, G):
    Y = np.asarray(Y, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if G.shape != Y.shape:
        raise ShapeError(f"masked_view_bce: G {G.shape} vs Y {Y.shape}")
    weight = np.asarray(U_col, dtype=np.float64).reshape(-1, 1) * G
    return T.masked_bce(Y_pred, Y, weight)


@dataclass
class Stage1Terms:
    loss: Matrix
    bce: Matrix
    compression: Matrix


def stage1_terms(batch, model, l, seed):
    U_col = batch.view_mask[:, l]
    P, Q = ta_encode(batch.views[l], model, l)
    V = reparameterize(P, Q, seed=seed)
    bce = masked_view_bce(model.classifiers[l](V), batch.labels, U_col, batch.label_mask)
    comp = compression_term(P, Q, U_col)
    delta = model.delta[l]
    loss = T.add(bce, T.scale(comp, delta)) if delta else bce
    return Stage1Terms(loss, bce, comp)


def stage1_loss(batch, model, l, seed):
    """Masked BCE of view ``l``'s classifier plus delta times the compression term."""
    return stage1_terms(batch, model, l, seed).loss


def stage1_infer_features(bundle, model, batch_size=1024):
    """Deterministic features (the encoder means) for every sample of every view."""
    feats = []
    for l in range(model.m):
        X = bundle.views[l]
        if model.passthrough:
            feats.append(X @ identity_projection(X.shape[1], model.d_v[l]))
            continue
        rows = [ta_encode(X[i:i + batch_size], model, l)[0].data
                for i in range(0, X.shape[0], batch_size)]
        feats.append(np.vstack(rows))
    return feats


def subset(bundle, idx):
    """Row subset of a bundle (used as a mini-batch)."""
    split = None if bundle.split is None else bundle.split[idx]
    return replace(bundle, views=[v[idx] for v in bundle.views], labels=bundle.labels[idx],
                   view_mask=bundle.view_mask[idx], label_mask=bundle.label_mask[idx],
                   split=split)
