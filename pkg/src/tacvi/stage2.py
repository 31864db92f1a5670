"""Stage two: cross-view imputation and classification from completed views.

Forward pass for a batch of stage-one features ``V_l`` with view mask ``U``::

    Z_l  = enc_l(V_l)                       view embeddings
    Zhat = mean of available Z_l            indicator-weighted fusion
    V'_l = dec_l(Zhat)                      reconstructions, L_re on observed rows
    T_l  = V_l where observed else V'_l     completed views
    ZT_l = enc_l(T_l)                       same encoder as above
    ZT   = (1/m) sum_l softmax(w)_l ZT_l    learnable-weight fusion
    Y'   = clf(ZT)                          L_c = G-masked BCE
    loss = L_c + alpha * L_re
"""
from dataclasses import dataclass

import numpy as np

from tacvi import tensor as T
from tacvi.nn import MLP
from tacvi.tensor import Matrix, ShapeError


class Stage2Model:
    def __init__(self, d_v, d_e, c, alpha=10.0, hidden=256, cls_hidden=256, seed=0):
        self.d_v = list(d_v)
        self.d_e = d_e
        self.c = c
        self.alpha = float(alpha)
        rng = np.random.default_rng(seed)
        m = len(self.d_v)
        self.encoders = [MLP([dv, hidden, d_e], rng, f"s2.enc{l}") for l, dv in enumerate(self.d_v)]
        self.decoders = [MLP([d_e, hidden, dv], rng, f"s2.dec{l}") for l, dv in enumerate(self.d_v)]
        self.fusion_logits = Matrix(np.zeros((1, m)), requires_grad=True, name="s2.fusion_logits")
        self.classifier = MLP([d_e, cls_hidden, c], rng, "s2.cls", out_sigmoid=True)

    @property
    def m(self):
        return len(self.d_v)

    def parameters(self):
        params = []
        for enc, dec in zip(self.encoders, self.decoders):
            params += enc.parameters() + dec.parameters()
        return params + [self.fusion_logits] + self.classifier.parameters()

    def fusion_weights(self):
        return T.row_softmax(self.fusion_logits)


def _as_matrix(x):
    return x if isinstance(x, Matrix) else Matrix(x)


def vs_encode(V_l, model, l):
    V_l = _as_matrix(V_l)
    if V_l.cols != model.d_v[l]:
        raise ShapeError(f"vs_encode view {l}: expected {model.d_v[l]} columns, got {V_l.cols}")
    return model.encoders[l](V_l)


def fusion_row_weights(U):
    U = np.asarray(U, dtype=np.float64)
    counts = U.sum(axis=1, keepdims=True)
    if np.any(counts < 1):
        raise ValueError("fuse_incomplete: a sample has no observed view")
    return U / counts


def fuse_incomplete(Z_list, U):
    """Mean of the embeddings of each sample's observed views."""
    return T.row_weighted_sum(list(Z_list), fusion_row_weights(U))


def vs_decode(Z_hat, model, l):
    if Z_hat.cols != model.d_e:
        raise ShapeError(f"vs_decode: expected {model.d_e} columns, got {Z_hat.cols}")
    return model.decoders[l](Z_hat)


def reconstruction_loss(Vp_list, V_list, U):
    """(1/(n*m)) sum_i sum_l ||V'_l[i] - V_l[i]||^2 / d_l * U[i, l]."""
    U = np.asarray(U, dtype=np.float64)
    n, m = U.shape
    if len(Vp_list) != m or len(V_list) != m:
        raise ShapeError(f"reconstruction_loss: {len(Vp_list)}/{len(V_list)} views for mask with {m}")
    terms = []
    for l, (Vp, V) in enumerate(zip(Vp_list, V_list)):
        err = T.row_sq_error(Vp, _as_matrix(V), U[:, l])
        terms.append(T.scale(err, 1.0 / (Vp.cols * n * m)))
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out


def impute(V_list, Vp_list, U):
    """Completed views: observed rows of V_l, reconstructed rows elsewhere."""
    U = np.asarray(U)
    return [T.select_rows(U[:, l] == 1, _as_matrix(V), Vp)
            for l, (V, Vp) in enumerate(zip(V_list, Vp_list))]


def fuse_complete(ZT_list, sigma):
    m = len(ZT_list)
    if sigma.shape != (1, m):
        raise ShapeError(f"fuse_complete: {sigma.shape} weights for {m} views")
    return T.scale(T.weighted_sum(list(ZT_list), sigma), 1.0 / m)


def classify(Z_T, model):
    if Z_T.cols != model.d_e:
        raise ShapeError(f"classify: expected {model.d_e} columns, got {Z_T.cols}")
    return model.classifier(Z_T)


def masked_bce(Y_pred, Y, G):
    return T.masked_bce(Y_pred, np.asarray(Y, dtype=np.float64), np.asarray(G, dtype=np.float64))


@dataclass
class Stage2Output:
    loss: Matrix
    L_c: Matrix
    L_re: Matrix
    Y_pred: Matrix


def stage2_forward(V_list, U, Y, G, model, impute_views=True, detach_imputation=False,
                   use_reconstruction=True):
    """Full stage-two pass. ``use_reconstruction=False`` drops L_re from the objective."""
    V_list = [_as_matrix(V) for V in V_list]
    Z = [vs_encode(V, model, l) for l, V in enumerate(V_list)]
    Z_hat = fuse_incomplete(Z, U)
    Vp = [vs_decode(Z_hat, model, l) for l in range(model.m)]
    L_re = reconstruction_loss(Vp, V_list, U)
    if impute_views:
        if detach_imputation:
            Vp = [T.detach(v) for v in Vp]
        completed = impute(V_list, Vp, U)
        ZT = [vs_encode(t, model, l) for l, t in enumerate(completed)]
        fused = fuse_complete(ZT, model.fusion_weights())
    else:
        fused = Z_hat
    Y_pred = classify(fused, model)
    L_c = masked_bce(Y_pred, Y, G)
    if use_reconstruction and model.alpha:
        loss = T.add(L_c, T.scale(L_re, model.alpha))
    else:
        loss = L_c
    return Stage2Output(loss, L_c, L_re, Y_pred)


def stage2_loss(V_list, U, Y, G, model, **flags):
    return stage2_forward(V_list, U, Y, G, model, **flags).loss


def predict(V_list, U, model, impute_views=True, batch_size=1024):
    """Label scores for every sample; no tape, deterministic."""
    n = np.asarray(U).shape[0]
    out = []
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        Vb = [Matrix(V[sl]) for V in V_list]
        Ub = np.asarray(U)[sl]
        Z = [vs_encode(V, model, l) for l, V in enumerate(Vb)]
        Z_hat = fuse_incomplete(Z, Ub)
        if impute_views:
            Vp = [vs_decode(Z_hat, model, l) for l in range(model.m)]
            ZT = [vs_encode(t, model, l) for l, t in enumerate(impute(Vb, Vp, Ub))]
            fused = fuse_complete(ZT, model.fusion_weights())
        else:
            fused = Z_hat
        out.append(classify(fused, model).data)
    return np.vstack(out)
