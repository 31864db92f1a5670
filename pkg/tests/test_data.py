import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacvi import data as D
from tacvi.data import DatasetBundle, LoadError, ProtocolError, SyntheticSpec


def complete_bundle(n, m, c=2, d=3, seed=0):
    rng = np.random.default_rng(seed)
    views = [rng.normal(size=(n, d + l)) for l in range(m)]
    Y = (rng.random((n, c)) > 0.5).astype(float)
    return DatasetBundle(views, Y, np.ones((n, m)), np.ones((n, c)))


def write_manifest(tmp_path, views, labels, **extra):
    names = []
    for l, rows in enumerate(views):
        p = tmp_path / f"v{l}.csv"
        p.write_text("\n".join(",".join(str(x) for x in r) for r in rows) + "\n")
        names.append(p.name)
    (tmp_path / "y.csv").write_text("\n".join(",".join(r) for r in labels) + "\n")
    manifest = {"name": "toy", "views": names, "labels": "y.csv", **extra}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_manifest(tmp_path):
    path = write_manifest(tmp_path, [np.ones((4, 3)), np.zeros((4, 2))],
                          [["1", "0"], ["0", "1"], ["1", "1"], ["0", "0"]])
    b = D.load_dataset(path)
    assert (b.n, b.m, b.c) == (4, 2, 2)
    assert b.view_dims == [3, 2]
    assert b.view_mask.all() and b.label_mask.all()


def test_load_row_mismatch(tmp_path):
    path = write_manifest(tmp_path, [np.ones((4, 3)), np.ones((5, 2))],
                          [["1"], ["0"], ["1"], ["0"]])
    with pytest.raises(LoadError, match="v1.csv"):
        D.load_dataset(path)


def test_load_non_binary_label(tmp_path):
    path = write_manifest(tmp_path, [np.ones((2, 1)), np.ones((2, 1))], [["1"], ["2"]])
    with pytest.raises(LoadError, match=r"y.csv:2"):
        D.load_dataset(path)


def test_load_malformed_csv_reports_line(tmp_path):
    path = write_manifest(tmp_path, [np.ones((3, 2)), np.ones((3, 2))], [["1"], ["0"], ["1"]])
    (tmp_path / "v0.csv").write_text("1,2\n3,abc\n5,6\n")
    with pytest.raises(LoadError, match=r"v0.csv:2"):
        D.load_dataset(path)


def test_save_load_roundtrip_bitwise(tmp_path):
    b = D.split(D.mask_labels(D.mask_views(complete_bundle(30, 3), 40, 1), 30, 2), 3)
    b.views[0][1, 1] = np.nextafter(0.1, 1)          # a value that %.6g would mangle
    path = D.save_dataset(b, tmp_path)
    r = D.load_dataset(path)
    for x, y in zip(b.views, r.views):
        assert np.array_equal(x, y)
    for f in ("labels", "view_mask", "label_mask", "split"):
        assert np.array_equal(getattr(b, f), getattr(r, f))


def test_mask_views_zero_rate():
    b = complete_bundle(20, 3)
    assert D.mask_views(b, 0, 1).view_mask.all()


def test_mask_views_counts_n100_m3_a50():
    b = complete_bundle(100, 3)
    out = D.mask_views(b, 50, 7)
    assert list((out.view_mask == 0).sum(axis=0)) == [50, 50, 50]
    assert out.view_mask.sum(axis=1).min() >= 1
    for l, v in enumerate(out.views):
        assert np.all(v[out.view_mask[:, l] == 0] == 0)


def feasible_by_enumeration(n, m, k):
    """Can every view lose exactly k samples with each sample keeping one view?"""
    subsets = list(itertools.combinations(range(n), k))
    for choice in itertools.product(subsets, repeat=m):
        kept = np.ones((n, m))
        for l, rows in enumerate(choice):
            kept[list(rows), l] = 0
        if kept.sum(axis=1).min() >= 1:
            return True
    return False


@pytest.mark.parametrize("n,m,a", [(2, 2, 90), (3, 2, 60), (4, 3, 70), (5, 2, 60), (6, 3, 90)])
def test_mask_views_feasibility_matches_enumeration(n, m, a):
    k = D.percent_count(a, n)
    feasible = feasible_by_enumeration(n, m, k)
    if feasible:
        out = D.mask_views(complete_bundle(n, m), a, 0)
        assert out.view_mask.sum(axis=1).min() >= 1
        assert list((out.view_mask == 0).sum(axis=0)) == [k] * m
    else:
        with pytest.raises(ProtocolError, match="achievable maximum"):
            D.mask_views(complete_bundle(n, m), a, 0)


def test_mask_views_infeasible_reports_max():
    with pytest.raises(ProtocolError, match="achievable maximum is 59%"):
        D.mask_views(complete_bundle(10, 2), 90, 0)


def test_mask_views_bounds():
    with pytest.raises(ValueError):
        D.mask_views(complete_bundle(10, 2), 95, 0)
    with pytest.raises(ValueError):
        D.mask_views(complete_bundle(10, 1), 10, 0)


def test_mask_labels_counts():
    n = 100
    Y = np.zeros((n, 1))
    Y[:10] = 1
    b = DatasetBundle([np.ones((n, 2)), np.ones((n, 2))], Y, np.ones((n, 2)), np.ones((n, 1)))
    out = D.mask_labels(b, 50, 3)
    hidden = out.label_mask[:, 0] == 0
    assert hidden[:10].sum() == 5 and hidden[10:].sum() == 45
    assert np.all(out.labels[hidden] == 0)


def test_mask_labels_zero_and_bounds():
    b = complete_bundle(20, 2)
    assert D.mask_labels(b, 0, 1).label_mask.all()
    with pytest.raises(ValueError):
        D.mask_labels(b, 100, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 60), st.integers(2, 4), st.integers(0, 60), st.integers(0, 90),
       st.integers(0, 2**31))
def test_masking_properties(n, m, a, b_pct, seed):
    base = complete_bundle(n, m, c=3, seed=seed % 97)
    k = D.percent_count(a, n)
    if k * m > n * (m - 1):
        return
    try:
        out = D.mask_views(base, a, seed)
    except ProtocolError:
        return          # the sequential draw may run out near the bound
    assert list((out.view_mask == 0).sum(axis=0)) == [k] * m
    assert out.view_mask.sum(axis=1).min() >= 1
    out2 = D.mask_labels(out, b_pct, seed)
    for j in range(3):
        pos = base.labels[:, j] == 1
        hidden = out2.label_mask[:, j] == 0
        assert hidden[pos].sum() == D.percent_count(b_pct, pos.sum())
        assert hidden[~pos].sum() == D.percent_count(b_pct, (~pos).sum())
    again = D.mask_labels(D.mask_views(base, a, seed), b_pct, seed)
    assert np.array_equal(again.view_mask, out2.view_mask)
    assert np.array_equal(again.label_mask, out2.label_mask)
    out2.validate()


def test_split_counts():
    assert D.split_counts(100) == (70, 15, 15)
    assert D.split_counts(10) == (7, 1, 2)
    b = D.split(complete_bundle(100, 2), 5)
    assert [int((b.split == p).sum()) for p in (D.TRAIN, D.VAL, D.TEST)] == [70, 15, 15]
    assert np.array_equal(b.split, D.split(complete_bundle(100, 2), 5).split)
    with pytest.raises(ValueError):
        D.split(complete_bundle(9, 2), 0)


@pytest.mark.parametrize("n", [10, 11, 37, 100, 2000])
def test_split_proportions(n):
    tr, va, te = D.split_counts(n)
    assert abs(tr - 0.7 * n) < 1 and abs(va - 0.15 * n) < 1 and abs(te - 0.15 * n) < 2


def linear_r2(X, Y, train):
    X1 = np.c_[X, np.ones(len(X))]
    B = np.linalg.lstsq(X1[train], Y[train], rcond=None)[0]
    resid = Y[~train] - X1[~train] @ B
    return 1 - (resid ** 2).sum() / ((Y[~train] - Y[~train].mean(0)) ** 2).sum()


def test_synthetic_noise_free_views_share_latent():
    b = D.generate_synthetic(SyntheticSpec(n=2000, m=2, view_dims=[32, 32], noise_std=0.0, seed=4))
    assert linear_r2(b.views[0], b.views[1], b.split == D.TRAIN) >= 0.5


def test_synthetic_label_quantile():
    b = D.generate_synthetic(SyntheticSpec(n=1000, label_quantile=0.5, seed=1))
    frac = b.labels.mean(axis=0)
    assert np.all(np.abs(frac - 0.5) <= 0.02)


def test_synthetic_deterministic_and_valid():
    spec = SyntheticSpec(n=200, seed=9)
    a, b = D.generate_synthetic(spec), D.generate_synthetic(spec)
    for x, y in zip(a.views, b.views):
        assert np.array_equal(x, y)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.split, b.split)
    for p in (D.TRAIN, D.VAL, D.TEST):
        sub = a.labels[a.split == p]
        assert sub.sum(axis=0).min() >= 1 and (1 - sub).sum(axis=0).min() >= 1


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n=5)
    with pytest.raises(ValueError):
        SyntheticSpec(m=1, view_dims=[3])


def test_percent_count_is_exact():
    assert D.percent_count(50, 100) == 50
    assert D.percent_count(0.29, 10000) == 29
    assert D.percent_count(90, 2) == math.floor(1.8)
