import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from vaeac import data
from vaeac.data import (
    CATEGORICAL,
    REAL,
    Dataset,
    Feature,
    FeatureSchema,
    SchemaError,
    apply_normalization,
    corrupt,
    denormalize,
    load_csv,
    normalize,
    parse_schema_config,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


SCHEMA = parse_schema_config("a = real\ncolor = categorical\nflag = binary\n")


# --- CSV ------------------------------------------------------------------------

def test_empty_cell_is_missing(tmp_path):
    ds = load_csv(write(tmp_path, "d.csv", "a,color,flag\n1.5,red,1\n,blue,0\n"), SCHEMA)
    assert np.isnan(ds.values[1, 0])
    assert ds.values[0, 0] == 1.5


def test_categorical_first_seen_order(tmp_path):
    ds = load_csv(write(tmp_path, "d.csv", "a,color,flag\n1,a,0\n2,b,0\n3,a,1\n"), SCHEMA)
    np.testing.assert_array_equal(ds.values[:, 1], [0, 1, 0])
    assert ds.schema.features[1].labels == ["a", "b"]


def test_declared_label_order_and_unknown_label(tmp_path):
    conf = parse_schema_config("color = categorical: z, a\n")
    ds = load_csv(write(tmp_path, "d.csv", "color\na\nz\n"), conf)
    np.testing.assert_array_equal(ds.values[:, 0], [1, 0])
    with pytest.raises(SchemaError, match="line 3"):
        load_csv(write(tmp_path, "e.csv", "color\na\nq\n"), conf)


def test_ragged_row_names_line(tmp_path):
    with pytest.raises(SchemaError, match="line 3"):
        load_csv(write(tmp_path, "d.csv", "a,color,flag\n1,a,0\n2,b\n"), SCHEMA)


def test_unparsable_real(tmp_path):
    with pytest.raises(SchemaError, match="line 2"):
        load_csv(write(tmp_path, "d.csv", "a,color,flag\nabc,a,0\n"), SCHEMA)


def test_undeclared_column(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, "d.csv", "a,zzz\n1,2\n"), SCHEMA)


def test_target_and_image_shape_keys(tmp_path):
    conf = parse_schema_config("p0 = binary\np1 = binary\np2=binary\np3=binary\n_image_shape = 2x2\n")
    ds = load_csv(write(tmp_path, "d.csv", "p0,p1,p2,p3\n0,1,1,0\n"), conf)
    assert ds.meta["image_shape"] == (2, 2)
    conf = parse_schema_config("a = real\ny = real\n_target = y\n")
    ds = load_csv(write(tmp_path, "t.csv", "a,y\n1,2\n"), conf)
    assert ds.schema.target == 1


def test_csv_round_trip(tmp_path):
    ds = load_csv(write(tmp_path, "d.csv", "a,color,flag\n1.25,red,1\n,blue,\n-3,red,0\n"), SCHEMA)
    out = tmp_path / "out.csv"
    data.write_csv(ds, out)
    conf = parse_schema_config(data.schema_config_text(ds.schema))
    again = load_csv(out, conf)
    np.testing.assert_array_equal(np.isnan(again.values), np.isnan(ds.values))
    np.testing.assert_array_equal(np.nan_to_num(again.values), np.nan_to_num(ds.values))


def test_categorical_needs_two_labels():
    with pytest.raises(SchemaError):
        FeatureSchema([Feature("c", CATEGORICAL, ["only"])]).validate()


# --- normalization ------------------------------------------------------------------

def test_normalize_population_std():
    ds = normalize(Dataset(FeatureSchema.all_real(1), np.array([[0.0], [2.0]])))
    np.testing.assert_allclose(ds.values[:, 0], [-1.0, 1.0])
    assert ds.schema.features[0].mean == 1.0 and ds.schema.features[0].std == 1.0


def test_normalize_skips_missing_and_categoricals():
    schema = FeatureSchema([Feature("x", REAL), Feature("c", CATEGORICAL, ["a", "b"])])
    ds = normalize(Dataset(schema, np.array([[1.0, 0.0], [np.nan, 1.0], [3.0, 1.0]])))
    assert np.isnan(ds.values[1, 0])
    np.testing.assert_allclose(ds.values[[0, 2], 0], [-1.0, 1.0])
    np.testing.assert_array_equal(ds.values[:, 1], [0.0, 1.0, 1.0])


def test_constant_column_rejected():
    with pytest.raises(SchemaError):
        normalize(Dataset(FeatureSchema.all_real(1), np.ones((4, 1))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_round_trip(x):
    if np.any(x.std(axis=0) < 1e-3):
        return
    ds = normalize(Dataset(FeatureSchema.all_real(3), x))
    np.testing.assert_allclose(denormalize(ds.values, ds.schema), x, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(apply_normalization(x, ds.schema), ds.values, atol=1e-12)


# --- corruption and split ------------------------------------------------------------

def test_corrupt_extremes():
    ds = Dataset(FeatureSchema.all_real(3), np.ones((4, 3)))
    assert not corrupt(ds, 0.0, np.random.default_rng()).missing.any()
    assert corrupt(ds, 1.0, np.random.default_rng()).missing.all()


def test_corrupt_rate_binomial_bound():
    ds = Dataset(FeatureSchema.all_real(10), np.zeros((10_000, 10)))
    frac = corrupt(ds, 0.5, np.random.default_rng(1)).missing.mean()
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 100_000)


def test_corrupt_spares_target():
    schema = FeatureSchema(FeatureSchema.all_real(3).features, target=2)
    out = corrupt(Dataset(schema, np.zeros((500, 3))), 1.0, np.random.default_rng(2))
    assert not out.missing[:, 2].any() and out.missing[:, :2].all()


def test_corrupt_rejects_bad_rate():
    with pytest.raises(ValueError):
        corrupt(Dataset(FeatureSchema.all_real(1), np.zeros((2, 1))), -0.1, np.random.default_rng())


def test_train_test_split_3_to_1():
    ds = Dataset(FeatureSchema.all_real(1), np.arange(100.0)[:, None])
    tr, te = data.train_test_split(ds, np.random.default_rng(3))
    assert (len(tr), len(te)) == (75, 25)
    assert sorted(np.concatenate([tr.values, te.values])[:, 0]) == list(range(100))


# --- synthetic mixture ---------------------------------------------------------------

def test_synth_default_size():
    assert len(data.synth_mixture(rng=np.random.default_rng(0))) == 100_000


@pytest.mark.parametrize("std", [0.1, np.sqrt(0.1)])
def test_synth_component_covariance(std):
    # [DERIVED] moment oracle: per-component covariance std^2 I within 3 standard errors
    ds = data.synth_mixture(40_000, np.random.default_rng(4), component_std=std)
    comp = ds.meta["component"]
    for k in range(8):
        pts = ds.values[comp == k]
        cov = np.cov(pts.T)
        se = std**2 * np.sqrt(2 / (len(pts) - 1))
        np.testing.assert_allclose(np.diag(cov), std**2, atol=3 * se)
        assert abs(cov[0, 1]) < 3 * std**2 / np.sqrt(len(pts) - 1)


def test_synth_mixture_mean():
    ds = data.synth_mixture(100_000, np.random.default_rng(5))
    means = ds.meta["component_means"]
    total_sd = ds.values.std(axis=0)
    assert np.all(np.abs(ds.values.mean(axis=0) - means.mean(axis=0)) < 3 * total_sd / np.sqrt(len(ds)))


def test_synth_nearest_mean_purity():
    # [DERIVED] clustering audit on a well-separated seed
    for seed in range(50):
        means = np.random.default_rng(seed).normal(size=(8, 2))
        gaps = np.linalg.norm(means[:, None] - means[None], axis=-1) + np.eye(8) * 9
        if gaps.min() > 0.6:
            break
    ds = data.synth_mixture(20_000, np.random.default_rng(seed))
    nearest = np.argmin(((ds.values[:, None] - ds.meta["component_means"][None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == ds.meta["component"]) > 0.95


def test_mixture_log_density_matches_scipy():
    means = np.random.default_rng(6).normal(size=(8, 2))
    x = np.random.default_rng(7).normal(size=(5, 2))
    comps = np.stack([multivariate_normal(m, 0.01 * np.eye(2)).logpdf(x) for m in means], axis=1)
    ref = logsumexp(comps, axis=1) - np.log(8)
    np.testing.assert_allclose(data.mixture_log_density(x, means, 0.1), ref, rtol=1e-10)
    marg = np.stack([multivariate_normal(m[0], 0.01).logpdf(x[:, 0]) for m in means], axis=1)
    np.testing.assert_allclose(data.mixture_log_density(x, means, 0.1, dims=[0]),
                               logsumexp(marg, axis=1) - np.log(8), rtol=1e-10)


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        data.synth_mixture(0)


# --- IDX --------------------------------------------------------------------------------

def idx_bytes(images):
    n, r, c = images.shape
    return struct.pack(">IIII", 0x803, n, r, c) + images.astype(np.uint8).tobytes()


def test_idx_binarize_and_shape(tmp_path):
    imgs = np.zeros((3, 28, 28), dtype=np.uint8)
    imgs[1, 0, 0] = 255
    imgs[1, 0, 1] = 127
    imgs[1, 0, 2] = 128
    p = tmp_path / "img.idx"
    p.write_bytes(idx_bytes(imgs))
    ds = data.load_idx_images(p)
    assert ds.values.shape == (3, 784)
    assert ds.meta["image_shape"] == (28, 28)
    assert not ds.values[0].any()
    np.testing.assert_array_equal(ds.values[1, :3], [1, 0, 1])
    assert ds.schema.kinds == ["binary"] * 784


def test_idx_gzip_and_limit(tmp_path):
    imgs = np.random.default_rng(8).integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
    p = tmp_path / "img.idx.gz"
    with gzip.open(p, "wb") as fh:
        fh.write(idx_bytes(imgs))
    np.testing.assert_array_equal(data.read_idx_images(p), imgs)
    assert len(data.load_idx_images(p, limit=2)) == 2


def test_idx_write_read_round_trip(tmp_path):
    imgs = np.random.default_rng(9).integers(0, 256, size=(4, 5, 6)).astype(np.uint8)
    data.write_idx_images(imgs, tmp_path / "x.idx")
    np.testing.assert_array_equal(data.read_idx_images(tmp_path / "x.idx"), imgs)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))
    with pytest.raises(ValueError, match="magic"):
        data.read_idx_images(p)


def test_idx_truncated(tmp_path):
    p = tmp_path / "short.idx"
    p.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5))
    with pytest.raises(ValueError, match="truncated"):
        data.read_idx_images(p)
    p.write_bytes(bytes(7))
    with pytest.raises(ValueError, match="truncated"):
        data.read_idx_images(p)


def test_idx_labels(tmp_path):
    p = tmp_path / "lab.idx"
    p.write_bytes(struct.pack(">II", 0x801, 3) + bytes([7, 0, 9]))
    np.testing.assert_array_equal(data.read_idx_labels(p), [7, 0, 9])


# --- tabular surrogate ------------------------------------------------------------------

def test_wine_surrogate_moments():
    ds = data.wine_surrogate(20_000, np.random.default_rng(10))
    assert ds.schema.names[-1] == "quality" and ds.schema.target == 11
    corr = np.corrcoef(ds.values.T)
    assert corr[3, 7] > 0.6  # residual sugar vs density
    assert corr[7, 10] < -0.6  # density vs alcohol
    assert set(np.unique(ds.values[:, -1])) <= set(range(3, 10))
    assert abs(ds.values[:, 10].mean() - 10.51) < 0.05
