import csv

import numpy as np
import pytest

from vaeac import checkpoint, cli, data
from vaeac.data import CATEGORICAL, REAL, Dataset, Feature, FeatureSchema

FAST = ["--epochs", "1", "--hidden", "8", "--latent-dim", "2", "--batch-size", "32"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def mixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.run(["synth", "--n", "300", "--seed", "7", "--out", str(root / "mix.csv"),
                    "--means-out", str(root / "means.csv")]) == 0
    assert cli.run(["train", "--data", str(root / "mix.csv"), "--schema", str(root / "mix.schema"),
                    "--mask", "bernoulli:0.5", "--out", str(root / "mix.ckpt"), *FAST]) == 0
    return root


@pytest.fixture(scope="module")
def tabular(tmp_path_factory):
    root = tmp_path_factory.mktemp("tab")
    schema = FeatureSchema([Feature("a", REAL), Feature("c", CATEGORICAL, ["x", "y"]), Feature("y", REAL)], target=2)
    rng = np.random.default_rng(0)
    a = rng.normal(size=120)
    c = rng.integers(0, 2, 120)
    values = np.column_stack([a, c, a + c + 0.1 * rng.normal(size=120)])
    data.write_csv(Dataset(schema, values), root / "full.csv")
    (root / "full.schema").write_text(data.schema_config_text(schema))
    return root


# --- exit codes and config ------------------------------------------------------------------

def test_unknown_flag_is_usage_error(capsys):
    assert cli.run(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand():
    assert cli.run(["frobnicate"]) == 1


def test_missing_required_option(capsys):
    assert cli.run(["train"]) == 1
    assert "--data" in capsys.readouterr().err


def test_bad_value_is_usage_error():
    assert cli.run(["synth", "--n", "many", "--out", "x.csv"]) == 1


def test_runtime_error_exit_code(tmp_path, capsys):
    assert cli.run(["impute", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", "x.csv", "--out", "y.csv"]) == 2
    assert "error" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("n = 50\nseed = 3\ncomponent_std = 0.2\n")
    assert cli.run(["synth", "--config", str(conf), "--seed", "4", "--out", str(tmp_path / "m.csv")]) == 0
    err = capsys.readouterr().err
    assert "n = 50" in err and "seed = 4" in err and "component_std = 0.2" in err
    rows = read_rows(tmp_path / "m.csv")
    assert len(rows) == 50
    again = data.synth_mixture(50, np.random.default_rng(4), component_std=0.2)
    np.testing.assert_allclose(float(rows[0]["x1"]), again.values[0, 0], rtol=1e-12)


def test_echoed_config_reproduces_run(tmp_path, capsys):
    assert cli.run(["synth", "--n", "20", "--seed", "9", "--out", str(tmp_path / "a.csv")]) == 0
    echoed = capsys.readouterr().err.splitlines()[1:]
    conf = tmp_path / "echo.conf"
    conf.write_text("\n".join(line.replace(str(tmp_path / "a.csv"), str(tmp_path / "b.csv")) for line in echoed))
    assert cli.run(["synth", "--config", str(conf)]) == 0
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = red\n")
    assert cli.run(["synth", "--config", str(conf), "--out", str(tmp_path / "x.csv")]) == 1


# --- synth / train / sample / impute / loglik ----------------------------------------------

def test_checkpoint_written(mixture):
    ck = checkpoint.load(mixture / "mix.ckpt")
    assert ck.kind == "vaeac" and ck.mask == "bernoulli:0.5"
    assert ck.model.config.hidden == (8,)


def test_sample_line_count(mixture, tmp_path):
    cond = tmp_path / "cond.csv"
    cond.write_text("x1,x2\n0.5,\n,\n,-1.0\n")
    out = tmp_path / "samples.csv"
    assert cli.run(["sample", "--checkpoint", str(mixture / "mix.ckpt"), "--data", str(cond), "--n", "4",
                    "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 3 * 4
    assert list(rows[0]) == ["row_id", "sample_id", "x1", "x2"]
    assert {r["x1"] for r in rows if r["row_id"] == "0"} == {"0.5"}
    assert all(r["x2"] for r in rows)


def test_sample_header_only(mixture, tmp_path):
    cond = tmp_path / "empty.csv"
    cond.write_text("x1,x2\n")
    out = tmp_path / "samples.csv"
    ck = checkpoint.load(mixture / "mix.ckpt")
    assert cli.emit_samples_csv(ck, cond, out, 5, np.random.default_rng(0)) == 0
    assert out.read_text().strip() == "row_id,sample_id,x1,x2"


def test_impute_never_alters_observed_cells(mixture, tmp_path):
    rng = np.random.default_rng(1)
    full = read_rows(mixture / "mix.csv")[:40]
    holes = tmp_path / "holes.csv"
    with open(holes, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        for r in full:
            w.writerow([v if rng.random() > 0.4 else "" for v in (r["x1"], r["x2"])])
    out, samples = tmp_path / "imputed.csv", tmp_path / "all.csv"
    assert cli.run(["impute", "--checkpoint", str(mixture / "mix.ckpt"), "--data", str(holes), "--n", "10",
                    "--out", str(out), "--samples-out", str(samples)]) == 0
    before, after = read_rows(holes), read_rows(out)
    assert len(after) == 40
    for b, a in zip(before, after):
        for k in ("x1", "x2"):
            if b[k]:
                assert a[k] == b[k]
            else:
                assert a[k] != ""
    assert len(read_rows(samples)) == 400


def test_loglik_reports(mixture, tmp_path, capsys):
    out = tmp_path / "nll.csv"
    assert cli.run(["loglik", "--checkpoint", str(mixture / "mix.ckpt"), "--data", str(mixture / "mix.csv"),
                    "--limit", "30", "--samples", "5", "--mask", "all", "--out", str(out)]) == 0
    assert "IS-5 NLL" in capsys.readouterr().out
    assert len(read_rows(out)) == 30
    assert cli.run(["loglik", "--checkpoint", str(mixture / "mix.ckpt"), "--data", str(mixture / "mix.csv"),
                    "--estimator", "xx"]) == 1


def test_train_is_reproducible(mixture, tmp_path):
    out = tmp_path / "again.ckpt"
    assert cli.run(["train", "--data", str(mixture / "mix.csv"), "--schema", str(mixture / "mix.schema"),
                    "--mask", "bernoulli:0.5", "--out", str(out), *FAST]) == 0
    assert out.read_bytes() == (mixture / "mix.ckpt").read_bytes()


# --- tabular and image pipelines -------------------------------------------------------------

def test_prepare_split_and_corrupt(tabular, tmp_path):
    assert cli.run(["prepare", "--data", str(tabular / "full.csv"), "--schema", str(tabular / "full.schema"),
                    "--train-fraction", "0.75", "--drop-rate", "0.5", "--out-train", str(tmp_path / "tr.csv"),
                    "--out-test", str(tmp_path / "te.csv"), "--seed", "2"]) == 0
    tr, te = read_rows(tmp_path / "tr.csv"), read_rows(tmp_path / "te.csv")
    assert (len(tr), len(te)) == (90, 30)
    assert all(r["y"] for r in tr)  # the target is never dropped
    assert any(not r["a"] for r in tr)


def test_um_train_and_hidden_target_impute(tabular, tmp_path):
    ck = tmp_path / "um.ckpt"
    assert cli.run(["train", "--model", "um", "--data", str(tabular / "full.csv"), "--schema",
                    str(tabular / "full.schema"), "--out", str(ck), *FAST]) == 0
    out = tmp_path / "imp.csv"
    assert cli.run(["impute", "--checkpoint", str(ck), "--data", str(tabular / "full.csv"), "--n", "2",
                    "--hide-target", "--out", str(out)]) == 0
    before, after = read_rows(tabular / "full.csv"), read_rows(out)
    assert [r["a"] for r in before] == [r["a"] for r in after]
    assert any(b["y"] != a["y"] for b, a in zip(before, after))


def test_eval_impute_report(tabular, tmp_path, capsys):
    report = tmp_path / "report.csv"
    assert cli.run(["eval-impute", "--data", str(tabular / "full.csv"), "--schema", str(tabular / "full.schema"),
                    "--repeats", "2", "--n", "2", "--name", "toy", "--report", str(report), *FAST]) == 0
    rows = read_rows(report)
    assert {r["metric"] for r in rows} >= {"nrmse", "pfc", "downstream", "baseline_nrmse"}
    assert all(r["dataset"] == "toy" for r in rows)


def test_eval_inpaint_on_idx_images(tmp_path, capsys):
    rng = np.random.default_rng(3)
    imgs = (rng.random((60, 6, 6)) < 0.3).astype(np.uint8) * 255
    data.write_idx_images(imgs[:40], tmp_path / "train.idx")
    data.write_idx_images(imgs[40:], tmp_path / "test.idx")
    ck = tmp_path / "img.ckpt"
    assert cli.run(["train", "--data", str(tmp_path / "train.idx"), "--mask", "line:2", "--out", str(ck), *FAST]) == 0
    assert checkpoint.load(ck).image_shape == (6, 6)
    report = tmp_path / "inpaint.csv"
    assert cli.run(["eval-inpaint", "--checkpoint", str(ck), "--data", str(tmp_path / "test.idx"),
                    "--train-data", str(tmp_path / "train.idx"), "--samples", "3", "--psnr-k", "2",
                    "--report", str(report)]) == 0
    metrics = {r["metric"] for r in read_rows(report)}
    assert metrics == {"IS-3 NLL", "MC-3 NLL", "NaiveBayes NLL", "best-of-2 PSNR"}
