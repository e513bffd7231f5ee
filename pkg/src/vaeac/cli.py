"""Command-line entry point: ``vaeac <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines;
explicit flags override the file, and the resolved configuration is echoed to
stderr as a ``key = value`` block that can be fed back through ``--config``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import data as data_mod
from .config import TrainConfig, format_value, load_kv, parse_value
from .data import Dataset, FeatureSchema
from .masks import MaskSpec, make_sampler

log = logging.getLogger("vaeac")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
IDX_SUFFIXES = (".idx", ".idx.gz", "ubyte", "ubyte.gz", ".idx3", ".idx3.gz")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- option registry ----------------------------------------------------------
# Options registered through ``_opt`` default to None in argparse so that the
# config file can fill anything the user did not pass explicitly.

def _opt(parser, name: str, default, kind=None, help: str = "", **kwargs):
    dest = name.lstrip("-").replace("-", "_")
    parser.set_defaults(**{f"_default_{dest}": (default, kind or (type(default) if default is not None else str))})
    parser.add_argument(name, dest=dest, default=None, help=f"{help} (default: {default})", **kwargs)


def _train_options(parser):
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        value = getattr(defaults, f.name)
        _opt(parser, "--" + f.name.replace("_", "-"), value, type(value), help=f"training: {f.name}")


def _resolve(args) -> dict:
    """Merge defaults < config file < explicit flags; parse values to their types."""
    file_values = load_kv(args.config) if getattr(args, "config", None) else {}
    specs = {k[len("_default_"):]: v for k, v in vars(args).items() if k.startswith("_default_")}
    unknown = sorted(set(file_values) - set(specs))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {}
    for dest, (default, kind) in specs.items():
        raw = getattr(args, dest)
        if raw is None and dest in file_values:
            raw = file_values[dest]
        if raw is None:
            resolved[dest] = default
            continue
        try:
            resolved[dest] = parse_value(str(raw), kind()) if kind in (bool, int, float, tuple) else raw
        except ValueError as exc:
            raise UsageError(f"bad value for {dest}: {raw!r} ({exc})") from None
    return resolved


def _echo(command: str, resolved: dict) -> None:
    lines = [f"# resolved config for '{command}'"]
    lines += [f"{k} = {format_value(v) if v is not None else ''}" for k, v in sorted(resolved.items())]
    print("\n".join(lines), file=sys.stderr)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# --- data helpers -------------------------------------------------------------

def _is_idx(path: str) -> bool:
    return str(path).endswith(IDX_SUFFIXES)


def load_dataset(path, schema_path=None, limit: int | None = None) -> Dataset:
    """CSV (needs a schema config) or IDX image file."""
    if _is_idx(path) or schema_path is None:
        if not _is_idx(path):
            raise UsageError(f"{path}: a --schema file is required for CSV data")
        return data_mod.load_idx_images(path, limit)
    ds = data_mod.load_csv(path, data_mod.load_schema_config(schema_path))
    return ds.subset(slice(0, limit)) if limit else ds


def load_for_model(path, schema: FeatureSchema, image_shape=None, limit: int | None = None) -> np.ndarray:
    """Values of a CSV or IDX file, with columns in the model's feature order."""
    if _is_idx(path):
        ds = data_mod.load_idx_images(path, limit)
        if len(ds.schema) != len(schema):
            raise ValueError(f"{path}: {len(ds.schema)} pixels, model expects {len(schema)} features")
        return ds.values
    conf = data_mod.parse_schema_config(data_mod.schema_config_text(schema))
    conf["target"] = None
    ds = data_mod.load_csv(path, conf)
    missing = [n for n in schema.names if n not in ds.schema.names]
    if missing:
        raise data_mod.SchemaError(f"{path}: missing columns {missing}")
    values = ds.values[:, [ds.schema.names.index(n) for n in schema.names]]
    return values[:limit] if limit else values


def _write_values(path, schema: FeatureSchema, values: np.ndarray, extra: dict | None = None) -> None:
    data_mod.write_csv(Dataset(schema, values), path, extra)


def emit_samples_csv(checkpoint, conditioning_file, out, n: int, rng: np.random.Generator) -> int:
    """Write ``row_id, sample_id, <features>`` for ``n`` samples per conditioning row.

    Empty cells of the conditioning file are the features to generate.
    Returns the number of data lines written.
    """
    from .evalharness import impute_samples

    schema = checkpoint.model.schema
    x = load_for_model(conditioning_file, schema)
    if len(x) == 0:
        samples = np.zeros((0, n, len(schema)))
    else:
        samples = impute_samples(checkpoint, x, np.isnan(x).astype(float), n, rng)
    rows, k, D = samples.shape
    _write_values(out, schema, samples.reshape(rows * k, D),
                  {"row_id": np.repeat(np.arange(rows), k), "sample_id": np.tile(np.arange(k), rows)})
    return rows * k


# --- subcommands ----------------------------------------------------------------

def cmd_prepare(cfg: dict) -> int:
    _require(cfg, "data")
    ds = load_dataset(cfg["data"], cfg["schema"], cfg["limit"] or None)
    rng = np.random.default_rng(cfg["seed"])
    image_shape = ds.meta.get("image_shape")
    parts = {"out": ds}
    if cfg["train_fraction"] < 1.0:
        train, test = data_mod.train_test_split(ds, rng, cfg["train_fraction"])
        parts = {"out_train": train, "out_test": test}
    for key, part in parts.items():
        _require(cfg, key)
        if cfg["drop_rate"] > 0:
            part = data_mod.corrupt(part, cfg["drop_rate"], rng)
        data_mod.write_csv(part, cfg[key])
        print(f"wrote {len(part)} rows to {cfg[key]}")
    schema_out = cfg["schema_out"] or str(Path(next(cfg[k] for k in parts)).with_suffix(".schema"))
    Path(schema_out).write_text(data_mod.schema_config_text(ds.schema, image_shape), encoding="utf-8")
    print(f"wrote schema to {schema_out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out")
    from .marginalizer import um_train
    from .model import train

    ds = load_dataset(cfg["data"], cfg["schema"], cfg["limit"] or None)
    config = _train_config(cfg)
    spec = MaskSpec.parse(cfg["mask"])
    fit = um_train if cfg["model"] == "um" else train
    result = fit(ds, spec, config, callback=lambda r, m: print(
        f"epoch {r['epoch']} train_loss {r['train_loss']:.5f} val_loglik {r['val_loglik']:.5f}", flush=True))
    ckpt_io.save(result, cfg["out"])
    print(f"saved {result.kind} checkpoint (best epoch {result.best_epoch}) to {cfg['out']}")
    return EXIT_OK


def cmd_impute(cfg: dict) -> int:
    _require(cfg, "checkpoint", "data", "out")
    from .evalharness import combine, impute_samples

    ck = ckpt_io.load(cfg["checkpoint"])
    schema = ck.model.schema
    x = load_for_model(cfg["data"], schema)
    b = np.isnan(x).astype(float)
    if cfg["hide_target"] and schema.target is not None:
        b[:, schema.target] = 1.0
        x[:, schema.target] = np.nan
    rng = np.random.default_rng(cfg["seed"])
    samples = impute_samples(ck, x, b, cfg["n"], rng) if len(x) else np.zeros((0, cfg["n"], len(schema)))
    combined = np.where(b > 0.5, combine(samples, schema), x) if len(x) else x
    _write_values(cfg["out"], schema, combined)
    print(f"wrote combined imputation of {len(x)} rows to {cfg['out']}")
    if cfg["samples_out"]:
        rows, k, D = samples.shape
        _write_values(cfg["samples_out"], schema, samples.reshape(rows * k, D),
                      {"row_id": np.repeat(np.arange(rows), k), "sample_id": np.tile(np.arange(k), rows)})
        print(f"wrote {rows * k} completions to {cfg['samples_out']}")
    return EXIT_OK


def cmd_sample(cfg: dict) -> int:
    _require(cfg, "checkpoint", "data", "out")
    ck = ckpt_io.load(cfg["checkpoint"])
    lines = emit_samples_csv(ck, cfg["data"], cfg["out"], cfg["n"], np.random.default_rng(cfg["seed"]))
    print(f"wrote {lines} samples to {cfg['out']}")
    return EXIT_OK


def _eval_masks(ck, x: np.ndarray, spec: str, rng) -> np.ndarray:
    sampler = make_sampler(spec or ck.mask, x.shape[1], ck.image_shape, rng=rng)
    return sampler(x, rng)


def _nll_rows(ck, x, b, estimator: str, samples: int, rng) -> np.ndarray:
    if ck.kind == "um":
        from .marginalizer import um_log_lik

        return -um_log_lik(ck.model, x, b, rng)
    from .model import log_lik_is, log_lik_mc

    fn = log_lik_is if estimator == "is" else log_lik_mc
    return -fn(ck.model, x, b, samples, rng)


def cmd_loglik(cfg: dict) -> int:
    _require(cfg, "checkpoint", "data")
    if cfg["estimator"] not in ("is", "mc"):
        raise UsageError("--estimator must be 'is' or 'mc'")
    ck = ckpt_io.load(cfg["checkpoint"])
    x = load_for_model(cfg["data"], ck.model.schema, limit=cfg["limit"] or None)
    rng = np.random.default_rng(cfg["seed"])
    b = _eval_masks(ck, x, cfg["mask"], rng)
    nll = _nll_rows(ck, x, b, cfg["estimator"], cfg["samples"], rng)
    se = nll.std() / np.sqrt(max(len(nll), 1))
    label = "chain" if ck.kind == "um" else f"{cfg['estimator'].upper()}-{cfg['samples']}"
    print(f"{label} NLL {nll.mean():.6f} +- {se:.6f} over {len(nll)} rows")
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_id", "nll"])
            writer.writerows([i, repr(float(v))] for i, v in enumerate(nll))
    return EXIT_OK


def cmd_eval_impute(cfg: dict) -> int:
    _require(cfg, "data", "schema")
    from .evalharness import imputation_benchmark, summarize, write_metric_report

    ds = load_dataset(cfg["data"], cfg["schema"])
    name = cfg["name"] or Path(cfg["data"]).stem
    records = imputation_benchmark(
        ds, name, _train_config(cfg), repeats=cfg["repeats"], mask_spec=cfg["mask"],
        drop_rate=cfg["drop_rate"], n_imputations=cfg["n"], model_kind=cfg["model"],
        downstream=not cfg["no_downstream"])
    for (metric, dataset), values in records.items():
        mean, std = summarize(values)
        print(f"{metric} {dataset} {mean:.4f} +- {std:.4f}")
    if cfg["report"]:
        write_metric_report(records, cfg["report"])
    return EXIT_OK


def cmd_eval_inpaint(cfg: dict) -> int:
    _require(cfg, "checkpoint", "data", "train_data")
    from .evalharness import best_of_k_psnr, naive_bayes_nll_rows, write_metric_report
    from .model import conditional_sample

    ck = ckpt_io.load(cfg["checkpoint"])
    if ck.kind != "vaeac":
        raise ValueError("eval-inpaint needs a vaeac checkpoint")
    schema = ck.model.schema
    x = load_for_model(cfg["data"], schema, limit=cfg["limit"] or None)
    train_x = load_for_model(cfg["train_data"], schema)
    rng = np.random.default_rng(cfg["seed"])
    b = _eval_masks(ck, x, cfg["mask"], rng)
    name = cfg["name"] or Path(cfg["data"]).stem
    S = cfg["samples"]
    records = {
        (f"IS-{S} NLL", name): list(_nll_rows(ck, x, b, "is", S, rng)),
        (f"MC-{S} NLL", name): list(_nll_rows(ck, x, b, "mc", S, rng)),
        ("NaiveBayes NLL", name): list(naive_bayes_nll_rows(train_x, x, b)),
    }
    k = cfg["psnr_k"]
    if k > 0:
        completions = conditional_sample(ck.model, x, b, k, rng, point=True)
        records[(f"best-of-{k} PSNR", name)] = [best_of_k_psnr(x[i], completions[i]) for i in range(len(x))]
    for (metric, _), values in records.items():
        values = np.asarray(values)
        print(f"{metric} {values.mean():.4f} +- {values.std() / np.sqrt(len(values)):.4f}")
    if cfg["report"]:
        write_metric_report(records, cfg["report"])
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    _require(cfg, "out")
    ds = data_mod.synth_mixture(cfg["n"], np.random.default_rng(cfg["seed"]), cfg["components"], cfg["component_std"])
    data_mod.write_csv(ds, cfg["out"])
    schema_out = cfg["schema_out"] or str(Path(cfg["out"]).with_suffix(".schema"))
    Path(schema_out).write_text(data_mod.schema_config_text(ds.schema), encoding="utf-8")
    if cfg["means_out"]:
        data_mod.write_csv(Dataset(ds.schema, ds.meta["component_means"]), cfg["means_out"])
    print(f"wrote {len(ds)} mixture points to {cfg['out']} (schema {schema_out})")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "impute": cmd_impute,
    "sample": cmd_sample,
    "loglik": cmd_loglik,
    "eval-impute": cmd_eval_impute,
    "eval-inpaint": cmd_eval_inpaint,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vaeac", description="Variational autoencoder with arbitrary conditioning")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value file; flags override it")
        return p

    p = command("prepare", "convert, split and corrupt a dataset")
    _opt(p, "--data", None, str, "input CSV or IDX image file")
    _opt(p, "--schema", None, str, "schema config for CSV input")
    _opt(p, "--limit", 0, int, "keep the first N rows (0 = all)")
    _opt(p, "--train-fraction", 1.0, float, "split into train/test when below 1")
    _opt(p, "--drop-rate", 0.0, float, "fraction of non-target cells to remove")
    _opt(p, "--out", None, str, "output CSV (no split)")
    _opt(p, "--out-train", None, str, "training CSV (with split)")
    _opt(p, "--out-test", None, str, "test CSV (with split)")
    _opt(p, "--schema-out", None, str, "schema config to write")
    _opt(p, "--seed", 0, int, "random seed")

    p = command("train", "train a VAEAC or Universal Marginalizer model")
    _opt(p, "--data", None, str, "training CSV or IDX file")
    _opt(p, "--schema", None, str, "schema config for CSV input")
    _opt(p, "--limit", 0, int, "keep the first N rows (0 = all)")
    _opt(p, "--model", "vaeac", str, "vaeac or um", choices=["vaeac", "um"])
    _opt(p, "--mask", "bernoulli:0.2", str, "training mask spec")
    _opt(p, "--out", None, str, "checkpoint path")
    _train_options(p)

    p = command("impute", "multiple imputation of the empty cells of a CSV")
    _opt(p, "--checkpoint", None, str, "trained checkpoint")
    _opt(p, "--data", None, str, "CSV with empty cells to fill")
    _opt(p, "--n", 10, int, "completions per row")
    _opt(p, "--out", None, str, "combined imputation CSV")
    _opt(p, "--samples-out", None, str, "all completions as row_id, sample_id, features")
    _opt(p, "--hide-target", False, bool, "treat the target column as unobserved",
         action="store_const", const="true")
    _opt(p, "--seed", 0, int, "random seed")

    p = command("sample", "conditional samples for plotting")
    _opt(p, "--checkpoint", None, str, "trained checkpoint")
    _opt(p, "--data", None, str, "conditioning CSV; empty cells are generated")
    _opt(p, "--n", 10, int, "samples per row")
    _opt(p, "--out", None, str, "samples CSV")
    _opt(p, "--seed", 0, int, "random seed")

    p = command("loglik", "estimate conditional negative log-likelihood")
    _opt(p, "--checkpoint", None, str, "trained checkpoint")
    _opt(p, "--data", None, str, "complete test CSV or IDX file")
    _opt(p, "--limit", 0, int, "keep the first N rows (0 = all)")
    _opt(p, "--mask", "", str, "mask spec (default: the training mask)")
    _opt(p, "--estimator", "is", str, "is or mc")
    _opt(p, "--samples", 100, int, "latent samples per row")
    _opt(p, "--out", None, str, "per-row NLL CSV")
    _opt(p, "--seed", 0, int, "random seed")

    p = command("eval-impute", "tabular imputation benchmark (NRMSE, PFC, downstream)")
    _opt(p, "--data", None, str, "complete CSV")
    _opt(p, "--schema", None, str, "schema config")
    _opt(p, "--name", None, str, "dataset name in the report")
    _opt(p, "--model", "vaeac", str, "vaeac or um", choices=["vaeac", "um"])
    _opt(p, "--mask", "bernoulli:0.2", str, "training mask spec")
    _opt(p, "--repeats", 5, int, "train/test splits")
    _opt(p, "--n", 10, int, "imputations per row")
    _opt(p, "--drop-rate", 0.5, float, "fraction of cells removed")
    _opt(p, "--no-downstream", False, bool, "skip the downstream regression",
         action="store_const", const="true")
    _opt(p, "--report", None, str, "metric report CSV")
    _train_options(p)

    p = command("eval-inpaint", "inpainting NLL (IS, MC, Naive Bayes) and best-of-k PSNR")
    _opt(p, "--checkpoint", None, str, "trained checkpoint")
    _opt(p, "--data", None, str, "test images (CSV or IDX)")
    _opt(p, "--train-data", None, str, "training images for the Naive Bayes baseline")
    _opt(p, "--limit", 0, int, "keep the first N test rows (0 = all)")
    _opt(p, "--mask", "", str, "mask spec (default: the training mask)")
    _opt(p, "--samples", 100, int, "latent samples for the NLL estimates")
    _opt(p, "--psnr-k", 10, int, "inpaintings per image for best-of-k PSNR (0 = skip)")
    _opt(p, "--name", None, str, "dataset name in the report")
    _opt(p, "--report", None, str, "metric report CSV")
    _opt(p, "--seed", 0, int, "random seed")

    p = command("synth", "write the 8-component Gaussian mixture dataset")
    _opt(p, "--n", 100_000, int, "number of points")
    _opt(p, "--components", 8, int, "mixture components")
    _opt(p, "--component-std", 0.1, float, "per-axis std of each component")
    _opt(p, "--out", None, str, "output CSV")
    _opt(p, "--schema-out", None, str, "schema config to write")
    _opt(p, "--means-out", None, str, "CSV of the component means")
    _opt(p, "--seed", 0, int, "random seed")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"vaeac {getattr(args, 'command', '')}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    _echo(args.command, cfg)
    try:
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"vaeac {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"vaeac {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
