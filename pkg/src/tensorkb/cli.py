"""Command-line interface: data preparation, training, evaluation, grid
search and verification.

Subcommands
-----------
prepare-data   parse TSV triple files into binary caches + vocabularies
train          run one training configuration, write checkpoint and records
eval           rank a checkpoint on a split, print metrics
grid           run a Cartesian hyperparameter grid, resumable
verify         run the mathematical oracles and report pass/fail

Configs are JSON or TOML. Exit codes: 0 success, 1 validation error,
2 runtime failure, 3 verification oracle failure.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .datasets import (
    DataError,
    FilterIndex,
    augment_reciprocal,
    build_filter_index,
    load_store,
    load_triples,
    relation_type_table,
    save_store,
)
from .evaluation import evaluate
from .models import load_checkpoint, save_checkpoint
from .oracles import run_verification
from .training import ConfigError, TrainConfig, TrainingDivergedError, fit

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

SPLITS = ("train", "valid", "test")
_SOURCE_NAMES = {
    "train": ("train.txt", "train.tsv", "train"),
    "valid": ("valid.txt", "valid.tsv", "valid"),
    "test": ("test.txt", "test.tsv", "test"),
}


class CliError(Exception):
    """Validation-level CLI failure (exit code 1)."""


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _load_config_file(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    raise CliError(f"config must be .json or .toml, got {path.name}")


def _find_sources(data_dir):
    data_dir = Path(data_dir)
    found = {}
    missing = []
    for split in SPLITS:
        for name in _SOURCE_NAMES[split]:
            candidate = data_dir / name
            if candidate.exists():
                found[split] = candidate
                break
        else:
            missing.append(f"{split}: tried " + ", ".join(_SOURCE_NAMES[split]))
    if missing:
        raise CliError(
            f"missing triple files under {data_dir}:\n  "
            + "\n  ".join(missing)
        )
    return found


def cmd_prepare_data(args):
    sources = _find_sources(args.data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {split: _sha256(path) for split, path in sources.items()}

    meta_path = out / "meta.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError:
            meta = {}
        if meta.get("source_hashes") == hashes:
            print(f"cache at {out} is up to date (source hashes match)")
            return EXIT_OK

    train, vocab = load_triples(sources["train"], split_tag="train")
    valid, _ = load_triples(sources["valid"], vocab=vocab, split_tag="valid")
    test, _ = load_triples(sources["test"], vocab=vocab, split_tag="test")

    ent_vocab, pred_vocab = vocab
    save_store(train, out / "train.kbc")
    save_store(valid, out / "valid.kbc")
    save_store(test, out / "test.kbc")
    ent_vocab.save(out / "entities.txt")
    pred_vocab.save(out / "predicates.txt")
    filter_index = build_filter_index([train, valid, test], reciprocal=True)
    filter_index.save(out / "filter.npz")
    meta = {
        "n_entities": train.n_entities,
        "n_predicates": train.n_predicates,
        "counts": {"train": len(train), "valid": len(valid), "test": len(test)},
        "source_hashes": hashes,
        "version": __version__,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(
        f"prepared {out}: N={train.n_entities} P={train.n_predicates} "
        f"triples train/valid/test = {len(train)}/{len(valid)}/{len(test)}"
    )
    return EXIT_OK


def _load_cache(data_dir):
    data_dir = Path(data_dir)
    expected = [data_dir / f"{s}.kbc" for s in SPLITS]
    missing = [str(p) for p in expected if not p.exists()]
    if missing:
        raise CliError(
            "prepared cache incomplete; missing: " + ", ".join(missing)
            + " (run prepare-data first)"
        )
    stores = {s: load_store(data_dir / f"{s}.kbc", split_tag=s) for s in SPLITS}
    filter_path = data_dir / "filter.npz"
    if filter_path.exists():
        filter_index = FilterIndex.load(filter_path)
    else:
        filter_index = build_filter_index(list(stores.values()), reciprocal=True)
    return stores, filter_index


def _run_training(config, stores, filter_index, out_dir, data_hashes):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = stores["train"]
    if config.formulation == "reciprocal":
        train = augment_reciprocal(train)

    t0 = time.perf_counter()
    epoch_t = [t0]

    def callback(point):
        epoch_t.append(time.perf_counter())
        mrr = "" if point.valid_mrr is None else f" valid_mrr={point.valid_mrr:.4f}"
        print(
            f"epoch {point.epoch}/{config.epochs} loss={point.train_loss:.4f}"
            f"{mrr} ({epoch_t[-1] - epoch_t[-2]:.1f}s)",
            flush=True,
        )

    model, history = fit(
        config, train, valid=stores["valid"], filter_index=filter_index,
        callback=callback,
    )
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    test_result = evaluate(
        model, stores["test"], filter_index, mode=config.formulation
    )
    eval_seconds = time.perf_counter() - t0

    checkpoint = out_dir / "checkpoint.kbm"
    save_checkpoint(model, checkpoint, metadata={"config": config.to_dict()})
    (out_dir / "history.csv").write_text(history.to_csv())
    record = {
        "config": config.to_dict(),
        "config_hash": _config_hash(config.to_dict()),
        "data_hashes": data_hashes,
        "history": history.to_dict(),
        "test": test_result.to_dict(),
        "durations": {"train_s": train_seconds, "test_eval_s": eval_seconds},
        "version": __version__,
        "status": "ok",
    }
    (out_dir / "run.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n"
    )
    return record


def cmd_train(args):
    config = TrainConfig.from_dict(_load_config_file(args.config))
    stores, filter_index = _load_cache(args.data)
    data_hashes = {
        s: _sha256(Path(args.data) / f"{s}.kbc") for s in SPLITS
    }
    record = _run_training(config, stores, filter_index, args.out, data_hashes)
    best = record["history"]["best_valid_mrr"]
    print(
        f"done: best valid MRR = {best if best is not None else 'n/a'}, "
        f"test MRR = {record['test']['mrr']:.4f}, "
        f"checkpoint at {Path(args.out) / 'checkpoint.kbm'}"
    )
    return EXIT_OK


def cmd_eval(args):
    stores, filter_index = _load_cache(args.data)
    store = stores[args.split]
    model, metadata = load_checkpoint(args.checkpoint)
    if model.n_entities != store.n_entities:
        raise CliError(
            f"checkpoint has {model.n_entities} entities but dataset has "
            f"{store.n_entities}"
        )
    n_raw = store.n_predicates
    if model.n_predicates == 2 * n_raw:
        mode = "reciprocal"
    elif model.n_predicates == n_raw:
        mode = "standard"
    else:
        raise CliError(
            f"checkpoint has {model.n_predicates} predicates; dataset "
            f"requires {n_raw} (standard) or {2 * n_raw} (reciprocal)"
        )
    type_table = None
    if args.by_type:
        type_table = relation_type_table(augment_reciprocal(stores["train"]))
    result = evaluate(
        model, store, filter_index, mode=mode, type_table=type_table,
        filtered=not args.unfiltered,
    )
    if args.json:
        print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    else:
        print(result.table())
    if args.out is not None:
        Path(args.out).write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    return EXIT_OK


_GRID_AXES = (
    ("model_variants", "variant"),
    ("ranks", "rank"),
    ("formulations", "formulation"),
    ("regularizers", "regularizer"),
    ("reg_weights", "weight"),
    ("learning_rates", "learning_rate"),
    ("batch_sizes", "batch_size"),
)

_GRID_DEFAULTS = {
    "model_variants": ["complex"],
    "ranks": [100],
    "formulations": ["reciprocal"],
    "regularizers": ["n3"],
    "reg_weights": [0.0],
    "learning_rates": [0.1],
    "batch_sizes": [100],
}


def _grid_cells(spec):
    for key in _GRID_DEFAULTS:
        values = spec.get(key, _GRID_DEFAULTS[key])
        if not isinstance(values, list) or not values:
            raise CliError(f"grid field {key!r} must be a nonempty list")
    axes = [spec.get(key, _GRID_DEFAULTS[key]) for key, _ in _GRID_AXES]
    for combo in itertools.product(*axes):
        values = dict(zip((name for _, name in _GRID_AXES), combo))
        yield TrainConfig.from_dict(
            {
                "model": {
                    "variant": values["variant"],
                    "rank": values["rank"],
                    "init_scale": spec.get("init_scale", 1e-3),
                    "seed": spec.get("seed", 0),
                    "dtype": spec.get("dtype", "float64"),
                },
                "formulation": values["formulation"],
                "regularizer": {
                    "variant": values["regularizer"],
                    "weight": values["weight"],
                },
                "batch_size": values["batch_size"],
                "epochs": spec.get("epochs", 20),
                "eval_every": spec.get("eval_every", 1),
                "learning_rate": values["learning_rate"],
                "seed": spec.get("seed", 0),
                "valid_cap": spec.get("valid_cap"),
            }
        )


def cmd_grid(args):
    spec = _load_config_file(args.grid)
    cells = list(_grid_cells(spec))
    print(f"grid of {len(cells)} cells")
    stores, filter_index = _load_cache(args.data)
    data_hashes = {s: _sha256(Path(args.data) / f"{s}.kbc") for s in SPLITS}
    out = Path(args.out)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    n_failed = 0
    for idx, config in enumerate(cells):
        chash = _config_hash(config.to_dict())
        cell_dir = runs_dir / chash
        record_path = cell_dir / "run.json"
        if record_path.exists():
            record = json.loads(record_path.read_text())
            print(f"[{idx + 1}/{len(cells)}] {chash} cached")
        else:
            print(f"[{idx + 1}/{len(cells)}] {chash} running")
            try:
                record = _run_training(
                    config, stores, filter_index, cell_dir, data_hashes
                )
            except (TrainingDivergedError, FloatingPointError) as exc:
                cell_dir.mkdir(parents=True, exist_ok=True)
                record = {
                    "config": config.to_dict(),
                    "config_hash": chash,
                    "status": "failed",
                    "error": str(exc),
                }
                record_path.write_text(
                    json.dumps(record, indent=2, sort_keys=True) + "\n"
                )
        if record.get("status") != "ok":
            n_failed += 1
            continue
        cfg = record["config"]
        rows.append(
            {
                "hash": record["config_hash"],
                "variant": cfg["model"]["variant"],
                "rank": cfg["model"]["rank"],
                "formulation": cfg["formulation"],
                "regularizer": cfg["regularizer"]["variant"],
                "weight": cfg["regularizer"]["weight"],
                "lr": cfg["learning_rate"],
                "batch": cfg["batch_size"],
                "valid_mrr": record["history"]["best_valid_mrr"],
                "test_mrr": record["test"]["mrr"],
            }
        )

    rows.sort(key=lambda r: -(r["valid_mrr"] if r["valid_mrr"] is not None else -1))
    header = list(rows[0]) if rows else [
        "hash", "variant", "rank", "formulation", "regularizer", "weight",
        "lr", "batch", "valid_mrr", "test_mrr",
    ]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[h]) for h in header))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    if rows:
        best = rows[0]
        print(
            f"best cell {best['hash']}: valid MRR={best['valid_mrr']:.4f} "
            f"test MRR={best['test_mrr']:.4f} "
            f"({best['variant']} {best['formulation']} {best['regularizer']} "
            f"weight={best['weight']} lr={best['lr']} batch={best['batch']})"
        )
    if n_failed:
        print(f"{n_failed} cell(s) failed; see their run.json for details")
    return EXIT_OK


def cmd_verify(args):
    report = run_verification(seed=args.seed, restarts=args.restarts)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.table())
    return EXIT_OK if report.passed else EXIT_VERIFY


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tensorkb",
        description="Knowledge-base completion by tensor factorization",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="parse TSV triples into a cache")
    p.add_argument("--data-dir", required=True,
                   help="directory with train/valid/test TSV files")
    p.add_argument("--out", required=True, help="cache output directory")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True, help="JSON or TOML train config")
    p.add_argument("--data", required=True, help="prepared cache directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared cache directory")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--by-type", action="store_true",
                   help="add per relation-category MRR breakdown")
    p.add_argument("--unfiltered", action="store_true",
                   help="raw (unfiltered) metrics")
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--out", default=None, help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="run a hyperparameter grid (resumable)")
    p.add_argument("--grid", required=True, help="JSON or TOML grid spec")
    p.add_argument("--data", required=True, help="prepared cache directory")
    p.add_argument("--out", required=True, help="grid output directory")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", help="run the mathematical oracles")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=50)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDivergedError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
