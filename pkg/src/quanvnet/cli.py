"""Command-line pipeline: preprocess, train, eval, ablate, simulate.

Stages communicate through files. ``preprocess`` writes train/test feature
caches whose headers carry a digest of the preprocessing config; ``train``
refuses caches whose digest does not match the recorded run metadata.
Every output directory gets a ``run.json`` written last: it both marks the
stage as complete and records everything needed to reproduce it (flags,
seeds, digests, versions). No artifact embeds a timestamp, so reruns with
the same seed are byte-identical.

Seed derivation: one ``--seed`` flag feeds every random draw through
(seed, stage, index) tuples; see the rng module.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, cache, data, metrics, nn, plots, quanv
from .errors import ConfigError, QuanvNetError
from .qsim import dump_state_csv, run_circuit
from .rng import RNG_ALGORITHM, derive_seed

TRAIN_CACHE = "train.qvc"
TEST_CACHE = "test.qvc"
RUN_FILE = "run.json"

_ENCODINGS = {"ry": "RY", "rx": "RX"}
_DECODES = {"z": "Z_EXPECTATION", "p0": "PROBABILITY_OF_ZERO"}


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_run_json(out_dir: str, stage: str, config: dict, derived: dict) -> None:
    payload = {
        "stage": stage,
        "status": "complete",
        "package_version": __version__,
        "numpy_version": np.__version__,
        "rng": {
            "algorithm": RNG_ALGORITHM,
            "derivation": "SeedSequence over (seed, stage, index) tuples",
        },
        "config": config,
        "derived": derived,
    }
    _atomic_write(os.path.join(out_dir, RUN_FILE), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_run_json(dir_path: str) -> dict:
    path = os.path.join(dir_path, RUN_FILE)
    if not os.path.exists(path):
        raise ConfigError(f"no {RUN_FILE} in {dir_path}; directory is not a completed run")
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _quanv_config_from(args) -> quanv.QuanvConfig:
    circuit_seed = args.circuit_seed if args.circuit_seed is not None else args.seed
    return quanv.QuanvConfig(
        encoding_gate=_ENCODINGS[args.encoding],
        shots=args.shots,
        circuit_seed=circuit_seed,
        circuit_depth=args.depth,
        angle_scale=args.angle_scale,
        decode=_DECODES[args.decode],
    )


def _records_to_arrays(records: list[cache.CacheRecord]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    x = np.stack([r.features for r in records]).astype(np.float64)
    y = np.array([r.label for r in records], dtype=np.int64)
    ids = [r.image_id for r in records]
    return x, y, ids


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    config = _quanv_config_from(args)
    classes = data.DATASET_CLASSES[args.dataset]
    entries = data.parse_manifest(args.manifest)
    train_entries, test_entries, counts = data.assemble_dataset(entries, args.dataset)

    summaries = {}
    for split, split_entries in (("train", train_entries), ("test", test_entries)):
        cache_path = os.path.join(args.out, TRAIN_CACHE if split == "train" else TEST_CACHE)
        summaries[split] = quanv.preprocess_dataset(
            split_entries,
            config,
            cache_path,
            class_names=classes,
            divisor=args.divisor,
            base_seed=derive_seed(args.seed, "shots", split),
            jobs=args.jobs,
        )

    summary = {
        "dataset": args.dataset,
        "classes": list(classes),
        "records": {s: summaries[s].records for s in summaries},
        "per_class": {s: summaries[s].per_class for s in summaries},
        "checksums": {s: summaries[s].checksum for s in summaries},
        "config_digest": summaries["train"].config_digest,
        "count_audit": data.count_audit(args.dataset, counts),
    }
    _atomic_write(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    _write_run_json(
        args.out,
        "preprocess",
        {
            "dataset": args.dataset,
            "manifest": os.path.abspath(args.manifest),
            "encoding": args.encoding,
            "shots": args.shots,
            "circuit_seed": config.circuit_seed,
            "depth": args.depth,
            "decode": args.decode,
            "angle_scale": args.angle_scale,
            "divisor": args.divisor,
            "seed": args.seed,
            "jobs": args.jobs,
        },
        summary,
    )
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_verified_caches(cache_dir: str) -> tuple[dict, tuple, tuple, list[str]]:
    run = _read_run_json(cache_dir)
    expected = run["derived"]["config_digest"]
    caches = {}
    for name in (TRAIN_CACHE, TEST_CACHE):
        path = os.path.join(cache_dir, name)
        if not os.path.exists(path):
            raise ConfigError(f"missing cache file {path}")
        records, header = cache.read_cache(path)
        if header.config_digest.hex() != expected:
            raise ConfigError(
                f"stale cache {path}: header digest {header.config_digest.hex()[:12]}... "
                f"does not match run metadata {expected[:12]}...")
        caches[name] = records
    classes = run["derived"]["classes"]
    return run, _records_to_arrays(caches[TRAIN_CACHE]), _records_to_arrays(caches[TEST_CACHE]), classes


def _epoch_log_csv(log: list[nn.EpochStats]) -> str:
    lines = ["epoch,train_loss,train_acc,test_loss,test_acc"]
    for row in log:
        lines.append(
            f"{row.epoch},{row.train_loss!r},{row.train_acc!r},{row.test_loss!r},{row.test_acc!r}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    cache_run, (train_x, train_y, _), (test_x, test_y, _), classes = _load_verified_caches(args.cache)
    model = nn.Network(n_classes=len(classes), seed=args.seed)
    log = nn.train(
        model,
        train_x,
        train_y,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        test_x=test_x,
        test_y=test_y,
    )
    model_path = os.path.join(args.out, "model.qvm")
    nn.save_model(model, model_path)
    _atomic_write(os.path.join(args.out, "epochs.csv"), _epoch_log_csv(log))
    if log:
        chart = plots.learning_curve_chart(
            [r.epoch for r in log],
            {
                "train accuracy": [r.train_acc for r in log],
                "test accuracy": [r.test_acc for r in log],
                "train loss": [r.train_loss for r in log],
                "test loss": [r.test_loss for r in log],
            },
            title="learning curves",
        )
        _atomic_write(os.path.join(args.out, "learning_curve.svg"), chart)
    final = log[-1] if log else None
    _write_run_json(
        args.out,
        "train",
        {
            "cache": os.path.abspath(args.cache),
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "seed": args.seed,
        },
        {
            "config_digest": cache_run["derived"]["config_digest"],
            "classes": classes,
            "parameter_count": model.parameter_count(),
            "final_train_acc": final.train_acc if final else None,
            "final_test_acc": final.test_acc if final else None,
        },
    )
    if final:
        print(f"trained {args.epochs} epochs: train_acc={final.train_acc:.4f} "
              f"test_acc={final.test_acc:.4f}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    cache_run = _read_run_json(args.cache)
    classes = cache_run["derived"]["classes"]
    dataset = cache_run["config"]["dataset"]
    records, header = cache.read_cache(os.path.join(args.cache, TEST_CACHE))
    if header.config_digest.hex() != cache_run["derived"]["config_digest"]:
        raise ConfigError("stale test cache: digest mismatch with run metadata")
    model = nn.load_model(args.model)
    if model.n_classes != len(classes):
        raise ConfigError(
            f"model has {model.n_classes} classes but dataset {dataset} has {len(classes)}")
    x, y, _ = _records_to_arrays(records)

    positive = args.positive_class or data.DEFAULT_POSITIVE.get(dataset)
    if positive is not None and positive not in classes:
        raise ConfigError(f"positive class {positive!r} not in {classes}")
    probas = nn.predict_proba(model, x)
    preds = probas.argmax(axis=1)
    cm = metrics.confusion(y, preds, len(classes))
    report = metrics.build_report(cm, y, probas, classes, positive_class=positive)
    curves = metrics.roc_curves(cm, y, probas)
    named_curves = {classes[i]: c for i, c in curves.items()}

    _atomic_write(os.path.join(args.out, "report.json"), metrics.report_to_json(report))
    _atomic_write(os.path.join(args.out, "report.csv"), metrics.report_to_csv(report))
    _atomic_write(os.path.join(args.out, "confusion.csv"), metrics.confusion_to_csv(report))
    _atomic_write(os.path.join(args.out, "roc.csv"), metrics.roc_to_csv(named_curves))
    _atomic_write(
        os.path.join(args.out, "roc.svg"),
        plots.roc_chart({n: (c.fpr.tolist(), c.tpr.tolist(), c.auc) for n, c in named_curves.items()}),
    )
    _write_run_json(
        args.out,
        "eval",
        {
            "model": os.path.abspath(args.model),
            "cache": os.path.abspath(args.cache),
            "positive_class": positive,
        },
        {
            "config_digest": cache_run["derived"]["config_digest"],
            "classes": classes,
            "accuracy": report.accuracy,
        },
    )
    print(metrics.report_to_csv(report), end="")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def cmd_ablate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    shots_list = [int(s) for s in args.shots_list.split(",")]
    rows = []
    for encoding in ("ry", "rx"):
        for shots in shots_list:
            sub = os.path.join(args.out, f"{encoding}_{shots}")
            pre_dir, train_dir, eval_dir = (os.path.join(sub, d) for d in ("pre", "train", "eval"))
            combo = argparse.Namespace(**vars(args))
            combo.encoding = encoding
            combo.shots = shots
            combo.out = pre_dir
            cmd_preprocess(combo)

            train_args = argparse.Namespace(
                cache=pre_dir, out=train_dir,
                epochs=args.epochs, batch=args.batch, lr=args.lr, seed=args.seed)
            cmd_train(train_args)

            eval_args = argparse.Namespace(
                model=os.path.join(train_dir, "model.qvm"), cache=pre_dir,
                positive_class=args.positive_class, out=eval_dir)
            cmd_eval(eval_args)

            with open(os.path.join(eval_dir, "report.json"), encoding="utf-8") as f:
                report = json.load(f)
            positive = report["positive_class"]
            m = report["per_class"][positive]
            rows.append([
                encoding, str(shots),
                f"{metrics.table_percent(report['accuracy']):.1f}",
                f"{metrics.table_percent(m['sensitivity']):.1f}",
                f"{metrics.table_percent(m['specificity']):.1f}",
                f"{metrics.table_percent(m['precision']):.1f}",
                f"{metrics.table_percent(m['f1']):.1f}",
            ])
    csv_text = "gate,shots,acc,sns,spc,prc,f1\n" + "\n".join(",".join(r) for r in rows) + "\n"
    _atomic_write(os.path.join(args.out, "ablation.csv"), csv_text)
    _write_run_json(
        args.out,
        "ablate",
        {
            "dataset": args.dataset,
            "manifest": os.path.abspath(args.manifest),
            "shots_list": shots_list,
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "seed": args.seed,
        },
        {"rows": len(rows)},
    )
    print(csv_text, end="")
    return 0


# ---------------------------------------------------------------------------
# simulate (debug)
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    circuit_seed = args.circuit_seed if args.circuit_seed is not None else args.seed
    circuit = quanv.generate_random_circuit(circuit_seed, args.depth)
    state = run_circuit(circuit)
    _atomic_write(os.path.join(args.out, "state.csv"), dump_state_csv(state))
    _write_run_json(
        args.out,
        "simulate",
        {"circuit_seed": circuit_seed, "depth": args.depth, "seed": args.seed},
        {"n_qubits": circuit.n_qubits, "ops": len(circuit.ops)},
    )
    print(f"wrote statevector of {circuit.n_qubits} qubits ({len(circuit.ops)} ops) "
          f"to {os.path.join(args.out, 'state.csv')}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_quanv_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoding", choices=sorted(_ENCODINGS), default="ry")
    p.add_argument("--shots", type=int, default=0, help="0 = analytic expectations")
    p.add_argument("--circuit-seed", dest="circuit_seed", type=int, default=None,
                   help="random-circuit seed (defaults to --seed)")
    p.add_argument("--depth", type=int, default=1, help="random-circuit layers")
    p.add_argument("--decode", choices=sorted(_DECODES), default="z")
    p.add_argument("--angle-scale", dest="angle_scale", type=float, default=float(np.pi))
    p.add_argument("--divisor", type=float, default=255.0, help="pixel normalization divisor")
    p.add_argument("--jobs", type=int, default=1, help="parallel preprocessing workers")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quanvnet",
        description="Quanvolutional preprocessing + CNN classification pipeline",
    )
    parser.add_argument("--version", action="version", version=f"quanvnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="quanvolve a dataset into feature caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", choices=sorted(data.DATASET_CLASSES), required=True)
    _add_quanv_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the classifier on a preprocessed cache")
    p.add_argument("--cache", required=True, help="directory produced by preprocess")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test cache")
    p.add_argument("--model", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--positive-class", dest="positive_class", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="encoding x shots grid: preprocess+train+eval each")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", choices=sorted(data.DATASET_CLASSES), required=True)
    p.add_argument("--shots-list", dest="shots_list", default="500,1000")
    _add_quanv_flags(p)
    _add_train_flags(p)
    p.add_argument("--positive-class", dest="positive_class", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("simulate", help="debug: dump a random circuit's statevector as CSV")
    p.add_argument("--circuit-seed", dest="circuit_seed", type=int, default=None)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QuanvNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
